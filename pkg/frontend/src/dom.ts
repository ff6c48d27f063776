import { RatingApp, SCORE_LABELS, TaskView, View } from './app.js';
import { Progress } from './types.js';

/** Browser adapter: audio player, a labeled 1-5 radio scale, submit. */
export class DomView implements View {
    private readonly root: HTMLElement;
    private app: RatingApp | null = null;
    private currentAudioUrl: string | null = null;

    constructor(root: HTMLElement) {
        this.root = root;
    }

    attach(app: RatingApp): void {
        this.app = app;
    }

    showTask(view: TaskView): void {
        const sameClip = this.currentAudioUrl === view.audioUrl;
        if (!sameClip) {
            this.root.innerHTML = '';
            this.root.appendChild(this.buildTask(view));
            this.currentAudioUrl = view.audioUrl;
        }
        this.syncControls(view);
    }

    showDone(progress: Progress | null): void {
        this.currentAudioUrl = null;
        const n = progress ? `${progress.done}` : 'all';
        this.root.innerHTML = `
            <section class="terminal">
              <h2>No more tasks</h2>
              <p>Thank you! You rated ${n} clips. You can close this page.</p>
            </section>`;
    }

    showBlocked(message: string): void {
        this.currentAudioUrl = null;
        this.root.innerHTML = `
            <section class="terminal blocked">
              <h2>Not eligible</h2>
              <p></p>
            </section>`;
        this.root.querySelector('p')!.textContent = message;
    }

    showError(message: string): void {
        this.currentAudioUrl = null;
        this.root.innerHTML = `
            <section class="terminal error">
              <h2>Connection problem</h2>
              <p></p>
              <button id="retry">Try again</button>
            </section>`;
        this.root.querySelector('p')!.textContent = message;
        this.root.querySelector<HTMLButtonElement>('#retry')!.addEventListener('click', () => {
            void this.app?.retry();
        });
    }

    private buildTask(view: TaskView): HTMLElement {
        const section = document.createElement('section');
        section.className = 'task';

        const progress = document.createElement('p');
        progress.className = 'progress';
        progress.textContent = `Task ${view.progress.done + 1} of ${view.progress.total}`;
        section.appendChild(progress);

        const audio = document.createElement('audio');
        audio.controls = true;
        audio.src = view.audioUrl;
        audio.setAttribute('aria-label', 'clip to rate');
        audio.addEventListener('play', () => this.app?.notifyPlaybackStarted());
        section.appendChild(audio);

        const prompt = document.createElement('p');
        prompt.textContent = 'Listen to the clip, then rate its overall quality.';
        section.appendChild(prompt);

        const scale = document.createElement('fieldset');
        scale.className = 'scale';
        const legend = document.createElement('legend');
        legend.textContent = 'Overall quality';
        scale.appendChild(legend);
        for (const [score, label] of SCORE_LABELS) {
            const id = `score-${score}`;
            const wrapper = document.createElement('label');
            wrapper.htmlFor = id;
            const radio = document.createElement('input');
            radio.type = 'radio';
            radio.name = 'score';
            radio.id = id;
            radio.value = String(score);
            radio.addEventListener('change', () => this.app?.selectScore(score));
            wrapper.appendChild(radio);
            wrapper.appendChild(document.createTextNode(` ${score} – ${label}`));
            scale.appendChild(wrapper);
        }
        section.appendChild(scale);

        const submit = document.createElement('button');
        submit.id = 'submit';
        submit.textContent = 'Submit rating';
        submit.addEventListener('click', () => {
            void this.app?.submit();
        });
        section.appendChild(submit);

        return section;
    }

    private syncControls(view: TaskView): void {
        const submit = this.root.querySelector<HTMLButtonElement>('#submit');
        if (submit) {
            submit.disabled = !view.submitEnabled;
            submit.textContent = view.submitting ? 'Submitting…' : 'Submit rating';
        }
        for (const radio of this.root.querySelectorAll<HTMLInputElement>('input[name=score]')) {
            radio.checked = Number(radio.value) === view.selectedScore;
            radio.disabled = view.submitting;
        }
    }
}
