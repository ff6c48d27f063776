import { Progress, RatingService, ServiceError, TaskPayload } from './types.js';

export type Screen = 'loading' | 'task' | 'done' | 'blocked' | 'error';

/** Everything the view needs to render the current task. */
export interface TaskView {
    taskId: string;
    audioUrl: string;
    progress: Progress;
    selectedScore: number | null;
    playbackStarted: boolean;
    submitEnabled: boolean;
    submitting: boolean;
}

/** Rendering surface; the browser adapter implements it with real DOM,
 * tests with a recorder. */
export interface View {
    showTask(view: TaskView): void;
    showDone(progress: Progress | null): void;
    showBlocked(message: string): void;
    showError(message: string): void;
}

export const SCORE_LABELS: ReadonlyMap<number, string> = new Map([
    [1, 'Bad'],
    [2, 'Poor'],
    [3, 'Fair'],
    [4, 'Good'],
    [5, 'Excellent'],
]);

/**
 * One rater's session: fetch a task, gate submission on playback having
 * started and a score being selected, submit exactly once, advance.
 *
 * Every POST corresponds to one accepted submit() call on one fetched
 * task; double-clicks and repeat calls while a request is in flight are
 * dropped. A DuplicateSubmission answer advances without re-posting.
 */
export class RatingApp {
    readonly raterId: string;
    private readonly service: RatingService;
    private readonly view: View;

    private screen: Screen = 'loading';
    private task: TaskPayload | null = null;
    private progress: Progress | null = null;
    private selectedScore: number | null = null;
    private playbackStarted = false;
    private submitting = false;

    constructor(service: RatingService, view: View, raterId: string) {
        this.service = service;
        this.view = view;
        this.raterId = raterId;
    }

    get currentScreen(): Screen {
        return this.screen;
    }

    async start(): Promise<void> {
        await this.fetchNext();
    }

    /** Retry after a network-error screen. */
    async retry(): Promise<void> {
        await this.fetchNext();
    }

    selectScore(score: number): void {
        if (this.screen !== 'task' || this.submitting) {
            return;
        }
        if (!SCORE_LABELS.has(score)) {
            return;
        }
        this.selectedScore = score;
        this.renderTask();
    }

    notifyPlaybackStarted(): void {
        if (this.screen !== 'task' || this.playbackStarted) {
            return;
        }
        this.playbackStarted = true;
        this.renderTask();
    }

    get submitEnabled(): boolean {
        return (
            this.screen === 'task' &&
            !this.submitting &&
            this.playbackStarted &&
            this.selectedScore !== null
        );
    }

    async submit(): Promise<void> {
        if (!this.submitEnabled || this.task === null || this.selectedScore === null) {
            return;
        }
        this.submitting = true;
        this.renderTask();
        try {
            await this.service.submitScore(this.raterId, this.task.task_id, this.selectedScore);
        } catch (err) {
            this.submitting = false;
            if (err instanceof ServiceError && err.code === 'DuplicateSubmission') {
                // already recorded server-side; just move on
                await this.fetchNext();
                return;
            }
            this.fail(err);
            return;
        }
        this.submitting = false;
        await this.fetchNext();
    }

    private async fetchNext(): Promise<void> {
        this.screen = 'loading';
        this.task = null;
        this.selectedScore = null;
        this.playbackStarted = false;
        this.submitting = false;
        let resp;
        try {
            resp = await this.service.nextTask(this.raterId);
        } catch (err) {
            this.fail(err);
            return;
        }
        this.progress = resp.progress;
        if (resp.task === null) {
            this.screen = 'done';
            this.view.showDone(this.progress);
            return;
        }
        this.task = resp.task;
        this.screen = 'task';
        this.renderTask();
    }

    private renderTask(): void {
        if (this.task === null || this.progress === null) {
            return;
        }
        this.view.showTask({
            taskId: this.task.task_id,
            audioUrl: this.service.audioUrl(this.task),
            progress: this.progress,
            selectedScore: this.selectedScore,
            playbackStarted: this.playbackStarted,
            submitEnabled: this.submitEnabled,
            submitting: this.submitting,
        });
    }

    private fail(err: unknown): void {
        if (err instanceof ServiceError && err.code === 'RaterBlocked') {
            this.screen = 'blocked';
            this.view.showBlocked(err.message || 'You did not pass the qualification tasks.');
            return;
        }
        this.screen = 'error';
        this.view.showError(err instanceof Error ? err.message : String(err));
    }
}
