import { RatingApp } from './app.js';
import { HttpRatingService } from './client.js';
import { DomView } from './dom.js';

function param(name: string, fallback: string): string {
    return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

const baseUrl = param('service', 'http://127.0.0.1:8400');
const raterId = param('rater', '');

const root = document.getElementById('app')!;
if (!raterId) {
    root.innerHTML = `
        <section class="terminal">
          <h2>Rater id required</h2>
          <p>Open this page as ?rater=YOUR_ID&amp;service=http://host:port</p>
        </section>`;
} else {
    const view = new DomView(root);
    const app = new RatingApp(new HttpRatingService(baseUrl), view, raterId);
    view.attach(app);
    void app.start();
}
