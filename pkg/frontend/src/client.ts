import {
    ErrorEnvelope,
    NextResponse,
    RatingService,
    ServiceError,
    SubmitAck,
    TaskPayload,
} from './types.js';

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** HTTP client for the rating service; all failures surface as
 * ServiceError (service envelopes verbatim, transport problems as code
 * "NetworkError"). */
export class HttpRatingService implements RatingService {
    private readonly baseUrl: string;
    private readonly fetchFn: FetchLike;

    constructor(baseUrl: string, fetchFn: FetchLike = (...args) => fetch(...args)) {
        this.baseUrl = baseUrl.replace(/\/+$/, '');
        this.fetchFn = fetchFn;
    }

    async nextTask(raterId: string): Promise<NextResponse> {
        const resp = await this.request(`/v1/raters/${encodeURIComponent(raterId)}/next`);
        return (await resp.json()) as NextResponse;
    }

    async submitScore(raterId: string, taskId: string, score: number): Promise<SubmitAck> {
        const resp = await this.request(`/v1/raters/${encodeURIComponent(raterId)}/scores`, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify({ task_id: taskId, score }),
        });
        return (await resp.json()) as SubmitAck;
    }

    audioUrl(task: TaskPayload): string {
        return task.audio_url.startsWith('http')
            ? task.audio_url
            : this.baseUrl + task.audio_url;
    }

    private async request(path: string, init?: RequestInit): Promise<Response> {
        let resp: Response;
        try {
            resp = await this.fetchFn(this.baseUrl + path, init);
        } catch (err) {
            throw new ServiceError('NetworkError', String(err), 0);
        }
        if (!resp.ok) {
            let envelope: ErrorEnvelope = { code: `HTTP${resp.status}`, message: '' };
            try {
                envelope = (await resp.json()) as ErrorEnvelope;
            } catch {
                // non-JSON error body; keep the status-code envelope
            }
            throw new ServiceError(envelope.code, envelope.message, resp.status);
        }
        return resp;
    }
}
