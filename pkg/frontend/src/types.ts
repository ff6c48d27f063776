/** Wire types of the rating service REST API. */

export interface TaskPayload {
    task_id: string;
    clip_id: string;
    kind: 'study' | 'qualification';
    audio_url: string;
}

export interface Progress {
    done: number;
    total: number;
}

export interface NextResponse {
    task: TaskPayload | null;
    progress: Progress;
}

export interface SubmitAck {
    status: string;
    qualified?: boolean;
}

export interface ErrorEnvelope {
    code: string;
    message: string;
}

/** A service-reported error, carrying the envelope's code verbatim. */
export class ServiceError extends Error {
    readonly code: string;
    readonly status: number;

    constructor(code: string, message: string, status: number) {
        super(message);
        this.code = code;
        this.status = status;
    }
}

/** Client abstraction the app drives; implemented over fetch and stubbed
 * in tests. */
export interface RatingService {
    nextTask(raterId: string): Promise<NextResponse>;
    submitScore(raterId: string, taskId: string, score: number): Promise<SubmitAck>;
    audioUrl(task: TaskPayload): string;
}
