/**
 * Typed client for the interview service JSON API.
 *
 * The base URL is injected at build time (scripts/write-config.mjs writes
 * dist/config.js from COLDSTART_API_BASE); an empty base means same-origin.
 */

export interface Question {
    movie_id: number;
    title: string;
    genres: string[];
}

export interface Progress {
    asked: number;
    total: number;
}

export interface Recommendation {
    movie_id: number;
    title: string;
    predicted_rating: number;
}

export interface SessionOpened {
    session_id: string;
    question: Question;
    progress: Progress;
}

export interface AnswerOutcome {
    finished: boolean;
    progress: Progress;
    question?: Question;
    recommendations?: Recommendation[];
}

export class ApiError extends Error {
    constructor(readonly status: number, message: string) {
        super(message);
    }
}

declare global {
    interface Window {
        COLDSTART_API_BASE?: string;
    }
}

export function apiBase(): string {
    if (typeof window !== "undefined" && window.COLDSTART_API_BASE) {
        return window.COLDSTART_API_BASE.replace(/\/$/, "");
    }
    return "";
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
        response = await fetch(`${apiBase()}${path}`, {
            headers: { "Content-Type": "application/json" },
            ...init,
        });
    } catch (err) {
        throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
        let detail = response.statusText;
        try {
            const body = await response.json();
            if (body && body.detail) detail = JSON.stringify(body.detail);
        } catch {
            /* non-JSON error body */
        }
        throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
}

export function startSession(k?: number): Promise<SessionOpened> {
    return request<SessionOpened>("/api/sessions", {
        method: "POST",
        body: JSON.stringify(k === undefined ? {} : { k }),
    });
}

export function submitAnswer(sessionId: string, rating: number): Promise<AnswerOutcome> {
    return request<AnswerOutcome>(`/api/sessions/${sessionId}/answer`, {
        method: "POST",
        body: JSON.stringify({ rating }),
    });
}

export function fetchRecommendations(sessionId: string, n = 10): Promise<{ recommendations: Recommendation[] }> {
    return request(`/api/sessions/${sessionId}/recommendations?n=${n}`);
}

export function health(): Promise<{ status: string; model: string | null; action_space_size: number }> {
    return request("/api/health");
}
