/**
 * Single-page interview flow.
 *
 * The client holds no policy logic: every question comes from the server,
 * and the view is a pure function of the last server response. One request
 * is in flight at a time; controls are disabled while waiting.
 */

import {
    AnswerOutcome,
    ApiError,
    Question,
    Recommendation,
    startSession,
    submitAnswer,
} from "./api.js";

export interface HistoryRow {
    turn: number;
    movie: string;
    genre: string;
    rating: number;
}

interface AppState {
    phase: "start" | "asking" | "finished";
    sessionId: string | null;
    k: number;
    question: Question | null;
    asked: number;
    history: HistoryRow[];
    recommendations: Recommendation[];
    error: string | null;
    busy: boolean;
}

const RATING_LABELS: Array<[number, string]> = [
    [1, "1 ★"], [2, "2 ★"], [3, "3 ★"], [4, "4 ★"], [5, "5 ★"],
];

export class InterviewApp {
    private state: AppState = {
        phase: "start",
        sessionId: null,
        k: 3,
        question: null,
        asked: 0,
        history: [],
        recommendations: [],
        error: null,
        busy: false,
    };

    private lastAction: (() => Promise<void>) | null = null;

    constructor(private root: HTMLElement) {
        this.render();
    }

    /** Current state snapshot, for tests. */
    snapshot(): Readonly<AppState> {
        return this.state;
    }

    private update(partial: Partial<AppState>): void {
        this.state = { ...this.state, ...partial };
        this.render();
    }

    private async guard(action: () => Promise<void>): Promise<void> {
        if (this.state.busy) return;
        this.lastAction = action;
        this.update({ busy: true, error: null });
        try {
            await action();
        } catch (err) {
            const message = err instanceof ApiError
                ? (err.status === 0 ? err.message : `server error ${err.status}: ${err.message}`)
                : String(err);
            this.update({ error: message });
        } finally {
            this.update({ busy: false });
        }
    }

    start(k: number): Promise<void> {
        return this.guard(async () => {
            const opened = await startSession(k);
            this.update({
                phase: "asking",
                sessionId: opened.session_id,
                k: opened.progress.total,
                question: opened.question,
                asked: opened.progress.asked,
                history: [],
                recommendations: [],
            });
        });
    }

    answer(rating: number): Promise<void> {
        return this.guard(async () => {
            const { sessionId, question, history } = this.state;
            if (!sessionId || !question) return;
            let outcome: AnswerOutcome;
            try {
                outcome = await submitAnswer(sessionId, rating);
            } catch (err) {
                if (err instanceof ApiError && err.status === 409) {
                    // the session advanced without us (e.g. a duplicate
                    // submit slipped through); refresh from the server
                    this.update({ phase: "start", sessionId: null });
                    return;
                }
                throw err;
            }
            const row: HistoryRow = {
                turn: history.length + 1,
                movie: question.title,
                genre: question.genres.join(", "),
                rating,
            };
            if (outcome.finished) {
                this.update({
                    phase: "finished",
                    history: [...history, row],
                    asked: outcome.progress.asked,
                    question: null,
                    recommendations: outcome.recommendations ?? [],
                });
            } else {
                this.update({
                    history: [...history, row],
                    asked: outcome.progress.asked,
                    question: outcome.question ?? null,
                });
            }
        });
    }

    retry(): Promise<void> {
        const action = this.lastAction;
        if (!action) return Promise.resolve();
        return this.guard(action);
    }

    reset(): void {
        this.update({
            phase: "start", sessionId: null, question: null, asked: 0,
            history: [], recommendations: [], error: null,
        });
    }

    // ------------------------------ rendering ------------------------------

    private render(): void {
        const { phase } = this.state;
        this.root.replaceChildren();
        this.root.appendChild(this.renderError());
        if (phase === "start") {
            this.root.appendChild(this.renderStart());
        } else {
            this.root.appendChild(this.renderProgress());
            if (this.state.history.length) this.root.appendChild(this.renderHistory());
            if (phase === "asking") this.root.appendChild(this.renderQuestion());
            if (phase === "finished") this.root.appendChild(this.renderRecommendations());
        }
    }

    private renderError(): HTMLElement {
        const banner = el("div", "error-banner");
        banner.dataset.testid = "error-banner";
        if (!this.state.error) {
            banner.style.display = "none";
            return banner;
        }
        banner.appendChild(el("span", "error-text", this.state.error));
        const retry = button("Retry", () => void this.retry());
        retry.dataset.testid = "retry";
        banner.appendChild(retry);
        return banner;
    }

    private renderStart(): HTMLElement {
        const card = el("div", "card start-card");
        card.appendChild(el("h1", "", "Movie taste interview"));
        card.appendChild(el("p", "",
            "Answer a few questions and get personal recommendations. " +
            "Rate each movie 1-5 stars, or say you haven't seen it."));

        const label = el("label", "", "Questions: ");
        const select = document.createElement("select");
        select.dataset.testid = "k-select";
        for (let k = 1; k <= 10; k++) {
            const option = document.createElement("option");
            option.value = String(k);
            option.textContent = String(k);
            if (k === 3) option.selected = true;
            select.appendChild(option);
        }
        label.appendChild(select);
        card.appendChild(label);

        const start = button("Start interview", () => void this.start(Number(select.value)));
        start.dataset.testid = "start";
        start.disabled = this.state.busy;
        card.appendChild(start);
        return card;
    }

    private renderProgress(): HTMLElement {
        const bar = el("div", "progress");
        bar.dataset.testid = "progress";
        bar.textContent = `${this.state.asked} of ${this.state.k} answered`;
        const fill = el("div", "progress-fill");
        fill.style.width = `${(100 * this.state.asked) / this.state.k}%`;
        bar.appendChild(fill);
        return bar;
    }

    private renderQuestion(): HTMLElement {
        const q = this.state.question;
        const card = el("div", "card question-card");
        if (!q) return card;
        card.appendChild(el("h2", "question-title", `Do you like ${q.title}?`));
        card.appendChild(el("p", "question-genres", q.genres.join(", ")));

        const controls = el("div", "answer-controls");
        for (const [value, text] of RATING_LABELS) {
            const b = button(text, () => void this.answer(value));
            b.dataset.testid = `rate-${value}`;
            b.disabled = this.state.busy;
            controls.appendChild(b);
        }
        const unseen = button("Haven't seen it", () => void this.answer(0));
        unseen.dataset.testid = "rate-0";
        unseen.disabled = this.state.busy;
        controls.appendChild(unseen);
        card.appendChild(controls);
        return card;
    }

    private renderHistory(): HTMLElement {
        const table = document.createElement("table");
        table.className = "history";
        table.dataset.testid = "history";
        const head = table.createTHead().insertRow();
        for (const column of ["Turn", "Movie", "Genre", "Rating"]) {
            head.appendChild(el("th", "", column));
        }
        const body = table.createTBody();
        for (const row of this.state.history) {
            const tr = body.insertRow();
            tr.insertCell().textContent = String(row.turn);
            tr.insertCell().textContent = row.movie;
            tr.insertCell().textContent = row.genre;
            tr.insertCell().textContent = String(row.rating);
        }
        return table;
    }

    private renderRecommendations(): HTMLElement {
        const card = el("div", "card recs-card");
        card.appendChild(el("h2", "", "Your recommendations"));
        const list = document.createElement("ol");
        list.dataset.testid = "recommendations";
        for (const rec of this.state.recommendations) {
            const item = document.createElement("li");
            item.appendChild(el("span", "rec-title", rec.title));
            item.appendChild(el("span", "rec-rating",
                rec.predicted_rating.toFixed(1)));
            list.appendChild(item);
        }
        if (!this.state.recommendations.length) {
            card.appendChild(el("p", "empty", "No recommendations available."));
        }
        card.appendChild(list);
        const again = button("Start over", () => this.reset());
        again.dataset.testid = "restart";
        card.appendChild(again);
        return card;
    }
}

function el(tag: string, className: string, text?: string): HTMLElement {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

function button(text: string, onClick: () => void): HTMLButtonElement {
    const b = document.createElement("button");
    b.textContent = text;
    b.addEventListener("click", onClick);
    return b;
}
