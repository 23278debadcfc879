"""HTTP JSON API serving live adaptive interviews.

Sessions live in memory behind a lock, expire after an idle period, and can
optionally be journaled to an append-only file for restart recovery. The
model bundle is immutable and shared read-only across requests; question
selection is always greedy (epsilon = 0, no dropout).
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .bundle import ModelBundle
from .data import RatingsDataset
from .dqn import q_forward, select_action
from .interview import initial_state, asked_mask, step

logger = logging.getLogger(__name__)

DEFAULT_SESSION_TTL = 3600.0
DEFAULT_QUESTIONS = 3
MAX_QUESTIONS = 100


@dataclass
class InterviewSession:
    session_id: str
    k_target: int
    state: np.ndarray
    asked: list[dict] = field(default_factory=list)  # slot, movie_index, answer
    pending_slot: int | None = None
    created_at: float = field(default_factory=time.time)
    last_active: float = field(default_factory=time.time)
    finished: bool = False


class SessionStore:
    """Lock-guarded in-memory sessions with idle expiry and a JSONL journal."""

    def __init__(self, ttl: float = DEFAULT_SESSION_TTL,
                 journal_path: str | Path | None = None):
        self.ttl = ttl
        self._lock = threading.Lock()
        self._sessions: dict[str, InterviewSession] = {}
        self._journal = Path(journal_path) if journal_path else None

    def put(self, session: InterviewSession) -> None:
        with self._lock:
            self._sessions[session.session_id] = session

    def get(self, session_id: str) -> InterviewSession:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None and time.time() - session.last_active > self.ttl:
                del self._sessions[session_id]
                session = None
            if session is None:
                raise HTTPException(status_code=404, detail="unknown or expired session")
            session.last_active = time.time()
            return session

    def journal(self, event: dict) -> None:
        if self._journal is None:
            return
        with self._lock:
            with open(self._journal, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")

    def replay_journal(self, app_state: "_AppState") -> int:
        """Rebuild sessions from the journal by replaying answers through
        the interview module."""
        if self._journal is None or not self._journal.exists():
            return 0
        restored = 0
        events = [json.loads(line) for line in
                  self._journal.read_text(encoding="utf-8").splitlines() if line.strip()]
        for event in events:
            sid = event["session_id"]
            if event["type"] == "created":
                session = InterviewSession(session_id=sid, k_target=event["k"],
                                           state=initial_state(app_state.n_actions),
                                           created_at=event["time"],
                                           last_active=event["time"])
                session.pending_slot = app_state.next_slot(session)
                self._sessions[sid] = session
                restored += 1
            elif event["type"] == "answered" and sid in self._sessions:
                session = self._sessions[sid]
                slot = session.pending_slot
                session.state = step(session.state, slot, event["rating"])
                session.asked.append({"slot": slot,
                                      "movie_index": app_state.movie_of(slot),
                                      "answer": event["rating"]})
                session.last_active = event["time"]
                if len(session.asked) >= session.k_target:
                    session.finished = True
                    session.pending_slot = None
                else:
                    session.pending_slot = app_state.next_slot(session)
        now = time.time()
        expired = [sid for sid, s in self._sessions.items()
                   if now - s.last_active > self.ttl]
        for sid in expired:
            del self._sessions[sid]
        return restored - len(expired)


class _AppState:
    def __init__(self, bundle: ModelBundle, dataset: RatingsDataset):
        if bundle.dataset_digest and bundle.dataset_digest != dataset.digest():
            raise ValueError("bundle was trained on a different dataset")
        self.bundle = bundle
        self.dataset = dataset
        self.n_actions = bundle.action_space.size

    def movie_of(self, slot: int) -> int:
        return self.bundle.action_space.movies[slot]

    def next_slot(self, session: InterviewSession) -> int:
        q = q_forward(self.bundle.dqn, session.state, training=False)
        return select_action(q, asked_mask(session.state), epsilon=0.0,
                             rng=None)  # greedy never draws

    def question_payload(self, slot: int) -> dict:
        movie = self.movie_of(slot)
        title, genres = self.dataset.movie_titles[movie]
        return {"movie_id": int(self.dataset.movie_ids[movie]),
                "title": title, "genres": list(genres)}

    def recommendations(self, session: InterviewSession, n: int) -> list[dict]:
        """Top-n catalog movies by predicted rating, skipping anything the
        user said they had seen (answer >= 1); ties break on ascending id."""
        seen = {row["movie_index"] for row in session.asked if row["answer"] >= 1}
        predict = self.bundle.predictor(session.state)
        all_movies = np.arange(self.dataset.movie_count)
        scores = predict(all_movies)
        external = self.dataset.movie_ids
        order = np.lexsort((external, -scores))
        out = []
        for movie in order:
            movie = int(movie)
            if movie in seen:
                continue
            title, _ = self.dataset.movie_titles[movie]
            out.append({"movie_id": int(external[movie]), "title": title,
                        "predicted_rating": float(scores[movie])})
            if len(out) >= n:
                break
        return out


class CreateSessionBody(BaseModel):
    k: int | None = None


class AnswerBody(BaseModel):
    rating: int


def create_app(bundle: ModelBundle | None, dataset: RatingsDataset | None,
               session_ttl: float = DEFAULT_SESSION_TTL,
               journal_path: str | Path | None = None,
               cors_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    """Build the API app. A None bundle yields 503s until one is loaded."""
    app = FastAPI(title="coldstart interview service")
    app.add_middleware(CORSMiddleware, allow_origins=list(cors_origins),
                       allow_methods=["*"], allow_headers=["*"])
    state = _AppState(bundle, dataset) if bundle is not None else None
    store = SessionStore(ttl=session_ttl, journal_path=journal_path)
    if state is not None and journal_path:
        restored = store.replay_journal(state)
        if restored:
            logger.info("restored %d sessions from journal", restored)

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def need_state() -> _AppState:
        if state is None:
            raise HTTPException(status_code=503, detail="no model bundle loaded")
        return state

    def progress(session: InterviewSession) -> dict:
        return {"asked": len(session.asked), "total": session.k_target}

    @app.get("/api/health")
    def health():
        return {"status": "ok" if state is not None else "no-model",
                "model": state.bundle.model if state else None,
                "action_space_size": state.n_actions if state else 0}

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody | None = None):
        st = need_state()
        k = body.k if body and body.k is not None else DEFAULT_QUESTIONS
        if not 1 <= k <= min(MAX_QUESTIONS, st.n_actions):
            raise HTTPException(status_code=400,
                                detail=f"k must be in 1..{min(MAX_QUESTIONS, st.n_actions)}")
        session = InterviewSession(session_id=secrets.token_urlsafe(16), k_target=k,
                                   state=initial_state(st.n_actions))
        session.pending_slot = st.next_slot(session)
        store.put(session)
        store.journal({"type": "created", "session_id": session.session_id,
                       "k": k, "time": session.created_at})
        return {"session_id": session.session_id,
                "question": st.question_payload(session.pending_slot),
                "progress": progress(session)}

    @app.post("/api/sessions/{session_id}/answer")
    def answer(session_id: str, body: AnswerBody):
        st = need_state()
        session = store.get(session_id)
        if session.finished:
            raise HTTPException(status_code=409, detail="interview already finished")
        if not 0 <= body.rating <= 5:
            raise HTTPException(status_code=400, detail="rating must be in 0..5")

        slot = session.pending_slot
        session.state = step(session.state, slot, body.rating)
        session.asked.append({"slot": slot, "movie_index": st.movie_of(slot),
                              "answer": body.rating})
        store.journal({"type": "answered", "session_id": session_id,
                       "rating": body.rating, "time": time.time()})
        if len(session.asked) >= session.k_target:
            session.finished = True
            session.pending_slot = None
            return {"finished": True, "progress": progress(session),
                    "recommendations": st.recommendations(session, 10)}
        session.pending_slot = st.next_slot(session)
        return {"finished": False, "progress": progress(session),
                "question": st.question_payload(session.pending_slot)}

    @app.get("/api/sessions/{session_id}/recommendations")
    def recommendations(session_id: str, n: int = 10):
        st = need_state()
        session = store.get(session_id)
        if not session.finished:
            raise HTTPException(status_code=409, detail="interview not finished")
        if n < 1:
            raise HTTPException(status_code=400, detail="n must be positive")
        return {"recommendations": st.recommendations(session, n)}

    @app.get("/api/sessions/{session_id}/qvalues")
    def qvalues(session_id: str):
        # diagnostic: raw action values for the session's current state
        st = need_state()
        session = store.get(session_id)
        q = q_forward(st.bundle.dqn, session.state, training=False)
        return {"qvalues": [float(v) for v in q],
                "asked_slots": [row["slot"] for row in session.asked]}

    return app
