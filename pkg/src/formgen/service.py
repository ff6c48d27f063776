"""Rating-task service: dispenses study and qualification clips, collects
scores.

New raters are served the 10-task qualification mix (3 instructed-score
clips, 1 silence clip, 6 plain clips) before any study clip; the 10th
submission triggers screening, and a failed rater is blocked. Study
assignment is pull-based: each clip needs ``raters_needed`` distinct
raters, a rater never sees the same clip twice, and task assignment and
score submission are linearizable (a lock serializes store mutations, so
concurrent raters get disjoint assignments).

Persistence is an append-only JSONL event log; derived state is rebuilt
by replay on open.

REST surface (JSON bodies, error envelope {"code", "message"})::

    POST /v1/batches                {clips, raters_needed} -> {batch_id}
    GET  /v1/raters/{id}/next       -> {task | null, progress}
    POST /v1/raters/{id}/scores     {task_id, score} -> {status, qualified?}
    GET  /v1/batches/{id}/progress  -> counts
    GET  /v1/clips/{id}/audio       -> WAV bytes
"""

from __future__ import annotations

import datetime as _dt
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .mos import (
    CONTEXT_QUALIFICATION,
    CONTEXT_STUDY,
    IncompleteQualification,
    QualificationSpec,
    RatingRecord,
    qualify_rater,
)

KIND_STUDY = "study"
KIND_QUALIFICATION = "qualification"

RATER_NEW = "new"
RATER_QUALIFYING = "qualifying"
RATER_QUALIFIED = "qualified"
RATER_BLOCKED = "blocked"


class ServiceError(Exception):
    code = "ServiceError"
    http_status = 400

    def envelope(self) -> dict:
        return {"code": self.code, "message": str(self)}


class UnknownClip(ServiceError):
    code = "UnknownClip"
    http_status = 404


class UnknownBatch(ServiceError):
    code = "UnknownBatch"
    http_status = 404


class UnknownTask(ServiceError):
    code = "UnknownTask"
    http_status = 404


class ScoreOutOfRange(ServiceError):
    code = "ScoreOutOfRange"
    http_status = 400


class DuplicateSubmission(ServiceError):
    code = "DuplicateSubmission"
    http_status = 409


class NotAssigned(ServiceError):
    code = "NotAssigned"
    http_status = 409


class RaterBlocked(ServiceError):
    code = "RaterBlocked"
    http_status = 403


@dataclass
class RatingTask:
    task_id: str
    clip_id: str
    kind: str
    rater_id: str
    batch_id: str | None = None
    instructed_score: int | None = None  # hidden from raters
    score: int | None = None

    def public_view(self) -> dict:
        return {
            "task_id": self.task_id,
            "clip_id": self.clip_id,
            "kind": self.kind,
            "audio_url": f"/v1/clips/{self.clip_id}/audio",
        }


@dataclass
class Batch:
    batch_id: str
    clip_ids: list[str]
    raters_needed: int


@dataclass
class _RaterState:
    status: str = RATER_NEW
    qualification_tasks: list[str] = field(default_factory=list)
    rated_clips: set[str] = field(default_factory=set)


class RatingStore:
    """Event-sourced store; every mutation appends one JSONL event."""

    def __init__(self, root: str | Path, qualification: QualificationSpec | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "events.jsonl"
        self.clips: dict[str, Path] = {}
        self.qualification = qualification
        self._lock = threading.Lock()
        self._batches: dict[str, Batch] = {}
        self._tasks: dict[str, RatingTask] = {}
        self._raters: dict[str, _RaterState] = {}
        self._assigned: dict[tuple[str, str], int] = {}  # (batch, clip) -> count
        self._counter = 0
        if self.log_path.exists():
            self._replay()

    # -- persistence --------------------------------------------------------

    def _append(self, event: dict) -> None:
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def _replay(self) -> None:
        for line in self.log_path.read_text().splitlines():
            event = json.loads(line)
            kind = event.pop("event")
            if kind == "batch":
                batch = Batch(**event)
                self._batches[batch.batch_id] = batch
            elif kind == "task":
                task = RatingTask(**event)
                self._tasks[task.task_id] = task
                self._counter = max(self._counter, int(task.task_id.split("-")[-1]))
                rater = self._rater(task.rater_id)
                if task.kind == KIND_QUALIFICATION:
                    rater.qualification_tasks.append(task.task_id)
                    rater.status = RATER_QUALIFYING
                else:
                    rater.rated_clips.add(task.clip_id)
                    key = (task.batch_id, task.clip_id)
                    self._assigned[key] = self._assigned.get(key, 0) + 1
            elif kind == "score":
                task = self._tasks[event["task_id"]]
                task.score = event["score"]
            elif kind == "rater_status":
                self._rater(event["rater_id"]).status = event["status"]

    # -- helpers -------------------------------------------------------------

    def _rater(self, rater_id: str) -> _RaterState:
        if rater_id not in self._raters:
            self._raters[rater_id] = _RaterState()
        return self._raters[rater_id]

    def _new_task_id(self) -> str:
        self._counter += 1
        return f"task-{self._counter}"

    def register_clip(self, clip_id: str, path: str | Path) -> None:
        self.clips[clip_id] = Path(path)

    def clip_path(self, clip_id: str) -> Path:
        if clip_id not in self.clips:
            raise UnknownClip(f"clip {clip_id!r} is not in the artifact store")
        return self.clips[clip_id]

    # -- operations ----------------------------------------------------------

    def enqueue_batch(self, clip_ids: list[str], raters_needed: int) -> str:
        if not clip_ids:
            raise UnknownClip("batch has no clips")
        with self._lock:
            for cid in clip_ids:
                if cid not in self.clips:
                    raise UnknownClip(f"clip {cid!r} is not in the artifact store")
            batch_id = f"batch-{len(self._batches) + 1}"
            batch = Batch(batch_id=batch_id, clip_ids=list(clip_ids), raters_needed=raters_needed)
            self._batches[batch_id] = batch
            self._append({"event": "batch", **batch.__dict__})
            return batch_id

    def _start_qualification(self, rater_id: str) -> None:
        spec = self.qualification
        rater = self._rater(rater_id)
        rater.status = RATER_QUALIFYING
        self._append({"event": "rater_status", "rater_id": rater_id, "status": RATER_QUALIFYING})
        clip_plan: list[tuple[str, str, int | None]] = []
        for cid, expected in spec.instructed.items():
            clip_plan.append((cid, KIND_QUALIFICATION, expected))
        clip_plan.append((spec.silence_clip_id, KIND_QUALIFICATION, 1))
        for cid in spec.plain_clip_ids:
            clip_plan.append((cid, KIND_QUALIFICATION, None))
        for cid, kind, expected in clip_plan:
            task = RatingTask(
                task_id=self._new_task_id(),
                clip_id=cid,
                kind=kind,
                rater_id=rater_id,
                instructed_score=expected,
            )
            self._tasks[task.task_id] = task
            rater.qualification_tasks.append(task.task_id)
            self._append({"event": "task", **task.__dict__})

    def next_task(self, rater_id: str) -> RatingTask | None:
        """Qualification first for new raters, else the first open study
        slot on a clip this rater has not seen."""
        with self._lock:
            rater = self._rater(rater_id)
            if rater.status == RATER_BLOCKED:
                raise RaterBlocked(f"rater {rater_id} failed qualification")

            if rater.status == RATER_NEW and self.qualification is not None:
                self._start_qualification(rater_id)

            if rater.status == RATER_QUALIFYING:
                for task_id in rater.qualification_tasks:
                    if self._tasks[task_id].score is None:
                        return self._tasks[task_id]
                return None  # all answered; scoring path flips the status

            for batch in self._batches.values():
                for clip_id in batch.clip_ids:
                    if clip_id in rater.rated_clips:
                        continue
                    key = (batch.batch_id, clip_id)
                    if self._assigned.get(key, 0) >= batch.raters_needed:
                        continue
                    task = RatingTask(
                        task_id=self._new_task_id(),
                        clip_id=clip_id,
                        kind=KIND_STUDY,
                        rater_id=rater_id,
                        batch_id=batch.batch_id,
                    )
                    self._tasks[task.task_id] = task
                    self._assigned[key] = self._assigned.get(key, 0) + 1
                    rater.rated_clips.add(clip_id)
                    self._append({"event": "task", **task.__dict__})
                    return task
            return None

    def submit_score(self, rater_id: str, task_id: str, score: int) -> dict:
        with self._lock:
            if not isinstance(score, int) or score < 1 or score > 5:
                raise ScoreOutOfRange(f"score {score!r} not in 1..5")
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTask(f"no task {task_id!r}")
            if task.rater_id != rater_id:
                raise NotAssigned(f"task {task_id} is not assigned to rater {rater_id}")
            if task.score is not None:
                raise DuplicateSubmission(f"task {task_id} already has a score")
            task.score = score
            self._append({"event": "score", "task_id": task_id, "score": score})

            result = {"status": "ok"}
            rater = self._rater(rater_id)
            if task.kind == KIND_QUALIFICATION:
                answered = [
                    self._tasks[tid] for tid in rater.qualification_tasks
                    if self._tasks[tid].score is not None
                ]
                if len(answered) >= len(rater.qualification_tasks):
                    outcome = self._screen(rater_id, answered)
                    result["qualified"] = outcome
            return result

    def _screen(self, rater_id: str, answered: list[RatingTask]) -> bool:
        records = [
            RatingRecord(
                rater_id=rater_id,
                clip_id=t.clip_id,
                score=t.score,
                context=CONTEXT_QUALIFICATION,
            )
            for t in answered
        ]
        try:
            outcome = qualify_rater(records, self.qualification)
            passed = outcome.passed
        except IncompleteQualification:
            passed = False
        status = RATER_QUALIFIED if passed else RATER_BLOCKED
        self._rater(rater_id).status = status
        self._append({"event": "rater_status", "rater_id": rater_id, "status": status})
        return passed

    def rater_status(self, rater_id: str) -> str:
        with self._lock:
            return self._rater(rater_id).status

    def progress(self, batch_id: str) -> dict:
        with self._lock:
            batch = self._batches.get(batch_id)
            if batch is None:
                raise UnknownBatch(f"no batch {batch_id!r}")
            needed = len(batch.clip_ids) * batch.raters_needed
            submitted = 0
            for task in self._tasks.values():
                if task.batch_id == batch_id and task.score is not None:
                    if self._rater(task.rater_id).status == RATER_QUALIFIED:
                        submitted += 1
            return {
                "batch_id": batch_id,
                "clips": len(batch.clip_ids),
                "raters_needed": batch.raters_needed,
                "required": needed,
                "submitted": submitted,
                "complete": submitted >= needed,
            }

    def study_records(self) -> list[RatingRecord]:
        """All scored study tasks from qualified raters, as rating records."""
        with self._lock:
            out = []
            for task in self._tasks.values():
                if task.kind != KIND_STUDY or task.score is None:
                    continue
                if self._rater(task.rater_id).status != RATER_QUALIFIED:
                    continue
                out.append(
                    RatingRecord(
                        rater_id=task.rater_id,
                        clip_id=task.clip_id,
                        score=task.score,
                        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
                        context=CONTEXT_STUDY,
                    )
                )
            return out

    def rater_progress(self, rater_id: str) -> dict:
        with self._lock:
            rater = self._rater(rater_id)
            done = sum(
                1 for t in self._tasks.values()
                if t.rater_id == rater_id and t.score is not None
            )
            total = done
            if rater.status == RATER_QUALIFYING:
                total = len(rater.qualification_tasks)
            else:
                for batch in self._batches.values():
                    total += sum(1 for c in batch.clip_ids if c not in rater.rated_clips)
                total += len(rater.rated_clips)
            return {"done": done, "total": total}


def default_qualification_spec() -> QualificationSpec:
    """The canonical 3 instructed + 1 silence + 6 plain mix over well-known
    clip ids."""
    return QualificationSpec(
        instructed={"qual-instructed-1": 2, "qual-instructed-2": 4, "qual-instructed-3": 3},
        silence_clip_id="qual-silence",
        plain_clip_ids=tuple(f"qual-plain-{i}" for i in range(1, 7)),
    )


def create_app(store: RatingStore, cors_origins: list[str] | None = None):
    """FastAPI app over a store; CORS is enabled for the rating UI."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, JSONResponse

    app = FastAPI(title="formgen rating service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    def service_error(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.http_status, content=exc.envelope())

    @app.post("/v1/batches")
    def post_batch(payload: dict):
        batch_id = store.enqueue_batch(
            payload.get("clips", []), int(payload.get("raters_needed", 1))
        )
        return {"batch_id": batch_id}

    @app.get("/v1/batches/{batch_id}/progress")
    def batch_progress(batch_id: str):
        return store.progress(batch_id)

    @app.get("/v1/raters/{rater_id}/next")
    def next_task(rater_id: str):
        task = store.next_task(rater_id)
        return {
            "task": task.public_view() if task else None,
            "progress": store.rater_progress(rater_id),
        }

    @app.post("/v1/raters/{rater_id}/scores")
    def submit(rater_id: str, payload: dict):
        score = payload.get("score")
        if not isinstance(score, int) or isinstance(score, bool):
            raise ScoreOutOfRange(f"score {score!r} not in 1..5")
        return store.submit_score(rater_id, str(payload.get("task_id")), score)

    @app.get("/v1/clips/{clip_id}/audio")
    def clip_audio(clip_id: str):
        return FileResponse(store.clip_path(clip_id), media_type="audio/wav")

    return app
