"""Annotation service: serves tasks, enforces the two-distinct-workers rule,
injects gold tasks, persists every state change to an append-only JSONL log,
and exposes aggregation and consistency results.

The log is the only persistence: every serve and every response is appended
(and flushed) before being acknowledged, so restarting on any log prefix
reconstructs the exact queue state.  Randomness (gold injection, gold task
choice) is derived statelessly from the seed and the number of serves
already logged, which keeps replay and live execution identical.
"""

from __future__ import annotations

import datetime as _dt
import os
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse

from . import formats
from .annotations import (
    AGREEMENT_THRESHOLD_DEG,
    AggregateResult,
    ConsistencyReport,
    consistency_stats,
)

DATA_DIR_ENV = "SNOW_DATA_DIR"


class DuplicateSubmissionError(ValueError):
    """The worker already answered this task."""


@dataclass
class ServiceConfig:
    data_dir: Path
    host: str = "127.0.0.1"
    port: int = 8000
    gold_rate: float = 0.1
    seed: int = 0
    tasks_file: Path | None = None
    log_file: Path | None = None
    images_dir: Path | None = None
    ui_dir: Path | None = None

    def __post_init__(self) -> None:
        self.data_dir = Path(self.data_dir)
        if not (0.0 <= self.gold_rate <= 1.0):
            raise ValueError("gold_rate must lie in [0, 1]")
        if self.tasks_file is None:
            self.tasks_file = self.data_dir / "tasks.jsonl"
        if self.log_file is None:
            self.log_file = self.data_dir / "log.jsonl"
        if self.images_dir is None:
            self.images_dir = self.data_dir / "images"


def load_config(path: str | Path) -> ServiceConfig:
    """Parse a ``key = value`` text config.

    Recognized keys: data_dir, host, port, gold_rate, seed, tasks_file,
    log_file, images_dir, ui_dir.  Lines starting with '#' are comments.
    data_dir falls back to the SNOW_DATA_DIR environment variable.
    """
    raw: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()

    data_dir = raw.get("data_dir") or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise ValueError(f"no data_dir in config and {DATA_DIR_ENV} is unset")
    kwargs: dict = {"data_dir": Path(data_dir)}
    if "host" in raw:
        kwargs["host"] = raw["host"]
    if "port" in raw:
        kwargs["port"] = int(raw["port"])
    if "gold_rate" in raw:
        kwargs["gold_rate"] = float(raw["gold_rate"])
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    for key in ("tasks_file", "log_file", "images_dir", "ui_dir"):
        if key in raw:
            kwargs[key] = Path(raw[key])
    return ServiceConfig(**kwargs)


@dataclass
class _TaskState:
    record: dict
    index: int  # insertion order, used for deterministic tie-breaks
    responses: list[dict] = field(default_factory=list)

    @property
    def is_gold(self) -> bool:
        return self.record.get("gold") is not None


class AnnotationService:
    """Single-writer task queue over an append-only record log.

    Invariants kept in every reachable state: a worker is never served a
    task twice, and a non-gold task accumulates at most two responses.
    """

    def __init__(
        self,
        tasks: list[dict],
        log_path: str | Path,
        gold_rate: float = 0.1,
        seed: int = 0,
        threshold_deg: float = AGREEMENT_THRESHOLD_DEG,
    ):
        if not (0.0 <= gold_rate <= 1.0):
            raise ValueError("gold_rate must lie in [0, 1]")
        self._lock = threading.Lock()
        self._gold_rate = gold_rate
        self._seed = seed
        self._threshold_deg = threshold_deg
        self._log_path = Path(log_path)

        self._tasks: dict[str, _TaskState] = {}
        images_seen: set[str] = set()
        for rec in tasks:
            formats.validate_record(rec)
            if rec["kind"] != "task":
                raise ValueError("task list may only contain task records")
            tid = rec["task_id"]
            if tid in self._tasks:
                raise ValueError(f"duplicate task id {tid!r}")
            image = rec.get("image_id", "")
            if image and image in images_seen:
                raise ValueError(f"image {image!r} has more than one task (one keypoint per image)")
            images_seen.add(image)
            self._tasks[tid] = _TaskState(record=rec, index=len(self._tasks))

        self._served: set[tuple[str, str]] = set()  # (worker_id, task_id)
        self._answered: set[tuple[str, str]] = set()
        self._serve_count = 0
        self._seq = 0
        self._acks_by_response_id: dict[str, dict] = {}

        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        if self._log_path.exists():
            for rec in formats.read_records(self._log_path, allow_service_kinds=True):
                self._apply(rec)
        self._log_fh = open(self._log_path, "ab")

    # -- log plumbing --------------------------------------------------------

    def _append(self, rec: dict) -> dict:
        self._seq += 1
        rec = {"seq": self._seq, "ts": _dt.datetime.now(_dt.timezone.utc).isoformat(), **rec}
        line = formats.dump_record(rec) + "\n"
        self._log_fh.write(line.encode("utf-8"))
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())
        self._apply(rec, from_log=False)
        return rec

    def _apply(self, rec: dict, from_log: bool = True) -> None:
        """Fold one log record into the in-memory state."""
        if from_log:
            self._seq = max(self._seq, int(rec.get("seq", 0)))
        kind = rec["kind"]
        if kind == "served":
            self._served.add((rec["worker_id"], rec["task_id"]))
            self._serve_count += 1
        elif kind == "response":
            key = (rec["worker_id"], rec["task_id"])
            self._answered.add(key)
            self._served.add(key)
            self._tasks[rec["task_id"]].responses.append(rec)
            rid = rec.get("response_id")
            if rid is not None:
                self._acks_by_response_id[rid] = {
                    "seq": rec.get("seq"),
                    "status": self._task_status(self._tasks[rec["task_id"]]),
                }

    # -- queue ----------------------------------------------------------------

    def _draw(self, *parts) -> random.Random:
        return random.Random(f"{self._seed}|" + "|".join(str(p) for p in parts))

    def next_task(self, worker_id: str) -> dict | None:
        """Serve the next task for this worker, or None when nothing is open.

        With probability ``gold_rate`` a gold task the worker has not seen is
        served (indistinguishable from a normal one); otherwise the open
        non-gold task with the fewest responses, insertion order breaking ties.
        """
        if not worker_id:
            raise ValueError("worker_id must be nonempty")
        with self._lock:
            want_gold = self._draw(self._serve_count, "gold?").random() < self._gold_rate
            chosen: _TaskState | None = None
            if want_gold:
                eligible = [
                    t for t in self._tasks.values()
                    if t.is_gold and (worker_id, t.record["task_id"]) not in self._served
                ]
                if eligible:
                    pick = self._draw(self._serve_count, "pick").randrange(len(eligible))
                    chosen = eligible[pick]
            if chosen is None:
                open_tasks = [
                    t for t in self._tasks.values()
                    if not t.is_gold
                    and len(t.responses) < 2
                    and (worker_id, t.record["task_id"]) not in self._served
                ]
                if open_tasks:
                    chosen = min(open_tasks, key=lambda t: (len(t.responses), t.index))
            if chosen is None:
                return None
            self._append(
                {
                    "kind": "served",
                    "task_id": chosen.record["task_id"],
                    "worker_id": worker_id,
                    "gold": chosen.is_gold,
                }
            )
            public = {k: v for k, v in chosen.record.items() if k != "gold"}
            return public

    def submit_response(self, rec: dict) -> dict:
        """Validate, persist, and acknowledge one response record.

        Requires the task to have been served to this worker and not yet
        answered by them.  Re-sends carrying a known ``response_id`` return
        the original acknowledgment (idempotent retry); a fresh duplicate
        answer raises DuplicateSubmissionError.
        """
        rec = dict(rec)
        rec["kind"] = "response"
        formats.validate_record(rec)  # also enforces unit-norm normals
        tid, wid = rec["task_id"], rec["worker_id"]
        with self._lock:
            rid = rec.get("response_id")
            if rid is not None and rid in self._acks_by_response_id:
                return dict(self._acks_by_response_id[rid])
            if tid not in self._tasks:
                raise ValueError(f"unknown task {tid!r}")
            if (wid, tid) not in self._served:
                raise ValueError(f"task {tid!r} was not served to worker {wid!r}")
            if (wid, tid) in self._answered:
                raise DuplicateSubmissionError(f"worker {wid!r} already answered task {tid!r}")
            task = self._tasks[tid]
            if not task.is_gold and len(task.responses) >= 2:
                raise ValueError(f"task {tid!r} already has two responses")
            stored = self._append(rec)
            return {"seq": stored["seq"], "status": self._task_status(task)}

    # -- derived results -------------------------------------------------------

    def _task_status(self, task: _TaskState) -> str:
        if task.is_gold or len(task.responses) < 2:
            return "pending"
        return self._aggregate(task).status

    def _aggregate(self, task: _TaskState) -> AggregateResult:
        r1 = formats.record_to_response(task.responses[0])
        r2 = formats.record_to_response(task.responses[1])
        from .annotations import aggregate_pair

        return aggregate_pair(r1, r2, threshold_deg=self._threshold_deg)

    def aggregate_results(self) -> list[AggregateResult]:
        """Aggregation outcome for every non-gold task, ordered by task_id."""
        out = []
        with self._lock:
            for tid in sorted(self._tasks):
                task = self._tasks[tid]
                if task.is_gold:
                    continue
                if len(task.responses) < 2:
                    out.append(AggregateResult(task_id=tid, status="pending"))
                else:
                    out.append(self._aggregate(task))
        return out

    def export(self, status: str = "accepted") -> str:
        """JSONL of aggregate results, deterministically ordered by task_id.

        ``status`` filters to one of accepted/rejected/pending, or "all".
        """
        if status not in ("accepted", "rejected", "pending", "all"):
            raise ValueError(f"unknown export filter {status!r}")
        lines = []
        for res in self.aggregate_results():
            if status != "all" and res.status != status:
                continue
            rec = {"kind": "aggregate", "task_id": res.task_id, "status": res.status}
            if res.normal is not None:
                rec["normal"] = [float(c) for c in res.normal]
            if res.disagreement_deg is not None:
                rec["disagreement_deg"] = res.disagreement_deg
            lines.append(formats.dump_record(rec))
        return "".join(line + "\n" for line in lines)

    def consistency(self) -> ConsistencyReport:
        """Consistency statistics over all tasks with >= 2 vector responses.

        Gold tasks contribute reference (sensor-style) disagreement as well.
        """
        groups: dict[str, list[np.ndarray]] = {}
        reference: dict[str, np.ndarray] = {}
        with self._lock:
            for tid in sorted(self._tasks):
                task = self._tasks[tid]
                vecs = [
                    np.asarray(r["normal"], dtype=np.float64)
                    for r in task.responses
                    if r.get("normal") is not None
                ]
                if len(vecs) >= 2:
                    groups[tid] = vecs
                    if task.is_gold:
                        reference[tid] = np.asarray(task.record["gold"], dtype=np.float64)
        if not groups:
            raise ValueError("no task has two or more vector responses yet")
        return consistency_stats(groups, reference or None)

    def state_snapshot(self) -> dict:
        """Comparable summary of the queue state (used by replay tests)."""
        with self._lock:
            return {
                "seq": self._seq,
                "serve_count": self._serve_count,
                "served": sorted(self._served),
                "answered": sorted(self._answered),
                "responses": {
                    tid: [r.get("seq") for r in t.responses] for tid, t in self._tasks.items()
                },
            }

    def close(self) -> None:
        self._log_fh.close()


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

def create_app(service: AnnotationService, images_dir: str | Path | None = None, ui_dir: str | Path | None = None) -> FastAPI:
    """FastAPI wrapper exposing the queue over HTTP with JSON bodies."""
    app = FastAPI(title="gauge annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/api/health")
    def health():
        return {"ok": True}

    @app.get("/api/task")
    def get_task(worker: str = Query(...)):
        task = service.next_task(worker)
        return JSONResponse({"task": task})

    @app.post("/api/response")
    async def post_response(request: Request):
        body = await request.json()
        try:
            ack = service.submit_response(body)
        except DuplicateSubmissionError as e:
            raise HTTPException(status_code=409, detail=str(e))
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))
        return JSONResponse(ack)

    @app.get("/api/image/{image_id}")
    def get_image(image_id: str):
        if images_dir is None:
            raise HTTPException(status_code=404, detail="no image directory configured")
        if "/" in image_id or "\\" in image_id or ".." in image_id:
            raise HTTPException(status_code=400, detail="bad image id")
        path = Path(images_dir) / image_id
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no image {image_id!r}")
        return FileResponse(path)

    @app.get("/api/export")
    def get_export(status: str = Query("accepted")):
        try:
            return PlainTextResponse(service.export(status), media_type="application/jsonl")
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))

    @app.get("/api/consistency")
    def get_consistency():
        try:
            return JSONResponse(service.consistency().to_dict())
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def service_from_config(cfg: ServiceConfig) -> AnnotationService:
    tasks = formats.read_records(cfg.tasks_file) if Path(cfg.tasks_file).exists() else []
    return AnnotationService(
        tasks=tasks, log_path=cfg.log_file, gold_rate=cfg.gold_rate, seed=cfg.seed
    )


def run_server(cfg: ServiceConfig) -> None:
    import uvicorn

    service = service_from_config(cfg)
    app = create_app(service, images_dir=cfg.images_dir, ui_dir=cfg.ui_dir)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
