"""Run-management and annotation HTTP service.

Training runs execute on background threads. In human annotation mode the
loop pauses at the preferred-set update barrier, publishes one annotation
task per scheduled candidate (each carrying the incumbent snapshot and its
version), and resumes once every task of the iteration has been judged.
Request handlers only ever touch immutable snapshots plus a judgment queue,
so they never race the trainer.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .annotate import OUTCOMES, Judgment
from .config import ConfigError, TrainConfig, config_from_dict
from .rollout import trajectory_summary
from .training import TrainHooks, train

RUNNING = "running"
PAUSED = "paused-awaiting-annotation"
FINISHED = "finished"
FAILED = "failed"


class ServiceError(Exception):
    def __init__(self, status_code: int, code: str, message: str):
        self.status_code = status_code
        self.code = code
        self.message = message
        super().__init__(message)


@dataclass
class AnnotationTask:
    task_id: str
    candidate: dict
    incumbents: list
    p_version: int
    iteration: int
    status: str = "pending"

    def to_jsonable(self) -> dict:
        return {
            "task_id": self.task_id,
            "candidate": self.candidate,
            "incumbents": self.incumbents,
            "p_version": self.p_version,
            "iteration": self.iteration,
            "status": self.status,
        }


@dataclass
class RunEntry:
    run_id: str
    cfg: TrainConfig
    lock: threading.Lock = field(default_factory=threading.Lock)
    resume: threading.Event = field(default_factory=threading.Event)
    status: str = RUNNING
    error: str | None = None
    metrics: list = field(default_factory=list)
    tasks: dict = field(default_factory=dict)
    judgments: list = field(default_factory=list)
    preferred_snapshot: dict | None = None
    accepted: int = 0
    consumed: int = 0
    fallbacks: int = 0
    stop_requested: bool = False
    thread: threading.Thread | None = None

    def handle(self) -> dict:
        with self.lock:
            latest = self.metrics[-1].to_jsonable() if self.metrics else None
            return {
                "run_id": self.run_id,
                "status": self.status,
                "error": self.error,
                "iterations_done": len(self.metrics),
                "latest_metrics": latest,
                "judgments_accepted": self.accepted,
                "judgments_consumed": self.consumed,
                "oracle_fallbacks": self.fallbacks,
                "config": self.cfg.to_dict(),
            }


class RunManager:
    """Owns every live run; one training thread per run."""

    def __init__(self, runs_root: str | None = None):
        self.runs_root = runs_root
        self._runs: dict[str, RunEntry] = {}
        self._lock = threading.Lock()

    def get(self, run_id: str) -> RunEntry:
        entry = self._runs.get(run_id)
        if entry is None:
            raise ServiceError(404, "unknown_run", f"no run with id {run_id!r}")
        return entry

    def start(self, cfg: TrainConfig, run_id: str | None = None) -> RunEntry:
        run_id = run_id or uuid.uuid4().hex[:12]
        with self._lock:
            if run_id in self._runs:
                raise ServiceError(409, "duplicate_run",
                                   f"run {run_id!r} already exists")
            entry = RunEntry(run_id=run_id, cfg=cfg)
            self._runs[run_id] = entry
        out_dir = f"{self.runs_root}/{run_id}" if self.runs_root else None
        hooks = TrainHooks(
            on_metrics=lambda m: self._on_metrics(entry, m),
            on_preferred_update=lambda p: self._on_preferred(entry, p, cfg),
            should_stop=lambda: entry.stop_requested,
        )
        if cfg.annotation.mode == "human":
            hooks.judgment_provider = lambda k, cands, pref: self._provide(
                entry, k, cands, pref)
        entry.thread = threading.Thread(
            target=self._run, args=(entry, cfg, out_dir, hooks), daemon=True)
        entry.thread.start()
        return entry

    def stop_all(self) -> None:
        with self._lock:
            entries = list(self._runs.values())
        for e in entries:
            e.stop_requested = True
            e.resume.set()
        for e in entries:
            if e.thread is not None:
                e.thread.join(timeout=30)

    def _run(self, entry: RunEntry, cfg: TrainConfig, out_dir, hooks) -> None:
        try:
            train(cfg, out_dir=out_dir, hooks=hooks)
            with entry.lock:
                entry.status = FINISHED
        except Exception as exc:  # keep the partial record, surface the error
            with entry.lock:
                entry.status = FAILED
                entry.error = f"{type(exc).__name__}: {exc}"

    def _on_metrics(self, entry: RunEntry, m) -> None:
        with entry.lock:
            entry.metrics.append(m)

    def _on_preferred(self, entry: RunEntry, preferred, cfg: TrainConfig) -> None:
        with entry.lock:
            entry.preferred_snapshot = preferred.to_jsonable(cfg.env)

    def _provide(self, entry: RunEntry, iteration: int, candidates, preferred):
        """Trainer-side barrier: publish tasks, block until all are judged.

        Returns the recorded judgments, or None to make the trainer fall
        back to the oracle (timeout with fallback enabled, or shutdown).
        """
        kind = entry.cfg.env
        with entry.lock:
            entry.tasks = {}
            entry.judgments = []
            incumbents = [trajectory_summary(t, kind) for t in preferred.items]
            for cand in candidates:
                tid = f"i{iteration}-{cand.traj_id}"
                entry.tasks[tid] = AnnotationTask(
                    task_id=tid,
                    candidate=trajectory_summary(cand, kind),
                    incumbents=incumbents,
                    p_version=preferred.version,
                    iteration=iteration,
                )
            if not entry.tasks:
                return []
            entry.status = PAUSED
            entry.resume.clear()
        # timeout only applies when oracle fallback is enabled; otherwise the
        # run waits indefinitely (polling so shutdown can interrupt)
        ann_cfg = entry.cfg.annotation
        timeout = ann_cfg.pause_timeout_s if ann_cfg.fallback_to_oracle else None
        while True:
            done = entry.resume.wait(timeout=timeout if timeout else 1.0)
            if entry.stop_requested:
                return None
            if done:
                break
            if timeout:
                with entry.lock:
                    entry.status = RUNNING
                    entry.fallbacks += 1
                    for t in entry.tasks.values():
                        t.status = "expired"
                return None
        with entry.lock:
            entry.status = RUNNING
            judgments = list(entry.judgments)
            entry.consumed += len(judgments)
            for t in entry.tasks.values():
                t.status = "expired"
            entry.judgments = []
        return judgments


class StartRunBody(BaseModel):
    config: dict
    run_id: str | None = None


class OutcomeBody(BaseModel):
    candidate_id: str
    incumbent_id: str
    outcome: str


class JudgmentBody(BaseModel):
    p_version: int
    outcomes: list[OutcomeBody]


def create_app(runs_root: str | None = None) -> FastAPI:
    app = FastAPI(title="prefguide annotation service")
    manager = RunManager(runs_root=runs_root)
    app.state.manager = manager

    @app.exception_handler(ServiceError)
    async def _service_error(_req: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code,
                            content={"code": exc.code, "message": exc.message})

    @app.post("/runs", status_code=201)
    def start_run(body: StartRunBody):
        try:
            cfg = config_from_dict(body.config)
        except ConfigError as exc:
            raise ServiceError(400, "invalid_config", str(exc))
        entry = manager.start(cfg, body.run_id)
        return entry.handle()

    @app.get("/runs/{run_id}")
    def run_status(run_id: str):
        return manager.get(run_id).handle()

    @app.get("/runs/{run_id}/annotations/pending")
    def pending_tasks(run_id: str):
        entry = manager.get(run_id)
        with entry.lock:
            return [t.to_jsonable() for t in entry.tasks.values()
                    if t.status == "pending"]

    @app.post("/runs/{run_id}/annotations/{task_id}")
    def submit_judgment(run_id: str, task_id: str, body: JudgmentBody):
        entry = manager.get(run_id)
        with entry.lock:
            task = entry.tasks.get(task_id)
            if task is None:
                raise ServiceError(404, "unknown_task",
                                   f"no task with id {task_id!r}")
            if task.status == "judged":
                raise ServiceError(409, "already_judged",
                                   "task was already judged")
            if task.status == "expired":
                raise ServiceError(409, "expired_task",
                                   "task belongs to a finished iteration")
            if body.p_version != task.p_version:
                raise ServiceError(409, "stale_version",
                                   f"preferred set moved on (task version "
                                   f"{task.p_version}, got {body.p_version})")
            for o in body.outcomes:
                if o.outcome not in OUTCOMES:
                    raise ServiceError(400, "invalid_outcome",
                                       f"outcome must be one of {OUTCOMES}")
            for o in body.outcomes:
                entry.judgments.append(
                    Judgment(o.candidate_id, o.incumbent_id, o.outcome))
            entry.accepted += len(body.outcomes)
            task.status = "judged"
            all_done = all(t.status != "pending" for t in entry.tasks.values())
            if all_done:
                entry.resume.set()
        return {"accepted": len(body.outcomes), "resumed": all_done}

    @app.get("/runs/{run_id}/metrics")
    def metrics_feed(run_id: str, since: int = -1):
        entry = manager.get(run_id)
        with entry.lock:
            return [m.to_jsonable() for m in entry.metrics if m.iteration > since]

    @app.get("/runs/{run_id}/preferred")
    def preferred_snapshot(run_id: str):
        entry = manager.get(run_id)
        with entry.lock:
            return entry.preferred_snapshot or {"version": 0, "h": entry.cfg.preferred_capacity, "items": []}

    @app.get("/runs/{run_id}/map")
    def run_map(run_id: str):
        entry = manager.get(run_id)
        cfg = entry.cfg
        if cfg.env == "grid":
            if cfg.map_path:
                with open(cfg.map_path, encoding="utf-8") as fh:
                    text = fh.read()
            else:
                from importlib import resources
                text = resources.files("prefguide").joinpath(
                    "maps/key_door_treasure.txt").read_text()
            return {"env": "grid", "text": text}
        return {"env": "line", "length": cfg.line.length, "v_max": cfg.line.v_max}

    @app.on_event("shutdown")
    def _shutdown():
        manager.stop_all()

    return app
