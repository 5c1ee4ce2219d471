"""HTTP rating service: pair scheduling, live judgements, durable replayable logs.

The service owns one Elo state per experiment.  The append-only JSON-lines
judgement log is the source of truth: every accepted judgement is fsynced to
disk before it is acknowledged or applied, and on startup each experiment's
state is rebuilt by replaying its log.  Writes to one experiment are funneled
through a single lock, so sequence numbers are gapless and snapshots never
observe a half-applied judgement.

Status codes: 200/201 success, 400 request validation, 404 unknown id,
409 conflict (duplicate name), 422 domain rejection (for example a winner
that is not part of the submitted pair, or an experiment with nothing left
to schedule).
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .elo import (
    EloConfig,
    EloState,
    JudgementRecord,
    JudgementRejected,
    SchedulingExhausted,
    read_log_lines,
    replay,
)

__all__ = ["create_app", "ExperimentStore", "ServiceSettings"]

PAIR_EXPIRY_SECONDS = 600


class ItemSpec(BaseModel):
    item_id: str = Field(min_length=1)
    group_id: str = Field(default="default", min_length=1)
    media_uri: str = ""


class GroupMedia(BaseModel):
    reference_uri: str = ""
    overview_uri: str = ""


class EloConfigSpec(BaseModel):
    k: float = Field(default=16.0, gt=0)
    m: float = Field(default=400.0, gt=0)
    initial_score: float = 1400.0
    mos_window: int = Field(default=32, ge=1)

    def to_config(self) -> EloConfig:
        return EloConfig(
            k=self.k, m=self.m, initial_score=self.initial_score, mos_window=self.mos_window
        )


class CreateExperimentRequest(BaseModel):
    name: str = Field(min_length=1)
    items: list[ItemSpec] = Field(min_length=2)
    config: EloConfigSpec = EloConfigSpec()
    strategy: str = Field(default="similar", pattern="^(similar|random)$")
    scheduler_seed: int | None = None
    groups: dict[str, GroupMedia] = {}


class JudgementBody(BaseModel):
    item_a: str
    item_b: str
    winner: str
    rater_id: str = Field(min_length=1)
    pair_id: str | None = None
    client_ts: int | None = None


class DomainRejection(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class _Assignment:
    pair_id: str
    item_a: str
    item_b: str
    group: str
    rater_id: str
    issued_at: float
    expires_at: float


@dataclass
class _Experiment:
    experiment_id: str
    name: str
    items: list[dict]
    config: EloConfig
    strategy: str
    scheduler_seed: int | None
    groups: dict[str, dict]
    created_at: float
    directory: Path
    state: EloState = None  # type: ignore[assignment]
    lock: threading.Lock = field(default_factory=threading.Lock)
    assignments: dict[str, _Assignment] = field(default_factory=dict)
    rng: np.random.Generator = None  # type: ignore[assignment]
    log_handle: object = None

    @property
    def log_path(self) -> Path:
        return self.directory / "log.jsonl"

    def manifest(self) -> dict:
        schedulable = set(self.state.schedulable_groups())
        group_names = {item["group_id"] for item in self.items}
        return {
            "experiment_id": self.experiment_id,
            "name": self.name,
            "items": self.items,
            "config": {
                "k": self.config.k,
                "m": self.config.m,
                "initial_score": self.config.initial_score,
                "mos_window": self.config.mos_window,
            },
            "strategy": self.strategy,
            "groups": self.groups,
            "created_at": self.created_at,
            "unschedulable_groups": sorted(group_names - schedulable),
            "total_judgements": self.state.total_judgements,
        }


class ExperimentStore:
    """File-backed registry of experiments with per-experiment serialized writes."""

    def __init__(self, data_dir: str | Path, self_audit: bool = False):
        self.data_dir = Path(data_dir)
        self.experiments_dir = self.data_dir / "experiments"
        self.experiments_dir.mkdir(parents=True, exist_ok=True)
        self.self_audit = self_audit
        self._registry_lock = threading.Lock()
        self._experiments: dict[str, _Experiment] = {}
        self._load_existing()

    # -- persistence ----------------------------------------------------

    def _load_existing(self) -> None:
        for directory in sorted(self.experiments_dir.iterdir()):
            manifest_path = directory / "experiment.json"
            if not manifest_path.is_file():
                continue
            data = json.loads(manifest_path.read_text(encoding="utf-8"))
            exp = _Experiment(
                experiment_id=data["experiment_id"],
                name=data["name"],
                items=data["items"],
                config=EloConfig(**data["config"]),
                strategy=data.get("strategy", "similar"),
                scheduler_seed=data.get("scheduler_seed"),
                groups=data.get("groups", {}),
                created_at=data["created_at"],
                directory=directory,
            )
            self._attach_state(exp)
            self._experiments[exp.experiment_id] = exp

    def _attach_state(self, exp: _Experiment) -> None:
        registrations = [(item["item_id"], item["group_id"]) for item in exp.items]
        if exp.log_path.exists():
            with exp.log_path.open("r", encoding="utf-8") as fh:
                records = list(read_log_lines(fh))
        else:
            records = []
        exp.state = replay(records, exp.config, registrations)
        exp.rng = np.random.default_rng(exp.scheduler_seed)
        exp.log_handle = exp.log_path.open("a", encoding="utf-8")

    # -- operations ------------------------------------------------------

    def create(self, request: CreateExperimentRequest) -> _Experiment:
        with self._registry_lock:
            if any(e.name == request.name for e in self._experiments.values()):
                raise DomainRejection(
                    "duplicate_name", f"experiment named {request.name!r} already exists"
                )
            seen = set()
            for item in request.items:
                if item.item_id in seen:
                    raise DomainRejection(
                        "duplicate_item", f"item id {item.item_id!r} appears twice"
                    )
                seen.add(item.item_id)
            group_sizes: dict[str, int] = {}
            for item in request.items:
                group_sizes[item.group_id] = group_sizes.get(item.group_id, 0) + 1
            if not any(size >= 2 for size in group_sizes.values()):
                raise DomainRejection(
                    "nothing_schedulable", "no group holds two or more items"
                )
            experiment_id = uuid.uuid4().hex[:12]
            directory = self.experiments_dir / experiment_id
            directory.mkdir(parents=True)
            exp = _Experiment(
                experiment_id=experiment_id,
                name=request.name,
                items=[item.model_dump() for item in request.items],
                config=request.config.to_config(),
                strategy=request.strategy,
                scheduler_seed=request.scheduler_seed,
                groups={k: v.model_dump() for k, v in request.groups.items()},
                created_at=time.time(),
                directory=directory,
            )
            manifest = {
                "experiment_id": exp.experiment_id,
                "name": exp.name,
                "items": exp.items,
                "config": {
                    "k": exp.config.k,
                    "m": exp.config.m,
                    "initial_score": exp.config.initial_score,
                    "mos_window": exp.config.mos_window,
                },
                "strategy": exp.strategy,
                "scheduler_seed": exp.scheduler_seed,
                "groups": exp.groups,
                "created_at": exp.created_at,
            }
            (directory / "experiment.json").write_text(
                json.dumps(manifest, indent=2), encoding="utf-8"
            )
            exp.log_path.touch()
            self._attach_state(exp)
            self._experiments[experiment_id] = exp
            return exp

    def get(self, experiment_id: str) -> _Experiment:
        exp = self._experiments.get(experiment_id)
        if exp is None:
            raise KeyError(experiment_id)
        return exp

    def next_pair(self, experiment_id: str, rater_id: str) -> dict:
        exp = self.get(experiment_id)
        with exp.lock:
            try:
                item_a, item_b = exp.state.next_pair(strategy=exp.strategy, rng=exp.rng)
            except SchedulingExhausted as exc:
                raise DomainRejection("no_schedulable_pairs", str(exc)) from None
            now = time.time()
            assignment = _Assignment(
                pair_id=uuid.uuid4().hex,
                item_a=item_a,
                item_b=item_b,
                group=exp.state.group_of(item_a),
                rater_id=rater_id,
                issued_at=now,
                expires_at=now + PAIR_EXPIRY_SECONDS,
            )
            exp.assignments[assignment.pair_id] = assignment
            if len(exp.assignments) > 10_000:
                self._purge_assignments(exp, now)
            media = {item["item_id"]: item.get("media_uri", "") for item in exp.items}
            group_media = exp.groups.get(assignment.group, {})
        return {
            "pair_id": assignment.pair_id,
            "experiment_id": experiment_id,
            "ref_group": assignment.group,
            "item_a": item_a,
            "item_b": item_b,
            "media": {
                "item_a": media.get(item_a, ""),
                "item_b": media.get(item_b, ""),
                "reference": group_media.get("reference_uri", ""),
                "overview": group_media.get("overview_uri", ""),
            },
            "issued_at": assignment.issued_at,
            "expires_at": assignment.expires_at,
        }

    @staticmethod
    def _purge_assignments(exp: _Experiment, now: float) -> None:
        stale = [pid for pid, a in exp.assignments.items() if a.expires_at < now]
        for pid in stale:
            del exp.assignments[pid]

    def submit_judgement(self, experiment_id: str, body: JudgementBody) -> dict:
        exp = self.get(experiment_id)
        with exp.lock:
            exp.state.validate_judgement(body.item_a, body.item_b)
            warning = None
            if body.pair_id is not None:
                assignment = exp.assignments.pop(body.pair_id, None)
                if assignment is None:
                    warning = "unknown_assignment"
                elif assignment.expires_at < time.time():
                    warning = "stale_assignment"
            try:
                record = JudgementRecord(
                    seq=exp.state.last_seq + 1,
                    item_a=body.item_a,
                    item_b=body.item_b,
                    winner=body.winner,
                    rater_id=body.rater_id,
                    timestamp_ms=int(time.time() * 1000),
                )
            except JudgementRejected:
                raise
            # Durability before acknowledgement: the line is flushed and
            # fsynced, then applied in memory.
            exp.log_handle.write(record.to_json_line() + "\n")
            exp.log_handle.flush()
            os.fsync(exp.log_handle.fileno())
            score_a, score_b = exp.state.apply(record)
            if self.self_audit:
                self._audit(exp)
            response = {
                "seq": record.seq,
                "scores": {body.item_a: score_a, body.item_b: score_b},
            }
            if warning:
                response["warning"] = warning
            return response

    def _audit(self, exp: _Experiment) -> None:
        with exp.log_path.open("r", encoding="utf-8") as fh:
            records = list(read_log_lines(fh))
        registrations = [(item["item_id"], item["group_id"]) for item in exp.items]
        replayed = replay(records, exp.config, registrations)
        if replayed.scores() != exp.state.scores():
            raise RuntimeError(
                f"self-audit failed: live state diverges from replay for {exp.experiment_id}"
            )

    def scores(self, experiment_id: str) -> dict:
        exp = self.get(experiment_id)
        with exp.lock:
            mos = exp.state.finalize_mos()
            items = {
                item_id: {
                    "score": exp.state.score(item_id),
                    "n_judgements": exp.state.n_judgements(item_id),
                    "mos": mos[item_id],
                    "group_id": exp.state.group_of(item_id),
                }
                for item_id in exp.state.item_ids()
            }
            total = exp.state.total_judgements
        return {
            "experiment_id": experiment_id,
            "total_judgements": total,
            "items": items,
        }

    def export_log(self, experiment_id: str) -> bytes:
        exp = self.get(experiment_id)
        with exp.lock:
            return exp.log_path.read_bytes()


@dataclass(frozen=True)
class ServiceSettings:
    data_dir: Path
    media_root: Path | None = None
    ui_root: Path | None = None
    self_audit: bool = False

    @classmethod
    def from_env(cls, **overrides) -> "ServiceSettings":
        def pick(key: str, env: str, default=None):
            if overrides.get(key) is not None:
                return overrides[key]
            value = os.environ.get(env)
            return value if value is not None else default

        data_dir = Path(pick("data_dir", "PQBENCH_DATA_DIR", "./pqbench-data"))
        media = pick("media_root", "PQBENCH_MEDIA_ROOT")
        ui = pick("ui_root", "PQBENCH_UI_ROOT")
        audit = pick("self_audit", "PQBENCH_SELF_AUDIT", False)
        if isinstance(audit, str):
            audit = audit not in ("", "0", "false", "no")
        return cls(
            data_dir=data_dir,
            media_root=Path(media) if media else None,
            ui_root=Path(ui) if ui else None,
            self_audit=bool(audit),
        )


def create_app(settings: ServiceSettings | None = None, **overrides) -> FastAPI:
    """Build the FastAPI application around a file-backed experiment store."""
    settings = settings or ServiceSettings.from_env(**overrides)
    store = ExperimentStore(settings.data_dir, self_audit=settings.self_audit)
    app = FastAPI(title="pqbench rating service")
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_request: Request, exc: RequestValidationError):
        fields = sorted(
            {".".join(str(p) for p in err["loc"] if p != "body") for err in exc.errors()}
        )
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "validation", "fields": fields}},
        )

    @app.exception_handler(DomainRejection)
    async def domain_handler(_request: Request, exc: DomainRejection):
        status = 409 if exc.code == "duplicate_name" else 422
        return JSONResponse(
            status_code=status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(JudgementRejected)
    async def judgement_handler(_request: Request, exc: JudgementRejected):
        return JSONResponse(
            status_code=422,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.exception_handler(KeyError)
    async def missing_handler(_request: Request, exc: KeyError):
        return JSONResponse(
            status_code=404,
            content={"error": {"code": "not_found", "message": str(exc.args[0])}},
        )

    @app.post("/api/v1/experiments", status_code=201)
    def create_experiment(request: CreateExperimentRequest):
        exp = store.create(request)
        return {"experiment_id": exp.experiment_id}

    @app.get("/api/v1/experiments/{experiment_id}")
    def get_experiment(experiment_id: str):
        return store.get(experiment_id).manifest()

    @app.get("/api/v1/experiments/{experiment_id}/next-pair")
    def next_pair(experiment_id: str, rater_id: str):
        return store.next_pair(experiment_id, rater_id)

    @app.post("/api/v1/experiments/{experiment_id}/judgements")
    def submit_judgement(experiment_id: str, body: JudgementBody):
        return store.submit_judgement(experiment_id, body)

    @app.get("/api/v1/experiments/{experiment_id}/scores")
    def scores(experiment_id: str):
        return store.scores(experiment_id)

    @app.get("/api/v1/experiments/{experiment_id}/export")
    def export_log(experiment_id: str):
        payload = store.export_log(experiment_id)
        return Response(content=payload, media_type="application/x-ndjson")

    if settings.media_root is not None:
        app.mount("/media", StaticFiles(directory=settings.media_root), name="media")
    if settings.ui_root is not None:
        app.mount("/ui", StaticFiles(directory=settings.ui_root, html=True), name="ui")
    return app
