"""Durable campaign state: versioned snapshots, an append-only event log,
resume, and independent replay.

Storage is plain files under one directory per campaign: ``snapshot.json``
(atomic replace), ``events.jsonl`` (fsynced appends), ``metrics.csv``,
``transcripts.jsonl``, and ``lock``. Replaying the event log from the
initial event reproduces the snapshot byte for byte; the replay path is a
deliberately independent implementation of the state mutations.
"""

from __future__ import annotations

import enum
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bench import TaskSpec
from .engine import (
    CandidateRecord,
    IterationRecord,
    LoopConfig,
    Mode,
    RealQueryTrace,
    RunState,
)
from .gp import KernelParams
from .space import Fidelity, FidelityDataset, Observation, Origin, normalize_point

SCHEMA_VERSION = 1

EVENT_TYPES = (
    "Init",
    "RealObserved",
    "LlmObserved",
    "Gate",
    "RhoUpdated",
    "BatchSelected",
    "Finished",
    "HumanTell",
)


class VersionError(RuntimeError):
    pass


class CorruptLog(RuntimeError):
    """Raised when the event log has a broken tail; carries the usable prefix."""

    def __init__(self, seq: int, recovered_state: Optional["CampaignState"]):
        self.seq = seq
        self.recovered_state = recovered_state
        super().__init__(f"event log corrupt after seq {seq}")


class InvalidTransition(RuntimeError):
    def __init__(self, status: "Status", event_type: str):
        self.status = status
        self.event_type = event_type
        super().__init__(f"event {event_type} is invalid in status {status.value}")


class LockHeld(RuntimeError):
    pass


class Status(str, enum.Enum):
    WARM_START = "warm_start"
    AWAITING_SUGGEST = "awaiting_suggest"
    AWAITING_OBSERVATIONS = "awaiting_observations"
    FINISHED = "finished"


@dataclass
class Event:
    seq: int
    ts: float
    type: str
    payload: dict
    rng_state: Optional[dict] = None

    def to_dict(self) -> dict:
        d = {"seq": self.seq, "ts": self.ts, "type": self.type, "payload": self.payload}
        if self.rng_state is not None:
            d["rng_state"] = self.rng_state
        return d

    @staticmethod
    def from_dict(d: dict) -> "Event":
        return Event(d["seq"], d["ts"], d["type"], d["payload"], d.get("rng_state"))


def rng_state_to_json(rng: np.random.Generator) -> dict:
    def conv(v):
        if isinstance(v, np.ndarray):
            return [int(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    return conv(rng.bit_generator.state)


def rng_from_json(state: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.Philox())
    restored = dict(state)
    inner = dict(restored["state"])
    inner["counter"] = np.array(inner["counter"], dtype=np.uint64)
    inner["key"] = np.array(inner["key"], dtype=np.uint64)
    restored["state"] = inner
    if "buffer" in restored:
        restored["buffer"] = np.array(restored["buffer"], dtype=np.uint64)
    rng.bit_generator.state = restored
    return rng


@dataclass
class CampaignState:
    """The persisted unit of a run: task, config, datasets, counters, log head."""

    id: str
    task: TaskSpec
    cfg: LoopConfig
    oracle_cfg: dict
    run: RunState
    status: Status = Status.WARM_START
    last_seq: int = 0

    def to_json_dict(self) -> dict:
        r = self.run
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "task": self.task.to_dict(),
            "cfg": self.cfg.to_dict(),
            "oracle_cfg": self.oracle_cfg,
            "status": self.status.value,
            "last_seq": self.last_seq,
            "run": {
                "ds": r.ds.to_dict(),
                "real_used": r.real_used,
                "llm_used": r.llm_used,
                "iteration": r.iteration,
                "rng_state": rng_state_to_json(r.rng),
                "best_so_far": None if math.isinf(r.best_so_far) else r.best_so_far,
                "best_x": None if r.best_x is None else list(r.best_x),
                "convergence": r.convergence,
                "records": [rec.to_dict() for rec in r.records],
                "real_trace": [tr.to_dict() for tr in r.real_trace],
                "pool_evaluated": sorted(r.pool_evaluated),
                "warm_llm": None if r.warm_llm is None else r.warm_llm.to_dict(),
                "warm_delta": None if r.warm_delta is None else r.warm_delta.to_dict(),
                "last_rho": r.last_rho,
                "pending": r.pending,
                "finish_reason": r.finish_reason,
            },
        }

    @staticmethod
    def from_json_dict(d: dict) -> "CampaignState":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise VersionError(
                f"snapshot schema {d.get('schema_version')} != supported {SCHEMA_VERSION}"
            )
        task = TaskSpec.from_dict(d["task"])
        r = d["run"]
        run = RunState(
            space=task.space,
            ds=FidelityDataset.from_dict(task.space, r["ds"]),
            rng=rng_from_json(r["rng_state"]),
            real_used=r["real_used"],
            llm_used=r["llm_used"],
            iteration=r["iteration"],
            best_so_far=-math.inf if r["best_so_far"] is None else r["best_so_far"],
            best_x=None if r["best_x"] is None else tuple(r["best_x"]),
            convergence=list(r["convergence"]),
            records=[IterationRecord.from_dict(x) for x in r["records"]],
            real_trace=[RealQueryTrace.from_dict(x) for x in r["real_trace"]],
            pool_evaluated=set(r["pool_evaluated"]),
            warm_llm=None if r["warm_llm"] is None else KernelParams.from_dict(r["warm_llm"]),
            warm_delta=None
            if r["warm_delta"] is None
            else KernelParams.from_dict(r["warm_delta"]),
            last_rho=r["last_rho"],
            pending=[dict(p) for p in r["pending"]],
            finish_reason=r["finish_reason"],
        )
        return CampaignState(
            id=d["id"],
            task=task,
            cfg=LoopConfig.from_dict(d["cfg"]),
            oracle_cfg=d["oracle_cfg"],
            run=run,
            status=Status(d["status"]),
            last_seq=d["last_seq"],
        )

    def serialize(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False)


# ---------------------------------------------------------------------------
# Transition validation and the independent replay path
# ---------------------------------------------------------------------------

_ALLOWED = {
    Status.WARM_START: {"Init", "LlmObserved", "RealObserved", "Finished"},
    Status.AWAITING_SUGGEST: {
        "BatchSelected",
        "LlmObserved",
        "Gate",
        "RhoUpdated",
        "RealObserved",
        "Finished",
    },
    Status.AWAITING_OBSERVATIONS: {"HumanTell", "Finished"},
    Status.FINISHED: set(),
}


def validate_transition(status: Status, event_type: str) -> None:
    if event_type not in EVENT_TYPES:
        raise InvalidTransition(status, event_type)
    if event_type == "Init":
        if status is not Status.WARM_START:
            raise InvalidTransition(status, event_type)
        return
    if event_type not in _ALLOWED[status]:
        raise InvalidTransition(status, event_type)


def initial_state_from_init(event: Event) -> CampaignState:
    p = event.payload
    task = TaskSpec.from_dict(p["task"])
    cfg = LoopConfig.from_dict(p["cfg"])
    run = RunState(
        space=task.space,
        ds=FidelityDataset(task.space, enforce_pairing=cfg.mode is not Mode.VANILLA_BO),
        rng=rng_from_json(event.rng_state),
    )
    return CampaignState(
        id=p["id"],
        task=task,
        cfg=cfg,
        oracle_cfg=p["oracle_cfg"],
        run=run,
        status=Status.WARM_START,
        last_seq=event.seq,
    )


def apply_event(state: CampaignState, event: Event) -> CampaignState:
    """Pure state transition used by replay; mirrors the live engine exactly."""
    validate_transition(state.status, event.type)
    r = state.run
    p = event.payload
    et = event.type
    if et == "Init":
        raise InvalidTransition(state.status, "Init")  # only valid as the first event
    elif et == "LlmObserved":
        obs = Observation(
            tuple(p["x_raw"]), p["y"], Fidelity.LLM, p["iteration"], Origin(p["origin"])
        )
        r.ds = r.ds.insert(obs)
        r.llm_used += 1
        idx = p.get("candidate_index")
        if idx is not None and r.records:
            r.records[-1].candidates[idx].y_llm = p["y"]
            r.records[-1].llm_queries_used = r.llm_used
    elif et == "Gate":
        idx = p["candidate_index"]
        c = r.records[-1].candidates[idx]
        c.p_delta = p["p_delta"]
        c.override = p["override"]
        c.sigma_r_pre = p["sigma"]
        c.gate_decision = p["decision"]
        c.budget_denied = p["budget_denied"]
        c.already_measured = p.get("already_measured", False)
        if c.already_measured:
            c.y_real = p.get("existing_y")
        elif p["decision"] == "needs_experiment" and not p["budget_denied"]:
            r.pending.append(
                {
                    "x_raw": list(c.x_raw),
                    "x_norm": list(c.x_norm),
                    "sigma": p["sigma"],
                    "candidate_index": idx,
                }
            )
    elif et in ("RealObserved", "HumanTell"):
        origin = Origin(p["origin"])
        obs = Observation(tuple(p["x_raw"]), p["y"], Fidelity.REAL, p["iteration"], origin)
        r.ds = r.ds.insert(obs)
        r.real_used += 1
        if p["y"] > r.best_so_far:
            r.best_so_far = p["y"]
            r.best_x = tuple(p["x_raw"])
        r.convergence.append(r.best_so_far)
        if origin is not Origin.WARM_START_INIT:
            r.real_trace.append(
                RealQueryTrace(tuple(p["x_norm"]), p["y"], p["width"])
            )
        if state.task.space.is_pool_mode():
            pool = state.task.space.pool
            diffs = np.max(np.abs(pool - np.array(p["x_raw"])), axis=1)
            j = int(np.argmin(diffs))
            if diffs[j] <= 1e-9:
                r.pool_evaluated.add(j)
        r.pending = [
            q
            for q in r.pending
            if np.max(np.abs(np.array(q["x_raw"]) - np.array(p["x_raw"]))) > 1e-12
        ]
        for rec in reversed(r.records):
            hit = False
            for c in rec.candidates:
                if (
                    tuple(c.x_norm) == tuple(p["x_norm"])
                    and c.y_real is None
                    and c.gate_decision == "needs_experiment"
                ):
                    c.y_real = p["y"]
                    hit = True
                    break
            if hit:
                break
        if r.records:
            r.records[-1].best_so_far = r.best_so_far
            r.records[-1].real_queries_used = r.real_used
    elif et == "BatchSelected":
        r.iteration = p["iteration"]
        cands = [
            CandidateRecord(x_raw=tuple(c["x_raw"]), x_norm=tuple(c["x_norm"]))
            for c in p["candidates"]
        ]
        r.records.append(
            IterationRecord(
                iteration=p["iteration"],
                candidates=cands,
                rho=p["rho"],
                best_so_far=r.best_so_far,
                real_queries_used=r.real_used,
                llm_queries_used=r.llm_used,
            )
        )
        r.last_rho = p["rho"]
        if p.get("params_llm") is not None:
            r.warm_llm = KernelParams.from_dict(p["params_llm"])
        if p.get("params_delta") is not None:
            r.warm_delta = KernelParams.from_dict(p["params_delta"])
        for c, payload_c in zip(cands, p["candidates"]):
            if payload_c.get("dropped"):
                c.gate_decision = "dropped"
    elif et == "RhoUpdated":
        r.last_rho = p["rho"]
        if r.records:
            r.records[-1].rho = p["rho"]
    elif et == "Finished":
        r.finish_reason = p.get("reason")
    if event.rng_state is not None:
        r.rng = rng_from_json(event.rng_state)
    state.last_seq = event.seq
    state.status = Status(p["status_after"]) if "status_after" in p else state.status
    return state


def replay(events: Sequence[Event]) -> CampaignState:
    """Rebuild a campaign purely from its event log."""
    if not events or events[0].type != "Init":
        raise CorruptLog(0, None)
    state = initial_state_from_init(events[0])
    state.status = Status(events[0].payload.get("status_after", Status.WARM_START.value))
    for ev in events[1:]:
        state = apply_event(state, ev)
    return state


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def campaign_dir(root: str, campaign_id: str) -> str:
    return os.path.join(root, campaign_id)


def _snapshot_path(d: str) -> str:
    return os.path.join(d, "snapshot.json")


def _events_path(d: str) -> str:
    return os.path.join(d, "events.jsonl")


def save(root: str, state: CampaignState) -> str:
    """Atomic snapshot write: temp file then rename."""
    d = campaign_dir(root, state.id)
    os.makedirs(d, exist_ok=True)
    tmp = _snapshot_path(d) + ".tmp"
    data = state.serialize()
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, _snapshot_path(d))
    return _snapshot_path(d)


def append_events(root: str, state: CampaignState, events: Sequence[Event]) -> None:
    """Append journal lines (fsynced); the caller already applied the changes."""
    d = campaign_dir(root, state.id)
    os.makedirs(d, exist_ok=True)
    with open(_events_path(d), "a", encoding="utf-8") as f:
        for ev in events:
            f.write(json.dumps(ev.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
        f.flush()
        os.fsync(f.fileno())


def read_events(root: str, campaign_id: str) -> tuple[list[Event], Optional[int]]:
    """All parseable events plus the line number of a corrupt tail, if any."""
    path = _events_path(campaign_dir(root, campaign_id))
    events: list[Event] = []
    corrupt_at: Optional[int] = None
    if not os.path.exists(path):
        return events, corrupt_at
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                events.append(Event.from_dict(json.loads(stripped)))
            except (json.JSONDecodeError, KeyError):
                corrupt_at = i
                break
    return events, corrupt_at


def load_snapshot(root: str, campaign_id: str) -> CampaignState:
    path = _snapshot_path(campaign_dir(root, campaign_id))
    with open(path, encoding="utf-8") as f:
        return CampaignState.from_json_dict(json.load(f))


def resume(root: str, campaign_id: str) -> CampaignState:
    """Snapshot plus any trailing events appended after the last save.

    A truncated final log line raises :class:`CorruptLog` carrying the
    state recovered from the intact prefix.
    """
    state = load_snapshot(root, campaign_id)
    events, corrupt_at = read_events(root, campaign_id)
    trailing = [ev for ev in events if ev.seq > state.last_seq]
    for ev in trailing:
        state = apply_event(state, ev)
    if corrupt_at is not None:
        raise CorruptLog(events[-1].seq if events else 0, state)
    return state


class CampaignLock:
    """Single-writer lock per campaign directory (pid file, exclusive create)."""

    def __init__(self, root: str, campaign_id: str):
        self.path = os.path.join(campaign_dir(root, campaign_id), "lock")

    def acquire(self) -> "CampaignLock":
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            try:
                with open(self.path) as f:
                    pid = int(f.read().strip() or "0")
            except (OSError, ValueError):
                pid = 0
            if pid and _pid_alive(pid):
                raise LockHeld(f"campaign locked by pid {pid}") from None
            os.unlink(self.path)  # stale lock from a dead process
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        return self

    def release(self) -> None:
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass

    def __enter__(self):
        return self.acquire()

    def __exit__(self, *exc):
        self.release()


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except OSError:
        return False
    return True
