"""Persistent ask/tell campaigns: the bridge between the optimization engine,
the event-sourced store, and the oracles.

Every externally visible action (create, suggest, tell) appends events and
rewrites the snapshot, so a campaign can be killed and resumed at any
boundary with bit-identical continuation.
"""

from __future__ import annotations

import csv
import os
import time
import uuid
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import engine, store
from .bench import TaskSpec, parse_llm_endpoint
from .engine import LoopConfig, Mode, RunState
from .oracle import (
    LlmOracle,
    OracleFailure,
    RealObjectiveOracle,
    TranscriptWriter,
    propose_initial_points,
)
from .space import Origin, denormalize_point, normalize_point
from .store import CampaignState, Event, Status


class CampaignActionError(RuntimeError):
    """Action rejected; ``code`` mirrors the service's error taxonomy."""

    def __init__(self, code: str, message: str, detail: Optional[dict] = None):
        self.code = code
        self.detail = detail or {}
        super().__init__(message)


_CLIENT_KEYS = ("model_name", "api_key_env_var", "max_retries", "temperature", "prior_knowledge")


def build_oracles(task: TaskSpec, oracle_cfg: dict, seed: int, transcript_path=None):
    client_kw = {k: oracle_cfg[k] for k in _CLIENT_KEYS if k in oracle_cfg}
    try:
        llm = parse_llm_endpoint(
            oracle_cfg.get("llm_endpoint", "synthetic:scaled1"), task, seed, **client_kw
        )
    except ValueError as e:
        raise CampaignActionError("ValidationFailed", str(e)) from e
    if isinstance(llm, LlmOracle) and transcript_path:
        llm.transcript = TranscriptWriter(transcript_path)
    auto = oracle_cfg.get("auto_real_oracle", "synthetic")
    real = None
    if auto == "synthetic":
        real = RealObjectiveOracle(task.resolve_objective())
    elif auto != "none":
        raise CampaignActionError(
            "ValidationFailed", f"auto_real_oracle must be 'none' or 'synthetic', got {auto!r}"
        )
    return llm, real


class Campaign:
    """One persisted campaign: single writer, event journal, snapshots."""

    def __init__(self, root: str, state: CampaignState, llm_oracle, real_oracle):
        self.root = root
        self.state = state
        self.llm_oracle = llm_oracle
        self.real_oracle = real_oracle
        self._seq = state.last_seq

    # -- construction ------------------------------------------------------

    @staticmethod
    def create(
        root: str,
        task: TaskSpec,
        cfg: LoopConfig,
        oracle_cfg: dict,
        campaign_id: Optional[str] = None,
    ) -> "Campaign":
        campaign_id = campaign_id or uuid.uuid4().hex[:12]
        cdir = store.campaign_dir(root, campaign_id)
        os.makedirs(cdir, exist_ok=True)
        transcript = os.path.join(cdir, "transcripts.jsonl")
        llm_oracle, real_oracle = build_oracles(task, oracle_cfg, cfg.seed, transcript)

        run = engine.start_state(cfg, task.space)
        if oracle_cfg.get("llm_init") and isinstance(llm_oracle, LlmOracle):
            init_points = propose_initial_points(
                llm_oracle.cfg,
                task.space,
                cfg.n_init_real,
                transport=llm_oracle.transport,
                transcript=llm_oracle.transcript,
            )
        else:
            init_points = engine.propose_warm_points(cfg, task.space, run)
        engine.run_warm_llm(cfg, task.space, run, llm_oracle, init_points)

        state = CampaignState(
            id=campaign_id, task=task, cfg=cfg, oracle_cfg=oracle_cfg, run=run
        )
        c = Campaign(root, state, llm_oracle, real_oracle)

        manual = real_oracle is None
        init_pending = [
            {
                "x_raw": [float(v) for v in p],
                "x_norm": [float(v) for v in normalize_point(task.space, p)],
                "sigma": 0.0,
                "candidate_index": None,
                "origin": Origin.WARM_START_INIT.value,
            }
            for p in init_points
        ]
        events = [
            c._event(
                "Init",
                {
                    "id": campaign_id,
                    "task": task.to_dict(),
                    "cfg": cfg.to_dict(),
                    "oracle_cfg": oracle_cfg,
                    "init_points": [list(map(float, p)) for p in init_points],
                    "pending": init_pending if manual else [],
                    "status_after": Status.WARM_START.value,
                },
                rng=True,
            )
        ]
        for o in run.ds.llm_obs:
            events.append(
                c._event(
                    "LlmObserved",
                    {
                        "x_raw": list(o.x),
                        "y": o.y,
                        "iteration": 0,
                        "origin": o.origin.value,
                        "candidate_index": None,
                    },
                )
            )
        if manual:
            run.pending = [dict(p) for p in init_pending]
            state.status = Status.AWAITING_OBSERVATIONS
            events[-1].payload["status_after"] = Status.AWAITING_OBSERVATIONS.value
        else:
            ys = real_oracle.evaluate_batch(init_points, run.ds)
            engine.apply_init_measurements(cfg, run, init_points, ys)
            for p, y in zip(init_points, ys):
                events.append(
                    c._event(
                        "RealObserved",
                        {
                            "x_raw": [float(v) for v in p],
                            "x_norm": [float(v) for v in normalize_point(task.space, p)],
                            "y": float(y),
                            "width": 0.0,
                            "iteration": 0,
                            "origin": Origin.WARM_START_INIT.value,
                        },
                    )
                )
            state.status = Status.AWAITING_SUGGEST
            events[-1].payload["status_after"] = Status.AWAITING_SUGGEST.value
        c._commit(events)
        return c

    @staticmethod
    def resume(root: str, campaign_id: str) -> "Campaign":
        state = store.resume(root, campaign_id)
        cdir = store.campaign_dir(root, campaign_id)
        llm_oracle, real_oracle = build_oracles(
            state.task,
            state.oracle_cfg,
            state.cfg.seed,
            os.path.join(cdir, "transcripts.jsonl"),
        )
        return Campaign(root, state, llm_oracle, real_oracle)

    # -- actions -----------------------------------------------------------

    def suggest(self) -> dict:
        """One loop step: rebuild, select, query the cheap fidelity, gate.

        Gated candidates become pending; with an auto real oracle they are
        measured inline and the campaign stays ready for the next suggest.
        """
        st = self.state
        if st.status is Status.FINISHED:
            raise CampaignActionError("InvalidState", "campaign is finished")
        if st.status is not Status.AWAITING_SUGGEST:
            raise CampaignActionError(
                "InvalidState", f"suggest requires awaiting_suggest, status is {st.status.value}"
            )
        if st.run.real_used >= st.cfg.real_budget_T:
            self._finish("budget_exhausted")
            raise CampaignActionError("BudgetExhausted", "real-fidelity budget is exhausted")
        if st.run.iteration >= st.cfg.max_iterations:
            self._finish("max_iterations")
            raise CampaignActionError("InvalidState", "iteration cap reached")

        try:
            result = engine.begin_iteration(st.run, st.cfg, self.llm_oracle)
        except OracleFailure as e:
            raise CampaignActionError(
                "OracleUnavailable", f"LLM oracle failed after {e.attempts} attempts"
            ) from e
        rec = result.record
        events = [
            self._event(
                "BatchSelected",
                {
                    "iteration": rec.iteration,
                    "candidates": [
                        {
                            "x_raw": list(c.x_raw),
                            "x_norm": list(c.x_norm),
                            "dropped": c.gate_decision == "dropped",
                        }
                        for c in rec.candidates
                    ],
                    "rho": rec.rho,
                    "params_llm": None if st.run.warm_llm is None else st.run.warm_llm.to_dict(),
                    "params_delta": None
                    if st.run.warm_delta is None
                    else st.run.warm_delta.to_dict(),
                },
                rng=True,
            )
        ]
        for i, c in enumerate(rec.candidates):
            if c.gate_decision == "dropped":
                continue
            if c.y_llm is not None:
                events.append(
                    self._event(
                        "LlmObserved",
                        {
                            "x_raw": list(c.x_raw),
                            "y": c.y_llm,
                            "iteration": rec.iteration,
                            "origin": Origin.LOOP_BATCH.value,
                            "candidate_index": i,
                        },
                    )
                )
            events.append(
                self._event(
                    "Gate",
                    {
                        "candidate_index": i,
                        "x_norm": list(c.x_norm),
                        "p_delta": c.p_delta,
                        "tau": st.cfg.tau,
                        "decision": c.gate_decision,
                        "override": c.override,
                        "sigma": c.sigma_r_pre,
                        "budget_denied": c.budget_denied,
                        "already_measured": c.already_measured,
                        "existing_y": c.y_real if c.already_measured else None,
                    },
                )
            )
        events.append(self._event("RhoUpdated", {"iteration": rec.iteration, "rho": rec.rho}))

        if self.real_oracle is not None:
            for entry in list(result.pending):
                y = self.real_oracle.evaluate_batch([np.asarray(entry["x_raw"])], st.run.ds)[0]
                engine.complete_pending(st.run, entry, y, Origin.LOOP_BATCH)
                events.append(
                    self._event(
                        "RealObserved",
                        {
                            "x_raw": list(entry["x_raw"]),
                            "x_norm": list(entry["x_norm"]),
                            "y": float(y),
                            "width": entry["sigma"],
                            "iteration": rec.iteration,
                            "origin": Origin.LOOP_BATCH.value,
                        },
                    )
                )
            if st.run.real_used >= st.cfg.real_budget_T:
                st.status = Status.FINISHED
                st.run.finish_reason = "budget_exhausted"
                events.append(
                    self._event(
                        "Finished",
                        {"reason": "budget_exhausted", "status_after": Status.FINISHED.value},
                    )
                )
            else:
                events[-1].payload["status_after"] = Status.AWAITING_SUGGEST.value
        else:
            for entry in st.run.pending:
                entry.setdefault("origin", Origin.HUMAN_TELL.value)
            if st.run.pending:
                st.status = Status.AWAITING_OBSERVATIONS
                events[-1].payload["status_after"] = Status.AWAITING_OBSERVATIONS.value
            elif st.run.real_used >= st.cfg.real_budget_T:
                st.status = Status.FINISHED
                st.run.finish_reason = "budget_exhausted"
                events.append(
                    self._event(
                        "Finished",
                        {"reason": "budget_exhausted", "status_after": Status.FINISHED.value},
                    )
                )
            else:
                events[-1].payload["status_after"] = Status.AWAITING_SUGGEST.value
        self._commit(events)
        return {
            "iteration": rec.iteration,
            "candidates": [
                {
                    "x": list(c.x_raw),
                    "y_llm": c.y_llm,
                    "p_delta": c.p_delta,
                    "gate": "needs_experiment"
                    if c.gate_decision == "needs_experiment"
                    else ("dropped" if c.gate_decision == "dropped" else "llm_accepted"),
                    "budget_denied": c.budget_denied,
                    "y_real": c.y_real,
                }
                for c in rec.candidates
            ],
            "rho": rec.rho,
            "budget_remaining": st.cfg.real_budget_T - st.run.real_used,
            "pending": [{"x": list(p["x_raw"])} for p in st.run.pending],
            "status": st.status.value,
        }

    def tell(self, entries: Sequence[dict]) -> dict:
        """Commit measured outcomes for pending candidates (raw units)."""
        st = self.state
        if st.status is not Status.AWAITING_OBSERVATIONS:
            raise CampaignActionError(
                "InvalidState", f"tell requires awaiting_observations, status is {st.status.value}"
            )
        if not entries:
            raise CampaignActionError("ValidationFailed", "no observations supplied")
        staged = []
        for e in entries:
            try:
                x = np.asarray([float(v) for v in e["x"]], dtype=float)
                y = float(e["y"])
            except (KeyError, TypeError, ValueError):
                raise CampaignActionError(
                    "ValidationFailed", f"entry {e!r} must carry numeric x and y"
                ) from None
            if not np.isfinite(y) or not np.all(np.isfinite(x)):
                raise CampaignActionError("ValidationFailed", f"entry {e!r} is not finite")
            match = None
            for p in st.run.pending:
                if p in (m[0] for m in staged):
                    continue
                if np.max(np.abs(np.asarray(p["x_raw"]) - x)) <= 1e-9:
                    match = p
                    break
            if match is None:
                raise CampaignActionError(
                    "ValidationFailed",
                    f"x {x.tolist()} does not match a pending candidate",
                    detail={"pending": [list(p["x_raw"]) for p in st.run.pending]},
                )
            staged.append((match, y))
        events = []
        for match, y in staged:
            origin = Origin(match.get("origin", Origin.HUMAN_TELL.value))
            engine.complete_pending(st.run, match, y, origin)
            events.append(
                self._event(
                    "HumanTell",
                    {
                        "x_raw": list(match["x_raw"]),
                        "x_norm": list(match["x_norm"]),
                        "y": y,
                        "width": match["sigma"],
                        "iteration": st.run.iteration,
                        "origin": origin.value,
                    },
                )
            )
        if not st.run.pending:
            if st.run.real_used >= st.cfg.real_budget_T:
                st.status = Status.FINISHED
                st.run.finish_reason = "budget_exhausted"
                events.append(
                    self._event(
                        "Finished",
                        {"reason": "budget_exhausted", "status_after": Status.FINISHED.value},
                    )
                )
            else:
                st.status = Status.AWAITING_SUGGEST
                events[-1].payload["status_after"] = Status.AWAITING_SUGGEST.value
        self._commit(events)
        return {
            "accepted": len(staged),
            "best_so_far": None if not st.run.convergence else st.run.best_so_far,
            "budget_remaining": st.cfg.real_budget_T - st.run.real_used,
            "pending": [{"x": list(p["x_raw"])} for p in st.run.pending],
            "status": st.status.value,
        }

    def history(self) -> dict:
        st = self.state
        run = st.run
        gate_records = []
        rho_series = []
        for r in run.records:
            rho_series.append({"iteration": r.iteration, "rho": r.rho})
            for c in r.candidates:
                if c.p_delta is None and c.gate_decision == "dropped":
                    continue
                gate_records.append(
                    {
                        "iteration": r.iteration,
                        "x": list(c.x_raw),
                        "p_delta": c.p_delta,
                        "tau": st.cfg.tau,
                        "decision": c.gate_decision,
                        "override": c.override,
                    }
                )
        return {
            "id": st.id,
            "status": st.status.value,
            "task": st.task.to_dict(),
            "tau": st.cfg.tau,
            "budget": {
                "real_used": run.real_used,
                "real_total": st.cfg.real_budget_T,
                "llm_used": run.llm_used,
            },
            "observations": {
                "real": [o.to_dict() for o in run.ds.real_obs],
                "llm": [o.to_dict() for o in run.ds.llm_obs],
            },
            "iterations": [r.to_dict() for r in run.records],
            "gate_records": gate_records,
            "convergence": list(run.convergence),
            "rho_series": rho_series,
            "best_so_far": None if not run.convergence else run.best_so_far,
            "best_x": None if run.best_x is None else list(run.best_x),
            "pending": [{"x": list(p["x_raw"])} for p in run.pending],
            "finish_reason": run.finish_reason,
        }

    def diagnostics(self) -> dict:
        st = self.state
        spec = engine.final_kernel_spec(st.run, st.cfg)
        d = engine.compute_diagnostics(
            st.run.records, st.run.real_trace, known_optimum=st.task.known_optimum, kernel=spec
        )
        return d.to_dict()

    def run_to_completion(self, max_steps: int = 10_000) -> dict:
        if self.real_oracle is None:
            raise CampaignActionError(
                "InvalidState", "run_to_completion needs an auto real oracle"
            )
        steps = 0
        while self.state.status is Status.AWAITING_SUGGEST and steps < max_steps:
            try:
                self.suggest()
            except CampaignActionError as e:
                if e.code in ("BudgetExhausted", "InvalidState"):
                    break
                raise
            steps += 1
        return self.history()

    # -- internals ----------------------------------------------------------

    def _event(self, etype: str, payload: dict, rng: bool = False) -> Event:
        self._seq += 1
        return Event(
            seq=self._seq,
            ts=time.time(),
            type=etype,
            payload=payload,
            rng_state=store.rng_state_to_json(self.state.run.rng) if rng else None,
        )

    def _finish(self, reason: str) -> None:
        self.state.status = Status.FINISHED
        self.state.run.finish_reason = reason
        self._commit(
            [self._event("Finished", {"reason": reason, "status_after": Status.FINISHED.value})]
        )

    def _commit(self, events: Sequence[Event]) -> None:
        store.append_events(self.root, self.state, events)
        self.state.last_seq = self._seq
        store.save(self.root, self.state)
        self._write_metrics()

    def _write_metrics(self) -> None:
        path = os.path.join(store.campaign_dir(self.root, self.state.id), "metrics.csv")
        rows = engine.metrics_rows(self.state.run.records)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["iteration", "real_used", "llm_used", "rho", "best_so_far", "p_delta_min", "p_delta_max"]
            )
            for row in rows:
                writer.writerow(
                    [
                        row["iteration"],
                        row["real_used"],
                        row["llm_used"],
                        row["rho"],
                        row["best_so_far"],
                        row["p_delta_min"],
                        row["p_delta_max"],
                    ]
                )
