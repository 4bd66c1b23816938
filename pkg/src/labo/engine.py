"""The dual-fidelity optimization loop, the vanilla-BO baseline, and
run diagnostics.

Each iteration rebuilds the composite surrogate, selects a q-UCB batch,
queries the cheap fidelity for every candidate, and sends a candidate to
the expensive fidelity exactly when the discrepancy-dominance gate fires
and budget remains.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .acquisition import AcquisitionConfig, lhs_sample, select_batch, unit_lhs
from .gp import GpModel, KernelParams, default_params, fit, fit_hyperparams, kernel_matrix
from .koh import (
    GateRecord,
    KohSurrogate,
    SingleModelSurrogate,
    SurrogateFitConfig,
    build_surrogate,
    fit_component_params,
    should_query_real,
)
from .oracle import OracleFailure, RandomUniform, SyntheticLowFidelity
from .space import (
    DesignSpace,
    FidelityDataset,
    Fidelity,
    Normalizer,
    Observation,
    Origin,
    denormalize_point,
    normalize_point,
    normalize_pool,
)


class BudgetExceeded(ValueError):
    pass


class Mode(str, enum.Enum):
    LABO = "labo"
    VANILLA_BO = "vanilla"
    RANDOM_FIDELITY = "random-fidelity"


@dataclass(frozen=True)
class LoopConfig:
    """Loop protocol constants plus engine knobs.

    Defaults follow the reference protocol: gating threshold 0.75, batches
    of two candidates, three initial real measurements, and fifty
    LLM-fidelity warm-up predictions.
    """

    real_budget_T: int
    tau: float = 0.75
    batch_size: int = 2
    n_init_real: int = 3
    n_warmup_llm: int = 50
    seed: int = 0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    max_iterations: int = 200
    mode: Mode = Mode.LABO
    gate_after_llm_insert: bool = False
    fit_initial: SurrogateFitConfig = field(default_factory=SurrogateFitConfig)
    fit_refit: SurrogateFitConfig = field(
        default_factory=lambda: SurrogateFitConfig(n_restarts=2)
    )

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        for name in ("real_budget_T", "batch_size", "n_init_real", "max_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_warmup_llm < 0:
            raise ValueError("n_warmup_llm must be >= 0")

    def to_dict(self) -> dict:
        return {
            "real_budget_T": self.real_budget_T,
            "tau": self.tau,
            "batch_size": self.batch_size,
            "n_init_real": self.n_init_real,
            "n_warmup_llm": self.n_warmup_llm,
            "seed": self.seed,
            "acquisition": self.acquisition.to_dict(),
            "max_iterations": self.max_iterations,
            "mode": self.mode.value,
            "gate_after_llm_insert": self.gate_after_llm_insert,
            "fit_initial": self.fit_initial.to_dict(),
            "fit_refit": self.fit_refit.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "LoopConfig":
        return LoopConfig(
            real_budget_T=d["real_budget_T"],
            tau=d["tau"],
            batch_size=d["batch_size"],
            n_init_real=d["n_init_real"],
            n_warmup_llm=d["n_warmup_llm"],
            seed=d["seed"],
            acquisition=AcquisitionConfig.from_dict(d["acquisition"]),
            max_iterations=d["max_iterations"],
            mode=Mode(d["mode"]),
            gate_after_llm_insert=d["gate_after_llm_insert"],
            fit_initial=SurrogateFitConfig.from_dict(d["fit_initial"]),
            fit_refit=SurrogateFitConfig.from_dict(d["fit_refit"]),
        )


@dataclass
class CandidateRecord:
    """Per-candidate outcome inside one iteration."""

    x_raw: tuple[float, ...]
    x_norm: tuple[float, ...]
    y_llm: Optional[float] = None
    p_delta: Optional[float] = None
    gate_decision: str = "needs_experiment"  # or "llm_accepted" / "dropped"
    override: bool = False
    y_real: Optional[float] = None
    budget_denied: bool = False
    sigma_r_pre: Optional[float] = None
    already_measured: bool = False  # gated real at an x that is already on file

    def to_dict(self) -> dict:
        return {
            "x_raw": list(self.x_raw),
            "x_norm": list(self.x_norm),
            "y_llm": self.y_llm,
            "p_delta": self.p_delta,
            "gate_decision": self.gate_decision,
            "override": self.override,
            "y_real": self.y_real,
            "budget_denied": self.budget_denied,
            "sigma_r_pre": self.sigma_r_pre,
            "already_measured": self.already_measured,
        }

    @staticmethod
    def from_dict(d: dict) -> "CandidateRecord":
        return CandidateRecord(
            x_raw=tuple(d["x_raw"]),
            x_norm=tuple(d["x_norm"]),
            y_llm=d["y_llm"],
            p_delta=d["p_delta"],
            gate_decision=d["gate_decision"],
            override=d["override"],
            y_real=d["y_real"],
            budget_denied=d["budget_denied"],
            sigma_r_pre=d["sigma_r_pre"],
            already_measured=d.get("already_measured", False),
        )


@dataclass
class IterationRecord:
    iteration: int
    candidates: list[CandidateRecord]
    rho: float
    best_so_far: float
    real_queries_used: int
    llm_queries_used: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "candidates": [c.to_dict() for c in self.candidates],
            "rho": self.rho,
            "best_so_far": self.best_so_far,
            "real_queries_used": self.real_queries_used,
            "llm_queries_used": self.llm_queries_used,
        }

    @staticmethod
    def from_dict(d: dict) -> "IterationRecord":
        return IterationRecord(
            iteration=d["iteration"],
            candidates=[CandidateRecord.from_dict(c) for c in d["candidates"]],
            rho=d["rho"],
            best_so_far=d["best_so_far"],
            real_queries_used=d["real_queries_used"],
            llm_queries_used=d["llm_queries_used"],
        )


@dataclass
class RealQueryTrace:
    """One expensive query: where, what came back, and the pre-query width."""

    x_norm: tuple[float, ...]
    y_raw: float
    width: float  # standardized composite sd before the query

    def to_dict(self) -> dict:
        return {"x_norm": list(self.x_norm), "y_raw": self.y_raw, "width": self.width}

    @staticmethod
    def from_dict(d: dict) -> "RealQueryTrace":
        return RealQueryTrace(tuple(d["x_norm"]), d["y_raw"], d["width"])


@dataclass(frozen=True)
class CompositeKernelSpec:
    """Final composite kernel rho^2 k_L + k_delta used for diagnostics."""

    rho: float
    params_llm: Optional[KernelParams]
    params_delta: KernelParams

    def matrix(self, xs: np.ndarray) -> np.ndarray:
        k = kernel_matrix(self.params_delta, xs)
        if self.params_llm is not None and self.rho != 0.0:
            k = k + self.rho**2 * kernel_matrix(self.params_llm, xs)
        return k

    @property
    def noise_variance(self) -> float:
        n = self.params_delta.noise_variance
        if self.params_llm is not None:
            n += self.rho**2 * self.params_llm.noise_variance
        return n


@dataclass
class DiagnosticsReport:
    width_sum: float
    info_gain_gamma: float
    width_bound: float
    n_real: int
    cumulative_regret: Optional[float] = None

    @property
    def width_ok(self) -> bool:
        return self.width_sum <= self.width_bound + 1e-6

    def to_dict(self) -> dict:
        return {
            "width_sum": self.width_sum,
            "info_gain_gamma": self.info_gain_gamma,
            "width_bound": self.width_bound,
            "n_real": self.n_real,
            "cumulative_regret": self.cumulative_regret,
            "width_ok": self.width_ok,
        }


Initializer = Callable[[DesignSpace, int, np.random.Generator], np.ndarray]


def lhs_initializer(space: DesignSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    """Benchmark-mode warm start: a seeded space-filling design, raw units."""
    unit = unit_lhs(n, space.n_dims, rng)
    return np.array([denormalize_point(space, u) for u in unit])


def pool_initializer(space: DesignSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.choice(space.pool.shape[0], size=min(n, space.pool.shape[0]), replace=False)
    return space.pool[np.sort(idx)]


def default_initializer(space: DesignSpace) -> Initializer:
    return pool_initializer if space.is_pool_mode() else lhs_initializer


@dataclass
class RunState:
    """Mutable single-owner state of a running campaign."""

    space: DesignSpace
    ds: FidelityDataset
    rng: np.random.Generator
    real_used: int = 0
    llm_used: int = 0
    iteration: int = 0
    best_so_far: float = -math.inf
    best_x: Optional[tuple[float, ...]] = None
    convergence: list[float] = field(default_factory=list)
    records: list[IterationRecord] = field(default_factory=list)
    real_trace: list[RealQueryTrace] = field(default_factory=list)
    pool_evaluated: set = field(default_factory=set)
    warm_llm: Optional[KernelParams] = None
    warm_delta: Optional[KernelParams] = None
    last_rho: float = 0.0
    pending: list[dict] = field(default_factory=list)
    finish_reason: Optional[str] = None


def _clip_llm(space: DesignSpace, y: float) -> float:
    return float(min(max(y, space.y_min), space.y_max))


def _record_real(
    state: RunState,
    x_raw: np.ndarray,
    x_norm: np.ndarray,
    y: float,
    width: float,
    origin: Origin,
) -> None:
    state.ds = state.ds.insert(
        Observation(tuple(x_raw), y, Fidelity.REAL, iteration=state.iteration, origin=origin)
    )
    state.real_used += 1
    if y > state.best_so_far:
        state.best_so_far = y
        state.best_x = tuple(float(v) for v in x_raw)
    state.convergence.append(state.best_so_far)
    if origin is not Origin.WARM_START_INIT:
        # init measurements predate any surrogate; only loop queries carry widths
        state.real_trace.append(
            RealQueryTrace(tuple(float(v) for v in x_norm), float(y), float(width))
        )
    if state.space.is_pool_mode():
        idx = _pool_index(state.space, x_raw)
        if idx is not None:
            state.pool_evaluated.add(idx)


def _pool_index(space: DesignSpace, x_raw: np.ndarray) -> Optional[int]:
    diffs = np.max(np.abs(space.pool - np.asarray(x_raw, dtype=float)), axis=1)
    j = int(np.argmin(diffs))
    return j if diffs[j] <= 1e-9 else None


def warm_start(
    cfg: LoopConfig,
    space: DesignSpace,
    real_oracle,
    llm_oracle,
    initializer: Optional[Initializer] = None,
    rng: Optional[np.random.Generator] = None,
) -> FidelityDataset:
    """Initialize both datasets: n_init_real paired points plus the LHS warm-up.

    The expensive fidelity is evaluated at the initializer's points; the
    cheap fidelity at those same points plus ``n_warmup_llm`` LHS samples,
    so every real observation starts out paired.
    """
    state = start_state(cfg, space, rng=rng)
    init_points = propose_warm_points(cfg, space, state, initializer)
    run_warm_llm(cfg, space, state, llm_oracle, init_points)
    ys = real_oracle.evaluate_batch(init_points, state.ds)
    apply_init_measurements(cfg, state, init_points, ys)
    return state.ds


def start_state(
    cfg: LoopConfig, space: DesignSpace, rng: Optional[np.random.Generator] = None
) -> RunState:
    if cfg.n_init_real > cfg.real_budget_T:
        raise BudgetExceeded(
            f"n_init_real {cfg.n_init_real} exceeds the real budget {cfg.real_budget_T}"
        )
    if rng is None:
        rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    ds = FidelityDataset(space, enforce_pairing=cfg.mode is not Mode.VANILLA_BO)
    return RunState(space=space, ds=ds, rng=rng)


def propose_warm_points(
    cfg: LoopConfig,
    space: DesignSpace,
    state: RunState,
    initializer: Optional[Initializer] = None,
) -> np.ndarray:
    initializer = initializer or default_initializer(space)
    return np.asarray(initializer(space, cfg.n_init_real, state.rng), dtype=float)


def run_warm_llm(
    cfg: LoopConfig,
    space: DesignSpace,
    state: RunState,
    llm_oracle,
    init_points: np.ndarray,
) -> None:
    """Query the cheap fidelity at the init points plus the LHS warm-up set."""
    if cfg.mode is Mode.VANILLA_BO:
        return
    if space.is_pool_mode():
        # tabular ground truth only exists at pool rows; cover those instead
        m = space.pool.shape[0]
        k = min(cfg.n_warmup_llm, m)
        idx = state.rng.choice(m, size=k, replace=False) if k else np.zeros(0, dtype=int)
        warm_raw = space.pool[np.sort(idx)]
    else:
        warm_unit = (
            unit_lhs(cfg.n_warmup_llm, space.n_dims, state.rng)
            if cfg.n_warmup_llm > 0
            else np.zeros((0, space.n_dims))
        )
        warm_raw = np.array([denormalize_point(space, u) for u in warm_unit]).reshape(
            -1, space.n_dims
        )
    all_points = np.vstack([init_points, warm_raw])
    values = llm_oracle.evaluate_batch(all_points, state.ds)
    for i, (p, v) in enumerate(zip(all_points, values)):
        origin = Origin.WARM_START_INIT if i < len(init_points) else Origin.WARM_START_LHS
        state.ds = state.ds.insert(
            Observation(tuple(p), _clip_llm(space, v), Fidelity.LLM, 0, origin)
        )
        state.llm_used += 1


def apply_init_measurements(
    cfg: LoopConfig, state: RunState, init_points: np.ndarray, ys: Sequence[float]
) -> None:
    for p, y in zip(init_points, ys):
        x_norm = normalize_point(state.space, p)
        _record_real(state, np.asarray(p), x_norm, float(y), 0.0, Origin.WARM_START_INIT)


def _build_iteration_surrogate(state: RunState, cfg: LoopConfig, seed: int):
    if cfg.mode is Mode.VANILLA_BO:
        # the baseline is standard GP-UCB: hyperparameters always fit by
        # type-II ML, without the dual-fidelity small-sample guard
        norm = Normalizer.from_dataset(state.ds)
        xr = state.ds.real_x_normalized()
        zr = norm.standardize(state.ds.real_y())
        fit_cfg = cfg.fit_initial if state.iteration == 0 else cfg.fit_refit
        if xr.shape[0] >= 2:
            params = fit_hyperparams(
                xr,
                zr,
                seed,
                n_restarts=fit_cfg.n_restarts,
                line_searches=fit_cfg.line_searches,
                isotropic=fit_cfg.isotropic,
                warm_start=state.warm_delta,
            )
        else:
            params = default_params(state.space.n_dims)
        model = fit(params, xr, zr)
        state.warm_delta = params
        return SingleModelSurrogate(model, norm)
    fit_cfg = cfg.fit_initial if state.iteration == 0 else cfg.fit_refit
    surrogate = build_surrogate(
        state.ds,
        seed,
        fit_cfg=fit_cfg,
        warm_llm=state.warm_llm,
        warm_delta=state.warm_delta,
    )
    state.warm_llm = surrogate.llm_model.params
    if isinstance(surrogate.delta_model, GpModel):
        state.warm_delta = surrogate.delta_model.params
    state.last_rho = surrogate.rho
    return surrogate


def _remaining_pool(state: RunState) -> Optional[np.ndarray]:
    if not state.space.is_pool_mode():
        return None
    pool_norm = normalize_pool(state.space)
    mask = np.ones(pool_norm.shape[0], dtype=bool)
    for idx in state.pool_evaluated:
        mask[idx] = False
    return pool_norm[mask]


@dataclass
class SuggestResult:
    record: IterationRecord
    surrogate: object
    pending: list[dict]  # {"x_raw", "x_norm", "sigma", "candidate_index"}


def begin_iteration(state: RunState, cfg: LoopConfig, llm_oracle) -> SuggestResult:
    """Rebuild, select a batch, query the cheap fidelity, and gate.

    Candidates that gate to the expensive fidelity are returned as pending;
    nothing is real-evaluated here. Budget already spoken for by earlier
    pending entries counts against this batch's allowance.
    """
    t = state.iteration + 1
    iter_seed = int(state.rng.integers(0, 2**63 - 1))
    surrogate = _build_iteration_surrogate(state, cfg, iter_seed)
    acq = replace(cfg.acquisition, batch_size=cfg.batch_size)
    batch = select_batch(
        surrogate,
        acq,
        t,
        _acq_seed(iter_seed),
        pool=_remaining_pool(state),
        exclude=state.ds.real_x_normalized(),
    )
    state.iteration = t
    rho = getattr(surrogate, "rho", 0.0)
    record = IterationRecord(
        iteration=t,
        candidates=[],
        rho=rho,
        best_so_far=state.best_so_far,
        real_queries_used=state.real_used,
        llm_queries_used=state.llm_used,
    )
    pending: list[dict] = []
    budget_left = cfg.real_budget_T - state.real_used - len(state.pending)
    for x_norm in batch:
        x_raw = denormalize_point(state.space, x_norm)
        if state.space.is_pool_mode():
            # snap to the exact pool row to keep lookups bit-exact
            idx = _pool_index_norm(state.space, x_norm)
            if idx is not None:
                x_raw = state.space.pool[idx].copy()
        cand = CandidateRecord(
            x_raw=tuple(float(v) for v in x_raw),
            x_norm=tuple(float(v) for v in x_norm),
        )
        record.candidates.append(cand)
        if cfg.mode is Mode.VANILLA_BO:
            mu, var = surrogate.posterior(x_norm)
            cand.sigma_r_pre = math.sqrt(max(var, 0.0))
            existing = state.ds._find_real(x_norm)
            if existing is not None:
                # re-measuring an x already on file is a no-op: reuse the value
                cand.already_measured = True
                cand.y_real = state.ds.real_obs[existing].y
            elif budget_left > 0:
                budget_left -= 1
                pending.append(
                    {
                        "x_raw": cand.x_raw,
                        "x_norm": cand.x_norm,
                        "sigma": cand.sigma_r_pre,
                        "candidate_index": len(record.candidates) - 1,
                    }
                )
            else:
                cand.budget_denied = True
            continue
        try:
            y_llm = llm_oracle.evaluate_batch([x_raw], state.ds)[0]
        except OracleFailure:
            cand.gate_decision = "dropped"
            continue
        y_llm = _clip_llm(state.space, y_llm)
        cand.y_llm = y_llm
        state.ds = state.ds.insert(
            Observation(cand.x_raw, y_llm, Fidelity.LLM, t, Origin.LOOP_BATCH)
        )
        state.llm_used += 1
        record.llm_queries_used = state.llm_used
        gate_surrogate = surrogate
        if cfg.gate_after_llm_insert:
            gate_surrogate = _build_iteration_surrogate(state, cfg, _acq_seed(iter_seed, 1))
        needs_real, gate = should_query_real(gate_surrogate, x_norm, cfg.tau)
        _, var_r = gate_surrogate.posterior(x_norm)
        cand.p_delta = gate.p_delta
        cand.override = gate.override
        cand.sigma_r_pre = math.sqrt(max(var_r, 0.0))
        cand.gate_decision = "needs_experiment" if needs_real else "llm_accepted"
        if needs_real:
            existing = state.ds._find_real(x_norm)
            if existing is not None:
                # the dataset rejects duplicate real points; reuse the value
                cand.already_measured = True
                cand.y_real = state.ds.real_obs[existing].y
            elif budget_left > 0:
                budget_left -= 1
                pending.append(
                    {
                        "x_raw": cand.x_raw,
                        "x_norm": cand.x_norm,
                        "sigma": cand.sigma_r_pre,
                        "candidate_index": len(record.candidates) - 1,
                    }
                )
            else:
                cand.budget_denied = True
    record.rho = getattr(surrogate, "rho", 0.0)
    state.records.append(record)
    state.pending.extend(pending)
    return SuggestResult(record=record, surrogate=surrogate, pending=pending)


def _acq_seed(seed: int, tag: int = 0) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, 1000 + tag]).generate_state(1)[0])


def _pool_index_norm(space: DesignSpace, x_norm: np.ndarray) -> Optional[int]:
    pool_norm = normalize_pool(space)
    diffs = np.max(np.abs(pool_norm - x_norm), axis=1)
    j = int(np.argmin(diffs))
    return j if diffs[j] <= 1e-9 else None


def complete_pending(state: RunState, entry: dict, y: float, origin: Origin) -> None:
    """Commit one expensive measurement for a pending candidate."""
    x_raw = np.asarray(entry["x_raw"], dtype=float)
    x_norm = np.asarray(entry["x_norm"], dtype=float)
    _record_real(state, x_raw, x_norm, float(y), float(entry["sigma"]), origin)
    # fill the newest still-open candidate at this x (searching backwards
    # covers pending entries that survived a resume)
    for r in reversed(state.records):
        hit = False
        for c in r.candidates:
            if (
                tuple(c.x_norm) == tuple(entry["x_norm"])
                and c.y_real is None
                and c.gate_decision == "needs_experiment"
            ):
                c.y_real = float(y)
                hit = True
                break
        if hit:
            break
    if state.records:
        state.records[-1].best_so_far = state.best_so_far
        state.records[-1].real_queries_used = state.real_used
    state.pending = [p for p in state.pending if p is not entry]


def run_iteration(state: RunState, cfg: LoopConfig, llm_oracle, real_oracle):
    """One full loop iteration with the expensive oracle answered inline."""
    result = begin_iteration(state, cfg, llm_oracle)
    for entry in list(result.pending):
        y = real_oracle.evaluate_batch([np.asarray(entry["x_raw"])], state.ds)[0]
        complete_pending(state, entry, y, Origin.LOOP_BATCH)
    rec = result.record
    rec.best_so_far = state.best_so_far
    rec.real_queries_used = state.real_used
    rec.llm_queries_used = state.llm_used
    return state, rec


def make_random_fidelity_oracle(space: DesignSpace, seed: int) -> SyntheticLowFidelity:
    return SyntheticLowFidelity(space, RandomUniform(seed=seed))


def run_campaign(
    cfg: LoopConfig,
    space: DesignSpace,
    llm_oracle,
    real_oracle,
    initializer: Optional[Initializer] = None,
    known_optimum: Optional[float] = None,
):
    """Warm-start then loop until the real budget or the iteration cap runs out.

    Returns (dataset, iteration records, diagnostics). Vanilla mode runs a
    single GP on the real data with the same acquisition; the
    random-fidelity ablation swaps the cheap oracle for uniform noise over
    the output range.
    """
    if cfg.mode is Mode.RANDOM_FIDELITY:
        llm_oracle = make_random_fidelity_oracle(space, seed=cfg.seed ^ 0x5EED)
    state = start_state(cfg, space)
    init_points = propose_warm_points(cfg, space, state, initializer)
    run_warm_llm(cfg, space, state, llm_oracle, init_points)
    ys = real_oracle.evaluate_batch(init_points, state.ds)
    apply_init_measurements(cfg, state, init_points, ys)

    while state.real_used < cfg.real_budget_T and state.iteration < cfg.max_iterations:
        pool = _remaining_pool(state)
        if pool is not None and pool.shape[0] == 0:
            state.finish_reason = "pool_exhausted"
            break
        run_iteration(state, cfg, llm_oracle, real_oracle)
    if state.finish_reason is None:
        state.finish_reason = (
            "budget_exhausted" if state.real_used >= cfg.real_budget_T else "max_iterations"
        )
    diagnostics = compute_diagnostics(
        state.records,
        state.real_trace,
        known_optimum=known_optimum,
        kernel=final_kernel_spec(state, cfg),
    )
    return state, state.records, diagnostics


def final_kernel_spec(state: RunState, cfg: LoopConfig) -> CompositeKernelSpec:
    if cfg.mode is Mode.VANILLA_BO:
        params = state.warm_delta or default_params(state.space.n_dims)
        return CompositeKernelSpec(0.0, None, params)
    params_d = state.warm_delta or default_params(state.space.n_dims)
    return CompositeKernelSpec(state.last_rho, state.warm_llm, params_d)


def compute_diagnostics(
    records: Sequence[IterationRecord],
    real_history: Sequence[RealQueryTrace],
    known_optimum: Optional[float] = None,
    *,
    kernel: CompositeKernelSpec,
) -> DiagnosticsReport:
    """Width sum, information gain of the queried set, and the width bound.

    The width sum accumulates the pre-query composite sd at each
    loop-queried point; gamma is (1/2) log det(I + K/noise) over those same
    points under the final composite kernel. Regret (when the optimum is
    known) sums optimum minus the observed values.
    """
    widths = np.array([tr.width for tr in real_history])
    n = widths.shape[0]
    if n == 0:
        return DiagnosticsReport(0.0, 0.0, 0.0, 0, None if known_optimum is None else 0.0)
    xs = np.array([tr.x_norm for tr in real_history])
    k = kernel.matrix(xs)
    sign, logdet = np.linalg.slogdet(np.eye(n) + k / kernel.noise_variance)
    gamma = 0.5 * float(logdet)
    bound = math.sqrt(2.0 * n * max(gamma, 0.0))
    regret = None
    if known_optimum is not None:
        regret = float(np.sum(known_optimum - np.array([tr.y_raw for tr in real_history])))
    return DiagnosticsReport(
        width_sum=float(np.sum(widths)),
        info_gain_gamma=gamma,
        width_bound=bound,
        n_real=n,
        cumulative_regret=regret,
    )


def metrics_rows(records: Sequence[IterationRecord]) -> list[dict]:
    """Flatten records into the per-run metrics CSV schema."""
    rows = []
    for r in records:
        ps = [c.p_delta for c in r.candidates if c.p_delta is not None]
        rows.append(
            {
                "iteration": r.iteration,
                "real_used": r.real_queries_used,
                "llm_used": r.llm_queries_used,
                "rho": r.rho,
                "best_so_far": r.best_so_far,
                "p_delta_min": min(ps) if ps else "",
                "p_delta_max": max(ps) if ps else "",
            }
        )
    return rows
