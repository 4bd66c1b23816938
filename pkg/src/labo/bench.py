"""Benchmark task registry, tabular CSV ingestion, synthetic test functions,
and the multi-seed experiment runner.

Tabular tasks run in candidate-pool mode over their rows with exact
lookups; synthetic tasks use standard test functions negated so the engine
always maximizes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import (
    DiagnosticsReport,
    IterationRecord,
    LoopConfig,
    Mode,
    metrics_rows,
    run_campaign,
)
from .oracle import (
    Biased,
    LlmClientConfig,
    LlmOracle,
    Noisy,
    RandomUniform,
    RealObjectiveOracle,
    Scaled,
    SyntheticLowFidelity,
    transform_from_dict,
)
from .space import DesignSpace, Dimension, normalize_point


class UnknownFunction(ValueError):
    pass


class MissingColumn(ValueError):
    pass


class NonNumericCell(ValueError):
    def __init__(self, row: int, col: str):
        self.row = row
        self.col = col
        super().__init__(f"row {row}, column {col!r}: cell is not numeric")


class BoundsViolation(ValueError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} lies outside the declared bounds")


# ---------------------------------------------------------------------------
# Synthetic objectives (negated: the engine maximizes)
# ---------------------------------------------------------------------------


def _forrester(x: np.ndarray) -> float:
    v = float(x[0])
    return (6.0 * v - 2.0) ** 2 * math.sin(12.0 * v - 4.0)


def _branin(x: np.ndarray) -> float:
    a = 1.0
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    r = 6.0
    s = 10.0
    t = 1.0 / (8.0 * math.pi)
    x1, x2 = float(x[0]), float(x[1])
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1.0 - t) * math.cos(x1) + s


_HARTMANN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMANN6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)
_HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def _hartmann6(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    inner = np.sum(_HARTMANN6_A * (x[None, :] - _HARTMANN6_P) ** 2, axis=1)
    return -float(np.sum(_HARTMANN6_ALPHA * np.exp(-inner)))


def neg_forrester(x: np.ndarray) -> float:
    return -_forrester(x)


def neg_branin(x: np.ndarray) -> float:
    return -_branin(x)


def neg_hartmann6(x: np.ndarray) -> float:
    return -_hartmann6(x)


@dataclass(frozen=True)
class SyntheticSpec:
    fn: Callable[[np.ndarray], float]
    dims: tuple[Dimension, ...]
    y_min: float
    y_max: float
    known_optimum: float
    argmax: tuple[float, ...]


_SYNTHETIC: dict[str, SyntheticSpec] = {
    "forrester1d": SyntheticSpec(
        fn=neg_forrester,
        dims=(Dimension("x", 0.0, 1.0),),
        y_min=-16.0,
        y_max=6.1,
        known_optimum=6.020740,
        argmax=(0.757249,),
    ),
    "branin2d": SyntheticSpec(
        fn=neg_branin,
        dims=(Dimension("x1", -5.0, 10.0), Dimension("x2", 0.0, 15.0)),
        y_min=-310.0,
        y_max=0.0,
        known_optimum=-0.397887,
        argmax=(math.pi, 2.275),
    ),
    "hartmann6d": SyntheticSpec(
        fn=neg_hartmann6,
        dims=tuple(Dimension(f"x{i+1}", 0.0, 1.0) for i in range(6)),
        y_min=0.0,
        y_max=3.33,
        known_optimum=3.322368,
        argmax=(0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573),
    ),
}


def synthetic_objective(fn_id: str, x: Sequence[float]) -> float:
    """Evaluate a registered test function (negated form) at a raw point."""
    if fn_id not in _SYNTHETIC:
        raise UnknownFunction(f"unknown synthetic function {fn_id!r}")
    spec = _SYNTHETIC[fn_id]
    x = np.asarray(x, dtype=float)
    lo = np.array([d.lower for d in spec.dims])
    hi = np.array([d.upper for d in spec.dims])
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"point {x} outside the bounds of {fn_id}")
    return float(spec.fn(x))


def synthetic_ids() -> list[str]:
    return sorted(_SYNTHETIC)


# ---------------------------------------------------------------------------
# Task specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveSpec:
    """Serializable pointer at the ground-truth source."""

    kind: str  # "synthetic" | "tabular" | "manual"
    function_id: Optional[str] = None
    csv_path: Optional[str] = None
    target_column: Optional[str] = None
    sense: str = "max"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "function_id": self.function_id,
            "csv_path": self.csv_path,
            "target_column": self.target_column,
            "sense": self.sense,
        }

    @staticmethod
    def from_dict(d: dict) -> "ObjectiveSpec":
        return ObjectiveSpec(
            kind=d["kind"],
            function_id=d.get("function_id"),
            csv_path=d.get("csv_path"),
            target_column=d.get("target_column"),
            sense=d.get("sense", "max"),
        )


@dataclass(frozen=True)
class TaskSpec:
    name: str
    space: DesignSpace
    objective: ObjectiveSpec
    known_optimum: Optional[float] = None
    low_fidelity_default: object = field(default_factory=lambda: Scaled(1.0))
    pool_targets: Optional[np.ndarray] = None  # aligned with space.pool rows

    def resolve_objective(self) -> Callable[[np.ndarray], float]:
        if self.objective.kind == "synthetic":
            spec = _SYNTHETIC[self.objective.function_id]
            return spec.fn
        if self.objective.kind == "tabular":
            if self.pool_targets is None:
                raise ValueError(f"task {self.name!r}: tabular pool not loaded")
            pool = self.space.pool
            targets = self.pool_targets

            def lookup(x: np.ndarray) -> float:
                diffs = np.max(np.abs(pool - np.asarray(x, dtype=float)), axis=1)
                j = int(np.argmin(diffs))
                if diffs[j] > 1e-9:
                    raise ValueError(f"point {x} is not a pool row of task")
                return float(targets[j])

            return lookup
        raise ValueError(f"task {self.name!r} has no computable objective ({self.objective.kind})")

    def make_low_fidelity(self, transform=None) -> SyntheticLowFidelity:
        t = transform if transform is not None else self.low_fidelity_default
        base = None
        if not isinstance(t, RandomUniform):
            base = self.resolve_objective()
        return SyntheticLowFidelity(self.space, t, base=base)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dims": [
                {"name": d.name, "lower": d.lower, "upper": d.upper, "unit": d.unit}
                for d in self.space.dims
            ],
            "output_range": {"y_min": self.space.y_min, "y_max": self.space.y_max},
            "objective": self.objective.to_dict(),
            "known_optimum": self.known_optimum,
            "low_fidelity_default": self.low_fidelity_default.to_dict(),
            "pool": None if self.space.pool is None else self.space.pool.tolist(),
            "pool_targets": None if self.pool_targets is None else list(map(float, self.pool_targets)),
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        dims = tuple(
            Dimension(e["name"], e["lower"], e["upper"], e.get("unit")) for e in d["dims"]
        )
        pool = None if d.get("pool") is None else np.array(d["pool"], dtype=float)
        space = DesignSpace(
            dims, d["output_range"]["y_min"], d["output_range"]["y_max"], pool=pool
        )
        targets = d.get("pool_targets")
        return TaskSpec(
            name=d["name"],
            space=space,
            objective=ObjectiveSpec.from_dict(d["objective"]),
            known_optimum=d.get("known_optimum"),
            low_fidelity_default=transform_from_dict(
                d.get("low_fidelity_default", {"kind": "scaled", "c": 1.0})
            ),
            pool_targets=None if targets is None else np.array(targets, dtype=float),
        )


def make_synthetic_task(fn_id: str, low_fidelity=None) -> TaskSpec:
    if fn_id not in _SYNTHETIC:
        raise UnknownFunction(f"unknown synthetic function {fn_id!r}")
    spec = _SYNTHETIC[fn_id]
    space = DesignSpace(spec.dims, spec.y_min, spec.y_max)
    return TaskSpec(
        name=fn_id,
        space=space,
        objective=ObjectiveSpec(kind="synthetic", function_id=fn_id),
        known_optimum=spec.known_optimum,
        low_fidelity_default=low_fidelity or Scaled(1.0),
    )


def load_task_config(path_or_name: str) -> TaskSpec:
    """Load a task schema: a registered synthetic id, a bundled config name,
    or a path to a JSON config file."""
    if path_or_name in _SYNTHETIC:
        return make_synthetic_task(path_or_name)
    if os.path.exists(path_or_name):
        with open(path_or_name, encoding="utf-8") as f:
            return TaskSpec.from_dict(json.load(f))
    try:
        text = resources.files("labo").joinpath(f"tasks/{path_or_name}.json").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        raise UnknownFunction(f"unknown task {path_or_name!r}") from None
    return TaskSpec.from_dict(json.loads(text))


def load_tabular_task(csv_path: str, schema: TaskSpec) -> TaskSpec:
    """Attach a CSV candidate pool to a tabular task schema.

    The header must contain every declared dimension plus the target
    column; rows outside the declared bounds are rejected by row number.
    Minimization tasks are negated here (targets and output range) so the
    engine always maximizes.
    """
    if schema.objective.kind != "tabular":
        raise ValueError(f"task {schema.name!r} is not tabular")
    target_col = schema.objective.target_column
    with open(csv_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in [*schema.space.names, target_col]:
            if col not in header:
                raise MissingColumn(f"CSV is missing column {col!r}")
        xs, ys = [], []
        lo = schema.space.lower_bounds()
        hi = schema.space.upper_bounds()
        for i, row in enumerate(reader):
            vals = []
            for col in schema.space.names:
                try:
                    vals.append(float(row[col]))
                except (TypeError, ValueError):
                    raise NonNumericCell(i, col) from None
            try:
                y = float(row[target_col])
            except (TypeError, ValueError):
                raise NonNumericCell(i, target_col) from None
            v = np.array(vals)
            if np.any(v < lo) or np.any(v > hi):
                raise BoundsViolation(i)
            xs.append(v)
            ys.append(y)
    if not xs:
        raise ValueError("CSV has no data rows")
    pool = np.array(xs)
    targets = np.array(ys)
    y_min, y_max = schema.space.y_min, schema.space.y_max
    if schema.objective.sense == "min":
        targets = -targets
        y_min, y_max = -schema.space.y_max, -schema.space.y_min
    space = DesignSpace(schema.space.dims, y_min, y_max, pool=pool)
    return replace(
        schema,
        space=space,
        pool_targets=targets,
        known_optimum=float(np.max(targets)),
    )


def generate_stand_in_csv(schema: TaskSpec, n_rows: int, seed: int, path: str) -> None:
    """Write a small synthetic CSV matching a tabular schema (CI stand-in)."""
    rng = np.random.default_rng(seed)
    lo = schema.space.lower_bounds()
    hi = schema.space.upper_bounds()
    d = schema.space.n_dims
    xs = lo + rng.random((n_rows, d)) * (hi - lo)
    # smooth multimodal surface mapped into the declared output range
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    u = (xs - lo) / (hi - lo)
    raw = np.sin(2.0 * math.pi * (u @ w)) + 0.5 * np.cos(3.0 * math.pi * u[:, 0])
    raw = (raw - raw.min()) / max(raw.max() - raw.min(), 1e-12)
    y_lo, y_hi = schema.space.y_min, schema.space.y_max
    ys = y_lo + raw * (y_hi - y_lo)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([*schema.space.names, schema.objective.target_column])
        for x, y in zip(xs, ys):
            writer.writerow([*(f"{v:.6f}" for v in x), f"{y:.6f}"])


def parse_llm_endpoint(spec: str, task: TaskSpec, seed: int, **client_kw):
    """Build the cheap-fidelity oracle from an endpoint string.

    ``synthetic:<id>`` variants run offline against the task's ground truth:
    scaled1, scaled:<c>, biased:<amplitude-fraction>, noisy:<sd>, random.
    Anything else is treated as an OpenAI-compatible base URL.
    """
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        kind = parts[1]
        y_span = task.space.y_max - task.space.y_min
        if kind == "scaled1":
            t = Scaled(1.0)
        elif kind == "scaled":
            t = Scaled(float(parts[2]))
        elif kind == "biased":
            frac = float(parts[2]) if len(parts) > 2 else 0.1
            t = Biased(amplitude=frac * y_span)
        elif kind == "noisy":
            t = Noisy(float(parts[2]), seed=seed ^ 0xA11CE)
        elif kind == "random":
            t = RandomUniform(seed=seed ^ 0x5EED)
        else:
            raise ValueError(f"unknown synthetic llm endpoint {spec!r}")
        return task.make_low_fidelity(t)
    cfg = LlmClientConfig(endpoint_url=spec, **client_kw)
    return LlmOracle(cfg, task.space)


def _make_llm_oracle(task: TaskSpec, llm_spec, seed: int):
    if llm_spec is None:
        return task.make_low_fidelity(None)
    if isinstance(llm_spec, str):
        return parse_llm_endpoint(llm_spec, task, seed)
    return task.make_low_fidelity(llm_spec)


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


@dataclass
class SeedTrace:
    method: str
    seed: int
    final_obj: float
    iters_to_90: Optional[float]
    lr_ratio: Optional[float]
    records: list[IterationRecord]
    diagnostics: DiagnosticsReport
    convergence: list[float]
    scatter: list[dict]
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    task: str
    methods: list[str]
    traces: list[SeedTrace]
    single_seed: bool

    def aggregate(self, method: str) -> dict:
        cells = [t for t in self.traces if t.method == method and t.error is None]
        if not cells:
            return {"method": method, "n": 0}
        finals = np.array([t.final_obj for t in cells])
        iters = np.array([t.iters_to_90 for t in cells if t.iters_to_90 is not None])
        ratios = np.array([t.lr_ratio for t in cells if t.lr_ratio is not None])

        def mean_std(a):
            if a.size == 0:
                return None, None
            if a.size == 1:
                return float(a[0]), 0.0
            return float(np.mean(a)), float(np.std(a, ddof=1))

        fo = mean_std(finals)
        it = mean_std(iters)
        lr = mean_std(ratios)
        return {
            "method": method,
            "n": len(cells),
            "final_obj_mean": fo[0],
            "final_obj_std": fo[1],
            "iters_to_90_mean": it[0],
            "iters_to_90_std": it[1],
            "lr_ratio_mean": lr[0],
            "lr_ratio_std": lr[1],
        }


def iters_to_90(records: Sequence[IterationRecord]) -> Optional[float]:
    """First iteration whose best-so-far reaches 90% of the run's final best.

    Meaningful for positive-valued objectives; returns None otherwise
    (0.9x of a negative target would sit above the final best).
    """
    if not records:
        return None
    final = records[-1].best_so_far
    if final <= 0:
        return None
    threshold = 0.9 * final
    for r in records:
        if r.best_so_far >= threshold:
            return float(r.iteration)
    return float(records[-1].iteration)


def _mode_for(method: str) -> Mode:
    try:
        return Mode(method)
    except ValueError:
        raise UnknownFunction(
            f"unknown method {method!r}; expected one of {[m.value for m in Mode]}"
        ) from None


def _cell_seed(base_seed: int, method: str, seed_index: int) -> int:
    tag = {"labo": 1, "vanilla": 2, "random-fidelity": 3}[method]
    return int(
        np.random.SeedSequence([base_seed & 0xFFFFFFFF, tag, seed_index]).generate_state(1)[0]
        % (2**31)
    )


def run_cell(task: TaskSpec, method: str, seed_index: int, cfg: LoopConfig, llm_spec=None) -> SeedTrace:
    """One (method, seed) campaign with a seed-isolated RNG stream."""
    mode = _mode_for(method)
    cell_cfg = replace(cfg, mode=mode, seed=_cell_seed(cfg.seed, method, seed_index))
    real_oracle = RealObjectiveOracle(task.resolve_objective())
    llm_oracle = _make_llm_oracle(task, llm_spec, cell_cfg.seed)
    try:
        state, records, diagnostics = run_campaign(
            cell_cfg,
            task.space,
            llm_oracle,
            real_oracle,
            known_optimum=task.known_optimum,
        )
    except Exception as e:  # a failed cell is recorded, not fatal
        return SeedTrace(
            method=method,
            seed=seed_index,
            final_obj=float("nan"),
            iters_to_90=None,
            lr_ratio=None,
            records=[],
            diagnostics=DiagnosticsReport(0.0, 0.0, 0.0, 0),
            convergence=[],
            scatter=[],
            error=f"{type(e).__name__}: {e}",
        )
    ratio = None
    if mode is not Mode.VANILLA_BO and state.real_used > 0:
        ratio = state.llm_used / state.real_used
    scatter = []
    for o in state.ds.llm_obs:
        u = normalize_point(task.space, o.x)
        scatter.append({"coords": [float(v) for v in u], "fidelity": "llm", "iteration": o.iteration})
    for o in state.ds.real_obs:
        u = normalize_point(task.space, o.x)
        scatter.append({"coords": [float(v) for v in u], "fidelity": "real", "iteration": o.iteration})
    return SeedTrace(
        method=method,
        seed=seed_index,
        final_obj=state.best_so_far,
        iters_to_90=iters_to_90(records),
        lr_ratio=ratio,
        records=records,
        diagnostics=diagnostics,
        convergence=list(state.convergence),
        scatter=scatter,
    )


def _run_cell_star(args):
    # one BLAS thread per worker: matrices are small and threads just contend
    from threadpoolctl import threadpool_limits

    with threadpool_limits(1):
        return run_cell(*args)


def run_experiment(
    task: TaskSpec,
    methods: Sequence[str],
    n_seeds: int,
    cfg: LoopConfig,
    out_dir: Optional[str] = None,
    jobs: int = 1,
    llm_spec=None,
) -> ExperimentResult:
    """Run every (method, seed) cell and aggregate paper-style metrics.

    Cells are independent; with ``jobs > 1`` they run in parallel and are
    reduced in sorted cell order either way. Emits a summary CSV, per-seed
    trace CSVs, and the fidelity-allocation scatter export when ``out_dir``
    is given.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    cells = [(task, m, s, cfg, llm_spec) for m in methods for s in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_run_cell_star, cells))
    else:
        traces = [run_cell(*c) for c in cells]
    result = ExperimentResult(
        task=task.name, methods=list(methods), traces=traces, single_seed=n_seeds == 1
    )
    if out_dir:
        export_experiment(result, out_dir)
    return result


def export_experiment(result: ExperimentResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, f"{result.task}_summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "task",
                "method",
                "n_seeds",
                "final_obj_mean",
                "final_obj_std",
                "iters_to_90_mean",
                "iters_to_90_std",
                "lr_ratio_mean",
                "lr_ratio_std",
                "single_seed",
            ]
        )
        for m in result.methods:
            agg = result.aggregate(m)
            writer.writerow(
                [
                    result.task,
                    m,
                    agg.get("n", 0),
                    agg.get("final_obj_mean"),
                    agg.get("final_obj_std"),
                    agg.get("iters_to_90_mean"),
                    agg.get("iters_to_90_std"),
                    agg.get("lr_ratio_mean"),
                    agg.get("lr_ratio_std"),
                    result.single_seed,
                ]
            )
    for t in result.traces:
        trace_path = os.path.join(out_dir, f"{result.task}_{t.method}_seed{t.seed}_trace.csv")
        with open(trace_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["iteration", "real_used", "llm_used", "rho", "best_so_far", "p_delta_min", "p_delta_max"]
            )
            for row in metrics_rows(t.records):
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
        scatter_path = os.path.join(out_dir, f"{result.task}_{t.method}_seed{t.seed}_scatter.csv")
        with open(scatter_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            d = len(t.scatter[0]["coords"]) if t.scatter else 0
            writer.writerow([*(f"x{i}" for i in range(d)), "fidelity", "iteration"])
            for p in t.scatter:
                writer.writerow([*p["coords"], p["fidelity"], p["iteration"]])


def tau_sweep(
    task: TaskSpec,
    taus: Sequence[float],
    n_seeds: int,
    cfg: LoopConfig,
    jobs: int = 1,
    llm_spec=None,
) -> list[dict]:
    """Gate-threshold ablation: one summary row per tau value."""
    rows = []
    for tau in taus:
        res = run_experiment(
            task, ["labo"], n_seeds, replace(cfg, tau=tau), jobs=jobs, llm_spec=llm_spec
        )
        agg = res.aggregate("labo")
        rows.append({"tau": tau, **agg})
    return rows
