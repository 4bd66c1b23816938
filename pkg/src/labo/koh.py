"""Kennedy-O'Hagan composite surrogate and the discrepancy-dominance gate.

The real-fidelity objective is modeled as f_R(x) = rho * f_L(x) + delta(x):
a GP on LLM-fidelity predictions scaled by a through-origin OLS factor plus
an independent GP on the paired residuals. The gate queries the expensive
fidelity exactly when the discrepancy term dominates the composite
predictive variance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .gp import (
    DEFAULT_LENGTHSCALE,
    GpModel,
    KernelParams,
    NOISE_FLOOR,
    PriorGp,
    default_params,
    fit,
    fit_hyperparams,
)
from .space import FidelityDataset, Normalizer

RHO_DENOM_FLOOR = 1e-12
_VAR_TOTAL_FLOOR = 1e-15

ComponentModel = Union[GpModel, PriorGp]


def min_points_for_hyperfit(n_dims: int) -> int:
    """Below this count, type-II ML is ill-posed: it happily interpolates a
    handful of points with maximal lengthscales and vanishing noise, claiming
    global knowledge the data cannot support. The ARD kernel carries d + 2
    hyperparameters; demand a few points per parameter before trusting it."""
    return 3 * (n_dims + 2)


# Until residual data proves otherwise, the discrepancy may plausibly be half
# as large as the (standardized) real signal; a handful of small residuals is
# not evidence that the bias vanishes everywhere.
SMALL_N_VARIANCE_FLOOR = 0.25


def fit_component_params(
    xs: np.ndarray,
    ys: np.ndarray,
    seed: int,
    fit_cfg: "SurrogateFitConfig",
    warm: Optional[KernelParams] = None,
) -> KernelParams:
    """Hyperparameters for one component GP, honest at small sample sizes.

    With enough points, seeded multi-start LML maximization; otherwise the
    default lengthscales with the signal variance moment-matched to the
    data's second moment.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=float).ravel()
    n, d = xs.shape
    if n >= min_points_for_hyperfit(d):
        return fit_hyperparams(
            xs,
            ys,
            seed,
            n_restarts=fit_cfg.n_restarts,
            line_searches=fit_cfg.line_searches,
            isotropic=fit_cfg.isotropic,
            warm_start=warm,
        )
    s2 = float(max(np.mean(ys**2), SMALL_N_VARIANCE_FLOOR))
    return KernelParams(
        s2, np.full(d, DEFAULT_LENGTHSCALE), max(NOISE_FLOOR, 1e-4 * s2)
    )


@dataclass(frozen=True)
class SurrogateFitConfig:
    """Knobs for the per-iteration hyperparameter refits."""

    n_restarts: int = 8
    line_searches: int = 60
    isotropic: bool = False

    def to_dict(self) -> dict:
        return {
            "n_restarts": self.n_restarts,
            "line_searches": self.line_searches,
            "isotropic": self.isotropic,
        }

    @staticmethod
    def from_dict(d: dict) -> "SurrogateFitConfig":
        return SurrogateFitConfig(**d)


@dataclass(frozen=True)
class GateRecord:
    """One gating decision, as persisted to the campaign event log."""

    x: tuple[float, ...]
    p_delta: float
    tau: float
    decision: bool
    override: bool

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "p_delta": self.p_delta,
            "tau": self.tau,
            "decision": "needs_experiment" if self.decision else "llm_accepted",
            "override": self.override,
        }


@dataclass(frozen=True)
class KohSurrogate:
    """Composite surrogate: LLM-fidelity GP, scale factor, discrepancy GP.

    All posteriors are in normalized-input / standardized-output space;
    ``normalizer`` converts back to raw units.
    """

    llm_model: ComponentModel
    rho: float
    delta_model: ComponentModel
    normalizer: Normalizer

    def components_batch(self, xs: np.ndarray):
        mu_l, var_l = self.llm_model.posterior_batch(xs)
        mu_d, var_d = self.delta_model.posterior_batch(xs)
        return mu_l, var_l, mu_d, var_d

    def posterior_batch(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu_l, var_l, mu_d, var_d = self.components_batch(xs)
        return self.rho * mu_l + mu_d, self.rho**2 * var_l + var_d

    def posterior(self, x: Sequence[float]) -> tuple[float, float]:
        mu, var = self.posterior_batch(np.asarray(x, dtype=float)[None, :])
        return float(mu[0]), float(var[0])

    def fantasize(self, x: Sequence[float]) -> "KohSurrogate":
        """Condition each component on its own posterior mean at x."""
        mu_l, _ = self.llm_model.posterior(x)
        mu_d, _ = self.delta_model.posterior(x)
        return replace(
            self,
            llm_model=self.llm_model.fantasize(x, mu_l),
            delta_model=self.delta_model.fantasize(x, mu_d),
        )

    @property
    def has_real_data(self) -> bool:
        # the discrepancy model is PriorOnly exactly until residual data exists
        return not isinstance(self.delta_model, PriorGp)


def estimate_rho(pairs: Sequence[tuple[float, float]]) -> float:
    """Through-origin OLS scale: sum(y_l*y_r) / sum(y_l^2), or 0 if degenerate."""
    if not pairs:
        return 0.0
    yl = np.array([p[0] for p in pairs], dtype=float)
    yr = np.array([p[1] for p in pairs], dtype=float)
    denom = float(yl @ yl)
    if denom <= RHO_DENOM_FLOOR:
        return 0.0
    return float((yl @ yr) / denom)


def _derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, tag]).generate_state(1)[0])


def build_surrogate(
    ds: FidelityDataset,
    seed: int,
    *,
    fit_cfg: SurrogateFitConfig = SurrogateFitConfig(),
    warm_llm: Optional[KernelParams] = None,
    warm_delta: Optional[KernelParams] = None,
) -> KohSurrogate:
    """Fit the composite surrogate on the current dataset.

    The LLM-fidelity GP is fit on all LLM observations; rho comes from the
    paired values; the discrepancy GP is fit on the residuals
    y_real - rho * y_llm at the real-observation inputs. With no real
    observations the discrepancy model stays at its prior and rho = 0.
    Both kernels are fit independently. Deterministic given (ds, seed).
    """
    if not ds.llm_obs:
        raise ValueError("build_surrogate needs at least one LLM-fidelity observation")
    norm = Normalizer.from_dataset(ds)
    n_dims = ds.space.n_dims

    xl = ds.llm_x_normalized()
    zl = norm.standardize(ds.llm_y())
    if xl.shape[0] >= 2:
        params_l = fit_component_params(xl, zl, _derive_seed(seed, 0), fit_cfg, warm_llm)
    else:
        params_l = default_params(n_dims)
    llm_model = fit(params_l, xl, zl)

    pairs_raw = ds.paired_values()
    pairs = [(float(norm.standardize(a)), float(norm.standardize(b))) for a, b in pairs_raw]
    rho = estimate_rho(pairs)

    if not ds.real_obs:
        return KohSurrogate(llm_model, rho, PriorGp(default_params(n_dims)), norm)

    xr = ds.real_x_normalized()
    resid = np.array([zr - rho * zl_i for zl_i, zr in pairs])
    if xr.shape[0] >= 2:
        params_d = fit_component_params(xr, resid, _derive_seed(seed, 1), fit_cfg, warm_delta)
    else:
        params_d = default_params(n_dims)
    delta_model = fit(params_d, xr, resid)
    return KohSurrogate(llm_model, rho, delta_model, norm)


def composite_posterior(s: KohSurrogate, x: Sequence[float]):
    """(mu_R, var_R, mu_L, var_L, mu_delta, var_delta) at one point."""
    xs = np.asarray(x, dtype=float)[None, :]
    mu_l, var_l, mu_d, var_d = s.components_batch(xs)
    mu_r = s.rho * mu_l + mu_d
    var_r = s.rho**2 * var_l + var_d
    return (
        float(mu_r[0]),
        float(var_r[0]),
        float(mu_l[0]),
        float(var_l[0]),
        float(mu_d[0]),
        float(var_d[0]),
    )


def gating_ratio(s: KohSurrogate, x: Sequence[float]) -> float:
    """Fraction of composite variance carried by the discrepancy process."""
    _, var_r, _, var_l, _, var_d = composite_posterior(s, x)
    if var_r < _VAR_TOTAL_FLOOR:
        return 1.0  # degenerate corner: force the real experiment
    p = var_d / var_r
    return float(min(max(p, 0.0), 1.0))


def gating_ratio_batch(s: KohSurrogate, xs: np.ndarray) -> np.ndarray:
    _, var_l, _, var_d = s.components_batch(xs)
    var_r = s.rho**2 * var_l + var_d
    p = np.where(var_r < _VAR_TOTAL_FLOOR, 1.0, var_d / np.maximum(var_r, _VAR_TOTAL_FLOOR))
    return np.clip(p, 0.0, 1.0)


def should_query_real(
    s: KohSurrogate, x: Sequence[float], tau: float
) -> tuple[bool, GateRecord]:
    """Strict-threshold gate: real experiment iff p_delta > tau.

    With no real observations yet the gate always requests a real
    evaluation (cold-start override), since the discrepancy posterior is
    undefined without residual data.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    p = gating_ratio(s, x)
    override = not s.has_real_data
    decision = bool(p > tau) or override
    record = GateRecord(
        x=tuple(float(v) for v in np.asarray(x, dtype=float)),
        p_delta=p,
        tau=tau,
        decision=decision,
        override=override,
    )
    return decision, record


@dataclass(frozen=True)
class SingleModelSurrogate:
    """Vanilla-BO adapter: one GP on real data behind the surrogate protocol."""

    model: ComponentModel
    normalizer: Normalizer

    def posterior_batch(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.model.posterior_batch(xs)

    def posterior(self, x: Sequence[float]) -> tuple[float, float]:
        mu, var = self.posterior_batch(np.asarray(x, dtype=float)[None, :])
        return float(mu[0]), float(var[0])

    def fantasize(self, x: Sequence[float]) -> "SingleModelSurrogate":
        mu, _ = self.model.posterior(x)
        return replace(self, model=self.model.fantasize(x, mu))
