"""UCB scoring, Latin hypercube sampling, and sequential-greedy batches.

The acquisition optimizer is derivative-free: multi-start per-coordinate
pattern search on the unit cube, vectorized across starts. Pool mode is an
exact argmax over the remaining candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .space import DesignSpace


class EmptyPool(ValueError):
    pass


@dataclass(frozen=True)
class LogSchedule:
    """beta_t = multiplier * 2 ln(t^2 pi^2 / (6 delta_conf)), the classic GP-UCB schedule."""

    delta_conf: float = 0.05
    multiplier: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.delta_conf < 1.0):
            raise ValueError("delta_conf must be in (0, 1)")

    def to_dict(self) -> dict:
        return {"kind": "log", "delta_conf": self.delta_conf, "multiplier": self.multiplier}


@dataclass(frozen=True)
class ConstantBeta:
    sqrt_beta: float = 2.0

    def to_dict(self) -> dict:
        return {"kind": "constant", "sqrt_beta": self.sqrt_beta}


BetaMode = Union[LogSchedule, ConstantBeta]


def beta_mode_from_dict(d: dict) -> BetaMode:
    if d["kind"] == "log":
        return LogSchedule(d["delta_conf"], d["multiplier"])
    return ConstantBeta(d["sqrt_beta"])


@dataclass(frozen=True)
class AcquisitionConfig:
    beta_mode: BetaMode = LogSchedule()
    batch_size: int = 2
    n_starts: int = 32
    local_steps: int = 50
    min_batch_separation: float = 1e-6

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_starts < 1 or self.local_steps < 0:
            raise ValueError("n_starts must be >= 1 and local_steps >= 0")
        if self.min_batch_separation < 0:
            raise ValueError("min_batch_separation must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "beta_mode": self.beta_mode.to_dict(),
            "batch_size": self.batch_size,
            "n_starts": self.n_starts,
            "local_steps": self.local_steps,
            "min_batch_separation": self.min_batch_separation,
        }

    @staticmethod
    def from_dict(d: dict) -> "AcquisitionConfig":
        return AcquisitionConfig(
            beta_mode=beta_mode_from_dict(d["beta_mode"]),
            batch_size=d["batch_size"],
            n_starts=d["n_starts"],
            local_steps=d["local_steps"],
            min_batch_separation=d["min_batch_separation"],
        )


def beta(cfg: AcquisitionConfig, t: int) -> float:
    """Confidence multiplier at iteration t >= 1; nondecreasing in t."""
    if t < 1:
        raise ValueError("iteration index starts at 1")
    mode = cfg.beta_mode
    if isinstance(mode, ConstantBeta):
        return mode.sqrt_beta**2
    return mode.multiplier * 2.0 * math.log(t * t * math.pi**2 / (6.0 * mode.delta_conf))


def ucb_score(mu, var, beta_val: float):
    """mu + sqrt(beta) * sqrt(var); vectorized."""
    if beta_val < 0:
        raise ValueError("beta must be nonnegative")
    return np.asarray(mu) + math.sqrt(beta_val) * np.sqrt(np.maximum(np.asarray(var), 0.0))


def unit_lhs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube on [0,1)^d: one point per stratum per dimension."""
    out = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        out[:, j] = (perm + rng.random(n)) / n
    return out


def lhs_sample(space: DesignSpace, n: int, seed: int) -> np.ndarray:
    """Seeded LHS design on the unit cube for the given space."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return unit_lhs(n, space.n_dims, np.random.default_rng(seed))


def _derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, tag]).generate_state(1)[0])


def _score(surrogate, xs: np.ndarray, beta_val: float) -> np.ndarray:
    mu, var = surrogate.posterior_batch(xs)
    return ucb_score(mu, var, beta_val)


def _pattern_search(surrogate, cfg: AcquisitionConfig, beta_val: float, rng: np.random.Generator, d: int):
    """Multi-start coordinate pattern search; returns (points, scores) per start."""
    n_lhs = cfg.n_starts // 2
    starts = [unit_lhs(n_lhs, d, rng)] if n_lhs else []
    starts.append(rng.random((cfg.n_starts - n_lhs, d)))
    cur = np.vstack(starts)
    cur_score = _score(surrogate, cur, beta_val)
    step = np.full(cfg.n_starts, 0.1)
    eye = np.eye(d)
    for _ in range(cfg.local_steps):
        # all +/- coordinate moves for all starts, one batched posterior call
        props = cur[:, None, :] + step[:, None, None] * np.concatenate([eye, -eye])[None, :, :]
        np.clip(props, 0.0, 1.0, out=props)
        flat = props.reshape(-1, d)
        scores = _score(surrogate, flat, beta_val).reshape(cfg.n_starts, 2 * d)
        best_j = np.argmax(scores, axis=1)
        best_val = scores[np.arange(cfg.n_starts), best_j]
        improved = best_val > cur_score
        cur[improved] = props[np.arange(cfg.n_starts), best_j][improved]
        cur_score[improved] = best_val[improved]
        step[~improved] *= 0.5
    return cur, cur_score


def _ranked_continuous(surrogate, cfg, t, seed, d) -> list[tuple[float, int, np.ndarray]]:
    rng = np.random.default_rng(seed)
    beta_val = beta(cfg, t)
    pts, scores = _pattern_search(surrogate, cfg, beta_val, rng, d)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(float(scores[i]), i, pts[i]) for i in order]


def _pool_scores(surrogate, cfg, t, pool: np.ndarray) -> np.ndarray:
    if pool.shape[0] == 0:
        raise EmptyPool("no candidates left in the pool")
    return _score(surrogate, pool, beta(cfg, t))


def maximize_acquisition(
    surrogate,
    cfg: AcquisitionConfig,
    t: int,
    seed: int,
    pool: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Best UCB point: exact argmax over a pool, or pattern search on the cube.

    Pool ties break toward the lowest index; continuous mode reduces over
    starts deterministically (best score, then lowest start index).
    """
    if pool is not None:
        scores = _pool_scores(surrogate, cfg, t, np.asarray(pool, dtype=float))
        return np.asarray(pool, dtype=float)[int(np.argmax(scores))].copy()
    d = surrogate.normalizer.space.n_dims
    return _ranked_continuous(surrogate, cfg, t, seed, d)[0][2].copy()


def select_batch(
    surrogate,
    cfg: AcquisitionConfig,
    t: int,
    seed: int,
    pool: Optional[np.ndarray] = None,
    exclude: Optional[np.ndarray] = None,
) -> list[np.ndarray]:
    """Sequential-greedy q-UCB batch with posterior-mean fantasy updates.

    After each pick, both component GPs of a working copy are conditioned
    at the chosen point on their own posterior means and the maximization
    repeats. Points closer than ``min_batch_separation`` to an earlier pick
    or to an ``exclude`` entry (already-measured inputs; re-querying a
    noiseless ground truth is a wasted candidate) are skipped in favor of
    the next-best start. The input surrogate is never mutated. Returns
    fewer than q points only if a pool exhausts.
    """
    sep = cfg.min_batch_separation
    blocked: list[np.ndarray] = []
    if exclude is not None and np.asarray(exclude).size:
        blocked = [np.asarray(e, dtype=float) for e in np.atleast_2d(exclude)]
    selected: list[np.ndarray] = []
    work = surrogate

    def far_enough(cand: np.ndarray) -> bool:
        return all(
            np.linalg.norm(cand - s) > sep for s in selected
        ) and all(np.linalg.norm(cand - b) > sep for b in blocked)

    pool_arr = None if pool is None else np.asarray(pool, dtype=float)
    for k in range(cfg.batch_size):
        pick_seed = seed if k == 0 else _derive_seed(seed, k)
        if pool_arr is not None:
            mask = np.ones(pool_arr.shape[0], dtype=bool)
            for s in selected + blocked:
                mask &= np.linalg.norm(pool_arr - s, axis=1) > sep
            remaining = pool_arr[mask]
            if remaining.shape[0] == 0:
                break  # pool exhausted: return the picks found so far
            scores = _pool_scores(work, cfg, t, remaining)
            x = remaining[int(np.argmax(scores))].copy()
        else:
            d = work.normalizer.space.n_dims
            ranked = _ranked_continuous(work, cfg, t, pick_seed, d)
            x = None
            for _, _, cand in ranked:
                if far_enough(cand):
                    x = cand.copy()
                    break
            if x is None:
                # every start collapsed onto blocked points; fall back to
                # seeded uniform draws
                rng = np.random.default_rng(_derive_seed(pick_seed, 9999))
                for _ in range(200):
                    cand = rng.random(d)
                    if far_enough(cand):
                        x = cand
                        break
            if x is None:
                break
        selected.append(x)
        if k < cfg.batch_size - 1:
            work = work.fantasize(x)
    return selected
