"""Design spaces, fidelity-tagged observations, and coordinate normalization.

All surrogate math runs on inputs mapped to the unit cube and outputs
standardized against the real-fidelity observations; raw units appear only
at the oracle and API boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

# Exact-x pairing tolerance in normalized coordinates. Real evaluations are
# only ever triggered at points the loop itself generated, so matches are
# exact up to float round-trip; no fuzzy matching.
PAIRING_TOL = 1e-12

Y_SCALE_FLOOR = 1e-8


class SpaceError(ValueError):
    """Base class for design-space and dataset violations."""


class OutOfBounds(SpaceError):
    def __init__(self, dim_index: int, value: float, lower: float, upper: float):
        self.dim_index = dim_index
        super().__init__(
            f"coordinate {dim_index} = {value!r} outside [{lower}, {upper}]"
        )


class PairingViolation(SpaceError):
    """A real-fidelity observation has no LLM-fidelity entry at the same x."""


class DuplicateRealPoint(SpaceError):
    """A second real-fidelity observation at an already-measured x."""


class InvalidObservation(SpaceError):
    """Observation violates a dataset invariant other than pairing/bounds."""


class Fidelity(str, enum.Enum):
    REAL = "real"
    LLM = "llm"


class Origin(str, enum.Enum):
    WARM_START_INIT = "warm_start_init"
    WARM_START_LHS = "warm_start_lhs"
    LOOP_BATCH = "loop_batch"
    HUMAN_TELL = "human_tell"


@dataclass(frozen=True)
class Dimension:
    """One bounded continuous input dimension, in raw units."""

    name: str
    lower: float
    upper: float
    unit: Optional[str] = None

    def __post_init__(self):
        if not (self.lower < self.upper):
            raise SpaceError(
                f"dimension {self.name!r}: lower {self.lower} must be < upper {self.upper}"
            )


@dataclass(frozen=True)
class DesignSpace:
    """Named, bounded input box plus a declared output range.

    Parameters
    ----------
    dims : sequence of Dimension
        Ordered input dimensions. Order is fixed for the lifetime of a
        campaign; the prompt protocol depends on it.
    y_min, y_max : float
        The valid output range. LLM-fidelity predictions are clipped into
        it; real measurements are stored as measured.
    pool : ndarray of shape (m, d), optional
        Candidate-pool mode: optimization is restricted to these raw
        points (tabular benchmark rows). Omit for continuous-box mode.
    """

    dims: tuple[Dimension, ...]
    y_min: float
    y_max: float
    pool: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise SpaceError(f"duplicate dimension names in {names}")
        if not names:
            raise SpaceError("a design space needs at least one dimension")
        if not (self.y_min < self.y_max):
            raise SpaceError(f"y_min {self.y_min} must be < y_max {self.y_max}")
        if self.pool is not None:
            pool = np.asarray(self.pool, dtype=float)
            if pool.ndim != 2 or pool.shape[1] != len(self.dims):
                raise SpaceError(f"pool must have shape (m, {len(self.dims)})")
            lo, hi = self.lower_bounds(), self.upper_bounds()
            if np.any(pool < lo) or np.any(pool > hi):
                bad = int(np.argwhere((pool < lo) | (pool > hi))[0][0])
                raise SpaceError(f"pool point {bad} outside the box bounds")
            pool.setflags(write=False)
            object.__setattr__(self, "pool", pool)

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def lower_bounds(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    def upper_bounds(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])

    def is_pool_mode(self) -> bool:
        return self.pool is not None


def _check_bounds(space: DesignSpace, x: np.ndarray) -> None:
    lo, hi = space.lower_bounds(), space.upper_bounds()
    # tiny relative slack absorbs float round-trip through normalization
    eps = 1e-12 * np.maximum(1.0, np.abs(hi - lo))
    for i in range(space.n_dims):
        if x[i] < lo[i] - eps[i] or x[i] > hi[i] + eps[i]:
            raise OutOfBounds(i, float(x[i]), float(lo[i]), float(hi[i]))


def normalize_point(space: DesignSpace, x: Sequence[float]) -> np.ndarray:
    """Map a raw in-bounds point affinely onto the unit cube."""
    x = np.asarray(x, dtype=float)
    if x.shape != (space.n_dims,):
        raise SpaceError(f"expected {space.n_dims} coordinates, got shape {x.shape}")
    _check_bounds(space, x)
    lo, hi = space.lower_bounds(), space.upper_bounds()
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def denormalize_point(space: DesignSpace, u: Sequence[float]) -> np.ndarray:
    """Inverse of :func:`normalize_point`."""
    u = np.asarray(u, dtype=float)
    lo, hi = space.lower_bounds(), space.upper_bounds()
    return lo + u * (hi - lo)


def normalize_pool(space: DesignSpace) -> np.ndarray:
    """Pool points mapped to the unit cube, shape (m, d)."""
    if space.pool is None:
        raise SpaceError("space has no candidate pool")
    lo, hi = space.lower_bounds(), space.upper_bounds()
    return (space.pool - lo) / (hi - lo)


@dataclass(frozen=True)
class Observation:
    """A single evaluation: raw input vector, raw output, fidelity tag."""

    x: tuple[float, ...]
    y: float
    fidelity: Fidelity
    iteration: int = 0
    origin: Origin = Origin.LOOP_BATCH

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "y", float(self.y))
        if self.iteration < 0:
            raise InvalidObservation("iteration must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "y": self.y,
            "fidelity": self.fidelity.value,
            "iteration": self.iteration,
            "origin": self.origin.value,
        }

    @staticmethod
    def from_dict(d: dict) -> "Observation":
        return Observation(
            x=tuple(d["x"]),
            y=d["y"],
            fidelity=Fidelity(d["fidelity"]),
            iteration=d["iteration"],
            origin=Origin(d["origin"]),
        )


@dataclass(frozen=True)
class FidelityDataset:
    """Immutable container of real- and LLM-fidelity observations.

    Maintains the pairing invariant: every real-fidelity x also appears as
    an LLM-fidelity x (component-wise match within ``PAIRING_TOL`` in
    normalized coordinates). ``enforce_pairing=False`` relaxes this for
    single-fidelity (vanilla) runs that never hold LLM observations.
    """

    space: DesignSpace
    real_obs: tuple[Observation, ...] = ()
    llm_obs: tuple[Observation, ...] = ()
    enforce_pairing: bool = True

    def real_x_normalized(self) -> np.ndarray:
        if not self.real_obs:
            return np.zeros((0, self.space.n_dims))
        return np.array([normalize_point(self.space, o.x) for o in self.real_obs])

    def llm_x_normalized(self) -> np.ndarray:
        if not self.llm_obs:
            return np.zeros((0, self.space.n_dims))
        return np.array([normalize_point(self.space, o.x) for o in self.llm_obs])

    def real_y(self) -> np.ndarray:
        return np.array([o.y for o in self.real_obs])

    def llm_y(self) -> np.ndarray:
        return np.array([o.y for o in self.llm_obs])

    def _find_llm(self, x_norm: np.ndarray) -> Optional[int]:
        for i, o in enumerate(self.llm_obs):
            u = normalize_point(self.space, o.x)
            if np.max(np.abs(u - x_norm)) <= PAIRING_TOL:
                return i
        return None

    def _find_real(self, x_norm: np.ndarray) -> Optional[int]:
        for i, o in enumerate(self.real_obs):
            u = normalize_point(self.space, o.x)
            if np.max(np.abs(u - x_norm)) <= PAIRING_TOL:
                return i
        return None

    def insert(self, obs: Observation) -> "FidelityDataset":
        """Return a new dataset with ``obs`` appended, or raise."""
        x = np.asarray(obs.x, dtype=float)
        if x.shape != (self.space.n_dims,):
            raise InvalidObservation(
                f"expected {self.space.n_dims} coordinates, got {len(obs.x)}"
            )
        _check_bounds(self.space, x)
        x_norm = normalize_point(self.space, obs.x)
        if obs.fidelity is Fidelity.LLM:
            if not (self.space.y_min <= obs.y <= self.space.y_max):
                raise InvalidObservation(
                    f"LLM-fidelity y={obs.y} outside "
                    f"[{self.space.y_min}, {self.space.y_max}]; clip upstream"
                )
            return replace(self, llm_obs=self.llm_obs + (obs,))
        if self._find_real(x_norm) is not None:
            raise DuplicateRealPoint(f"real observation at {obs.x} already exists")
        if self.enforce_pairing and self._find_llm(x_norm) is None:
            raise PairingViolation(
                f"real observation at {obs.x} has no LLM-fidelity entry at the same x"
            )
        return replace(self, real_obs=self.real_obs + (obs,))

    def paired_values(self) -> list[tuple[float, float]]:
        """(y_llm, y_real) per real observation, in real insertion order.

        The LLM side of each pair is the first LLM observation recorded at
        that x.
        """
        pairs = []
        for o in self.real_obs:
            x_norm = normalize_point(self.space, o.x)
            j = self._find_llm(x_norm)
            if j is None:
                continue  # only reachable with enforce_pairing=False
            pairs.append((self.llm_obs[j].y, o.y))
        return pairs

    def counts(self) -> tuple[int, int]:
        return len(self.real_obs), len(self.llm_obs)

    def to_dict(self) -> dict:
        return {
            "real": [o.to_dict() for o in self.real_obs],
            "llm": [o.to_dict() for o in self.llm_obs],
            "enforce_pairing": self.enforce_pairing,
        }

    @staticmethod
    def from_dict(space: DesignSpace, d: dict) -> "FidelityDataset":
        return FidelityDataset(
            space=space,
            real_obs=tuple(Observation.from_dict(o) for o in d["real"]),
            llm_obs=tuple(Observation.from_dict(o) for o in d["llm"]),
            enforce_pairing=d.get("enforce_pairing", True),
        )


def insert_observation(ds: FidelityDataset, obs: Observation) -> FidelityDataset:
    """Functional alias for :meth:`FidelityDataset.insert`."""
    return ds.insert(obs)


def paired_values(ds: FidelityDataset) -> list[tuple[float, float]]:
    """Functional alias for :meth:`FidelityDataset.paired_values`."""
    return ds.paired_values()


@dataclass(frozen=True)
class Normalizer:
    """Affine input normalization plus output standardization.

    ``y_center``/``y_scale`` come from the real-fidelity observations
    (mean and population std, floored at ``Y_SCALE_FLOOR``); before any
    real observation exists they default to 0/1.
    """

    space: DesignSpace
    y_center: float = 0.0
    y_scale: float = 1.0

    def __post_init__(self):
        if not (self.y_scale > 0):
            raise SpaceError("y_scale must be positive")

    @staticmethod
    def from_dataset(ds: FidelityDataset) -> "Normalizer":
        ys = ds.real_y()
        if ys.size == 0:
            return Normalizer(ds.space)
        center = float(np.mean(ys))
        scale = float(max(np.std(ys), Y_SCALE_FLOOR))
        return Normalizer(ds.space, y_center=center, y_scale=scale)

    def normalize(self, x: Sequence[float]) -> np.ndarray:
        return normalize_point(self.space, x)

    def denormalize(self, u: Sequence[float]) -> np.ndarray:
        return denormalize_point(self.space, u)

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_center) / self.y_scale

    def destandardize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.y_scale + self.y_center

    def destandardize_var(self, var) -> np.ndarray:
        return np.asarray(var, dtype=float) * (self.y_scale**2)
