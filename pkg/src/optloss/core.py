"""Shared domain types: datasets, noise grids, diffusion processes, estimator settings."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from optloss.errors import ConfigError, DataError, DomainError

__all__ = [
    "Dataset",
    "NoiseGrid",
    "ProcessKind",
    "DiffusionProcess",
    "EstimatorConfig",
    "OptimalLossCurve",
    "Unit",
    "data_variance",
]


class Unit(str, enum.Enum):
    TOTAL = "total"
    PER_DIM = "per_dim"

    @classmethod
    def parse(cls, value: str | Unit) -> Unit:
        if isinstance(value, Unit):
            return value
        return cls(value.replace("-", "_"))


@dataclass(frozen=True, eq=False)
class Dataset:
    """N flattened samples of dimension d.

    Values are held as float32, the on-disk precision of the DOLD format, so
    that every in-memory dataset survives a save/load round trip bit-exactly.
    Numerical work uses the float64 view in :attr:`x`.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"dataset must be a non-empty N x d array, got shape {arr.shape}")
        bad = ~np.isfinite(arr)
        if bad.any():
            row = int(np.argwhere(bad)[0, 0])
            raise DataError(f"non-finite value in row {row}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @cached_property
    def x(self) -> np.ndarray:
        out = self.values.astype(np.float64)
        out.setflags(write=False)
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )

    def __hash__(self):
        return hash((self.values.shape, self.values.tobytes()))


@dataclass(frozen=True)
class NoiseGrid:
    """Strictly increasing natural-log noise scales in VE coordinates."""

    log_sigmas: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(self.log_sigmas, dtype=float)))
        if not vals:
            raise DomainError("noise grid needs at least one point")
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("noise grid values must be finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise DomainError("noise grid must be strictly increasing")
        object.__setattr__(self, "log_sigmas", vals)

    @classmethod
    def linspace(cls, log_min: float, log_max: float, steps: int) -> NoiseGrid:
        if steps == 1:
            return cls((float(log_min),))
        return cls(tuple(np.linspace(log_min, log_max, steps)))

    @property
    def sigmas(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_sigmas))

    def __len__(self):
        return len(self.log_sigmas)


class ProcessKind(str, enum.Enum):
    VE = "VE"
    VP = "VP"
    FM = "FM"


@dataclass(frozen=True)
class DiffusionProcess:
    """Interpolation x_t = alpha * x0 + sigma * eps, parameterized by its native sigma.

    ``drift`` and ``diffusion_sq`` treat sigma itself as the time variable:
    a = d log(alpha) / d sigma and g^2 = sigma^2 * d log(sigma^2 / alpha^2) / d sigma.
    """

    kind: ProcessKind

    def __post_init__(self):
        object.__setattr__(self, "kind", ProcessKind(self.kind))

    @property
    def native_sigma_domain(self) -> tuple[float, float]:
        if self.kind is ProcessKind.VE:
            return (0.0, math.inf)
        return (0.0, 1.0)

    def check(self, sigma: float) -> float:
        lo, hi = self.native_sigma_domain
        sigma = float(sigma)
        if not (lo < sigma < hi):
            raise DomainError(f"sigma={sigma!r} outside the {self.kind.value} domain ({lo}, {hi})")
        return sigma

    def alpha(self, sigma: float) -> float:
        sigma = self.check(sigma)
        if self.kind is ProcessKind.VE:
            return 1.0
        if self.kind is ProcessKind.VP:
            return math.sqrt((1.0 - sigma) * (1.0 + sigma))
        return 1.0 - sigma

    def drift(self, sigma: float) -> float:
        sigma = self.check(sigma)
        if self.kind is ProcessKind.VE:
            return 0.0
        if self.kind is ProcessKind.VP:
            return -sigma / (1.0 - sigma * sigma)
        return -1.0 / (1.0 - sigma)

    def diffusion_sq(self, sigma: float) -> float:
        sigma = self.check(sigma)
        if self.kind is ProcessKind.VE:
            return 2.0 * sigma
        if self.kind is ProcessKind.VP:
            return 2.0 * sigma / (1.0 - sigma * sigma)
        return 2.0 * sigma / (1.0 - sigma)


@dataclass(frozen=True)
class EstimatorConfig:
    """Subset-estimator settings. ``None`` fields take data-dependent defaults.

    Defaults (see :meth:`resolve`): L = min(N, 5000), M = 4L, R = ceil(3N/L),
    C = 4N/L. ``correction=math.inf`` drops the self-pair term entirely.
    """

    subset_size: int | None = None
    xt_samples: int | None = None
    max_repeats: int | None = None
    correction: float | None = None
    seed: int = 0
    rel_tol: float = 1e-4

    def __post_init__(self):
        for name in ("subset_size", "xt_samples", "max_repeats"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.correction is not None and not (self.correction >= 1.0):
            raise ConfigError(f"correction must be >= 1, got {self.correction!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not (self.rel_tol > 0):
            raise ConfigError("rel_tol must be positive")

    def resolve(self, n_samples: int) -> EstimatorConfig:
        L = self.subset_size if self.subset_size is not None else min(n_samples, 5000)
        if L > n_samples:
            raise ConfigError(f"subset size L={L} exceeds dataset size N={n_samples}")
        M = self.xt_samples if self.xt_samples is not None else 4 * L
        R = self.max_repeats if self.max_repeats is not None else math.ceil(3 * n_samples / L)
        C = self.correction if self.correction is not None else max(1.0, 4 * n_samples / L)
        return EstimatorConfig(int(L), int(M), int(R), float(C), int(self.seed), self.rel_tol)


@dataclass(frozen=True)
class OptimalLossCurve:
    """Per-grid-point optimal loss (x0 prediction, VE coordinates)."""

    grid: NoiseGrid
    j_star: np.ndarray
    std_err: np.ndarray
    unit: Unit = Unit.TOTAL
    dim: int = 1
    clamped: np.ndarray = field(default=None)

    def __post_init__(self):
        j = np.asarray(self.j_star, dtype=float)
        s = np.asarray(self.std_err, dtype=float)
        if j.shape != (len(self.grid),) or s.shape != j.shape:
            raise DomainError("curve values must align with the grid")
        if (j < 0).any() or (s < 0).any():
            raise DomainError("optimal loss and standard errors must be nonnegative")
        object.__setattr__(self, "j_star", j)
        object.__setattr__(self, "std_err", s)
        object.__setattr__(self, "unit", Unit.parse(self.unit))
        c = np.zeros(j.shape, bool) if self.clamped is None else np.asarray(self.clamped, bool)
        object.__setattr__(self, "clamped", c)

    def to_unit(self, unit: Unit | str) -> OptimalLossCurve:
        unit = Unit.parse(unit)
        if unit is self.unit:
            return self
        factor = self.dim if unit is Unit.PER_DIM else 1.0 / self.dim
        return OptimalLossCurve(
            self.grid, self.j_star / factor, self.std_err / factor, unit, self.dim, self.clamped
        )


def data_variance(ds: Dataset, unit: Unit | str = Unit.TOTAL) -> float:
    """Mean squared distance of the samples to their mean."""
    x = ds.x
    centered = x - x.mean(axis=0)
    total = math.fsum(np.einsum("nd,nd->n", centered, centered)) / ds.n_samples
    if Unit.parse(unit) is Unit.PER_DIM:
        return total / ds.dim
    return total
