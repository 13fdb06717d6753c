"""Monte Carlo estimators of the optimal denoising loss J* = A - B.

A is the data second moment E||x0||^2. B = E||E[x0 | x_t]||^2 is estimated by
one of four routes that differ only in which candidates enter the posterior
mean and how x_t is built:

``full``
    x_t from a uniformly drawn data point, posterior over the whole dataset.
``snis``
    x_t as in ``full``; posterior over a random subset of size L drawn with
    replacement, shared by numerator and denominator.
``cdol`` / ``dol``
    Subset of size L drawn with replacement, x_t built from a uniformly drawn
    subset position, and that position's kernel weight multiplied by 1/C.
    ``dol`` is ``cdol`` with C = 1.

Every repeat draws from its own Philox stream keyed by ``(seed, sigma,
repeat)``, where sigma enters through its IEEE-754 bit pattern. Any repeat can
be recomputed in isolation, and a grid point's result does not depend on the
rest of the grid, evaluation order, or worker count.
"""

from __future__ import annotations

import enum
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from optloss.core import Dataset, EstimatorConfig, NoiseGrid, OptimalLossCurve, Unit
from optloss.errors import ConfigError, DomainError
from optloss.kernels import posterior_means

__all__ = [
    "EstimatorKind",
    "BEstimate",
    "EstimateReport",
    "estimate_A",
    "estimate_B_full",
    "estimate_B_snis",
    "estimate_B_dol",
    "estimate_B_cdol",
    "estimate_B",
    "repeat_values",
    "estimate_curve",
    "repeat_stream",
    "point_key",
]

# Elements of the (repeats, M, L) logit tensor evaluated at once.
_BLOCK = 1 << 21
_MIN_REPEATS_FOR_STOP = 3


class EstimatorKind(str, enum.Enum):
    FULL = "full"
    SNIS = "snis"
    DOL = "dol"
    CDOL = "cdol"


class BEstimate(NamedTuple):
    b_hat: float
    std_err: float
    repeats_used: int


@dataclass(frozen=True)
class EstimateReport:
    curve: OptimalLossCurve
    a_hat: float
    b_hat: np.ndarray
    repeats_used: np.ndarray
    estimator: EstimatorKind
    config: EstimatorConfig

    @property
    def clamped(self) -> np.ndarray:
        return self.curve.clamped


def estimate_A(ds: Dataset) -> float:
    """Mean squared norm of the samples (correctly rounded sum)."""
    sq = np.einsum("nd,nd->n", ds.x, ds.x)
    return math.fsum(sq) / ds.n_samples


class _Stream:
    """Philox generator repositioned per (seed, point, repeat) key."""

    def __init__(self, seed: int):
        self._key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=int(seed))
        self.rng = np.random.Generator(self._bitgen)

    def at(self, point: int, repeat: int) -> np.random.Generator:
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array([0, 0, repeat, point], dtype=np.uint64),
                "key": self._key,
            },
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self.rng


def repeat_stream(seed: int, sigma: float, repeat: int) -> np.random.Generator:
    """A fresh generator for one repeat; identical to the estimators' internal stream."""
    point = point_key(sigma)
    return np.random.Generator(
        np.random.Philox(key=int(seed), counter=(point << 192) | (int(repeat) << 128))
    )


def point_key(sigma: float) -> int:
    """Stream word for a noise scale: the bit pattern of the float64 value."""
    return struct.unpack("<Q", struct.pack("<d", float(sigma)))[0]


def _check_point(alpha, sigma):
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha!r}")


def _sq_norms(xt, cand, alpha, sigma, self_index, correction):
    """Squared norms of posterior means, chunked along the query axis."""
    batch, m, _ = xt.shape
    width = cand.shape[-2]
    step = max(1, _BLOCK // max(1, batch * width))
    out = np.empty((batch, m))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        idx = None if self_index is None else self_index[:, lo:hi]
        mean = posterior_means(xt[:, lo:hi], cand, alpha, sigma, idx, correction)
        out[:, lo:hi] = np.einsum("bmd,bmd->bm", mean, mean)
    return out


def repeat_values(
    ds: Dataset,
    kind: EstimatorKind | str,
    alpha: float,
    sigma: float,
    subset_size: int,
    xt_samples: int,
    correction: float = 1.0,
    seed: int = 0,
    repeats: range | int = 1,
    return_samples: bool = False,
):
    """Per-repeat B estimates for the given repeat indices.

    Returns an array with one B value per repeat; with ``return_samples`` the
    ``(repeats, M)`` array of squared posterior-mean norms is returned as well.
    """
    kind = EstimatorKind(kind)
    _check_point(alpha, sigma)
    if isinstance(repeats, int):
        repeats = range(repeats)
    x = ds.x
    n, d = x.shape
    M = int(xt_samples)
    if M < 1:
        raise ConfigError("xt_samples must be positive")
    if kind is EstimatorKind.FULL:
        L = n
        correction = 1.0
    else:
        L = int(subset_size)
        if not 1 <= L <= n:
            raise ConfigError(f"subset size L={L} must lie in 1..N={n}")
    if kind is EstimatorKind.DOL:
        correction = 1.0
    if kind is EstimatorKind.SNIS:
        correction = 1.0
    if not correction >= 1.0:
        raise ConfigError(f"correction must be >= 1, got {correction!r}")
    if correction == math.inf and L < 2:
        raise ConfigError("correction=inf needs a subset of at least two points")

    stream = _Stream(seed)
    point = point_key(sigma)
    per_batch = max(1, _BLOCK // (M * L))
    values = np.empty(len(repeats))
    samples = np.empty((len(repeats), M)) if return_samples else None
    reps = list(repeats)
    for lo in range(0, len(reps), per_batch):
        chunk = reps[lo:lo + per_batch]
        b = len(chunk)
        src = np.empty((b, M), dtype=np.int64)
        eps = np.empty((b, M, d))
        subset = None if kind is EstimatorKind.FULL else np.empty((b, L), dtype=np.int64)
        for i, r in enumerate(chunk):
            rng = stream.at(point, r)
            if kind is EstimatorKind.FULL:
                src[i] = rng.integers(0, n, M)
            elif kind is EstimatorKind.SNIS:
                subset[i] = rng.integers(0, n, L)
                src[i] = rng.integers(0, n, M)
            else:
                subset[i] = rng.integers(0, n, L)
                src[i] = rng.integers(0, L, M)
            eps[i] = rng.standard_normal((M, d))
        if kind is EstimatorKind.FULL:
            cand = x[None]
            x0 = x[src]
            self_index = None
        else:
            cand = x[subset]
            if kind is EstimatorKind.SNIS:
                x0 = x[src]
                self_index = None
            else:
                x0 = np.take_along_axis(cand, src[..., None], axis=1)
                self_index = src
        xt = alpha * x0 + sigma * eps
        sq = _sq_norms(xt, cand, alpha, sigma, self_index, correction)
        values[lo:lo + b] = sq.mean(axis=1)
        if return_samples:
            samples[lo:lo + b] = sq
    if return_samples:
        return values, samples
    return values


def _all_rows_equal(ds: Dataset) -> bool:
    v = ds.values
    return bool((v == v[0]).all())


def _summarize(values, samples=None) -> BEstimate:
    k = len(values)
    b_hat = math.fsum(values) / k
    if k >= 2:
        se = float(np.std(values, ddof=1)) / math.sqrt(k)
    elif samples is not None and samples.shape[1] >= 2:
        se = float(np.std(samples[0], ddof=1)) / math.sqrt(samples.shape[1])
    else:
        se = 0.0
    return BEstimate(b_hat, se, k)


def _run(ds, kind, alpha, sigma, L, M, C, seed, max_repeats, rel_tol) -> BEstimate:
    _check_point(alpha, sigma)
    if _all_rows_equal(ds):
        # Posterior mean is the point itself for every x_t.
        return BEstimate(estimate_A(ds), 0.0, 1)
    if rel_tol is None or max_repeats < _MIN_REPEATS_FOR_STOP:
        values, samples = repeat_values(
            ds, kind, alpha, sigma, L, M, C, seed, max_repeats, return_samples=True
        )
        return _summarize(values, samples)

    per_batch = max(1, _BLOCK // (M * (ds.n_samples if kind == EstimatorKind.FULL else L)))
    collected: list[float] = []
    count, mean, m2 = 0, 0.0, 0.0
    r = 0
    while r < max_repeats:
        hi = min(max_repeats, r + per_batch)
        batch = repeat_values(ds, kind, alpha, sigma, L, M, C, seed, range(r, hi))
        for v in batch:
            collected.append(float(v))
            count += 1
            delta = v - mean
            mean += delta / count
            m2 += delta * (v - mean)
            if count >= _MIN_REPEATS_FOR_STOP and mean != 0.0:
                se = math.sqrt(m2 / (count - 1) / count)
                if se / abs(mean) < rel_tol:
                    return _summarize(np.array(collected))
        r = hi
    return _summarize(np.array(collected))


def estimate_B_full(ds: Dataset, alpha: float, sigma: float, xt_samples: int,
                    seed: int = 0, repeats: int = 1) -> BEstimate:
    """B over the whole dataset; standard error of the M squared norms when ``repeats == 1``."""
    return _run(ds, EstimatorKind.FULL, alpha, sigma, ds.n_samples, xt_samples, 1.0,
                seed, repeats, None)


def estimate_B_snis(ds: Dataset, alpha: float, sigma: float, subset_size: int,
                    xt_samples: int, seed: int = 0, repeats: int = 1) -> BEstimate:
    return _run(ds, EstimatorKind.SNIS, alpha, sigma, subset_size, xt_samples, 1.0,
                seed, repeats, None)


def estimate_B_cdol(ds: Dataset, alpha: float, sigma: float,
                    config: EstimatorConfig | None = None) -> BEstimate:
    """Corrected subset estimator with early stopping on ``std_err / |b_hat| < rel_tol``."""
    cfg = (config or EstimatorConfig()).resolve(ds.n_samples)
    return _run(ds, EstimatorKind.CDOL, alpha, sigma, cfg.subset_size, cfg.xt_samples,
                cfg.correction, cfg.seed, cfg.max_repeats, cfg.rel_tol)


def estimate_B_dol(ds: Dataset, alpha: float, sigma: float,
                   config: EstimatorConfig | None = None) -> BEstimate:
    cfg = (config or EstimatorConfig()).resolve(ds.n_samples)
    return _run(ds, EstimatorKind.DOL, alpha, sigma, cfg.subset_size, cfg.xt_samples,
                1.0, cfg.seed, cfg.max_repeats, cfg.rel_tol)


def estimate_B(ds: Dataset, kind: EstimatorKind | str, alpha: float, sigma: float,
               config: EstimatorConfig | None = None) -> BEstimate:
    """Dispatch on ``kind`` using a (possibly partial) config."""
    kind = EstimatorKind(kind)
    cfg = (config or EstimatorConfig()).resolve(ds.n_samples)
    C = 1.0 if kind is not EstimatorKind.CDOL else cfg.correction
    return _run(ds, kind, alpha, sigma, cfg.subset_size, cfg.xt_samples, C,
                cfg.seed, cfg.max_repeats, cfg.rel_tol)


def estimate_curve(
    ds: Dataset,
    grid: NoiseGrid,
    kind: EstimatorKind | str = EstimatorKind.CDOL,
    config: EstimatorConfig | None = None,
    threads: int = 1,
) -> EstimateReport:
    """Evaluate J* at every grid point (VE process, x0 target).

    Each point's streams are keyed by its own sigma, so results depend only on
    (dataset, grid, config), never on ``threads``.
    """
    kind = EstimatorKind(kind)
    cfg = (config or EstimatorConfig()).resolve(ds.n_samples)
    a_hat = estimate_A(ds)
    sigmas = grid.sigmas

    def one(i):
        return estimate_B(ds, kind, 1.0, float(sigmas[i]), cfg)

    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(grid))))
    else:
        results = [one(i) for i in range(len(grid))]

    b_hat = np.array([r.b_hat for r in results])
    se = np.array([r.std_err for r in results])
    raw = a_hat - b_hat
    j = np.maximum(raw, 0.0)
    curve = OptimalLossCurve(grid, j, se, Unit.TOTAL, ds.dim, clamped=raw < 0)
    return EstimateReport(
        curve, a_hat, b_hat, np.array([r.repeats_used for r in results]), kind, cfg
    )
