"""Offset power laws J(F) = beta * F**alpha + J* fitted to training-loss envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from optloss.errors import DegenerateFitError, InputError, OffsetError

__all__ = [
    "TrainingCurve",
    "PowerLawFit",
    "envelope",
    "fit_offset_power_law",
    "compare_corrected",
    "log_correlation",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_SEARCH_TOL = 1e-8
_SCAN_POINTS = 1024


@dataclass(frozen=True)
class TrainingCurve:
    label: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(f), float(j)) for f, j in self.points)
        if not pts:
            raise InputError(f"curve {self.label!r} has no points")
        for f, j in pts:
            if not (f > 0 and j > 0 and math.isfinite(f) and math.isfinite(j)):
                raise InputError(f"curve {self.label!r}: flops and loss must be positive")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise InputError(f"curve {self.label!r}: flops must be strictly increasing")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    beta: float
    j_star_offset: float
    rho: float
    residuals: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "j_star": self.j_star_offset,
            "rho": self.rho,
            "residuals": [float(r) for r in self.residuals],
        }


def envelope(curves) -> list[tuple[float, float]]:
    """Running minimum of the loss over all curves, merged by increasing flops."""
    curves = list(curves)
    if not curves:
        raise InputError("envelope needs at least one curve")
    merged = sorted((p for c in curves for p in c.points), key=lambda p: p[0])
    out: list[tuple[float, float]] = []
    best = math.inf
    for f, j in merged:
        best = min(best, j)
        if out and out[-1][0] == f:
            out[-1] = (f, best)
        else:
            out.append((f, best))
    return out


def _as_arrays(env):
    arr = np.asarray(env, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError("envelope must be a sequence of (flops, loss) pairs")
    return arr[:, 0], arr[:, 1]


def log_correlation(flops, loss, offset: float = 0.0) -> float:
    """|Pearson r| between log F and log(J - offset)."""
    gap = np.asarray(loss, dtype=float) - offset
    if np.any(gap <= 0):
        raise OffsetError("loss minus offset must stay positive")
    x = np.log(np.asarray(flops, dtype=float))
    y = np.log(gap)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise DegenerateFitError("no variation in log flops or log loss")
    return min(1.0, abs(float(xc @ yc)) / math.sqrt(sxx * syy))


def _misfit(x, loss, offset):
    """1 - rho^2 as residual/total sum of squares; smaller means larger rho."""
    y = np.log(loss - offset)
    xc, yc = x - x.mean(), y - y.mean()
    slope = float(xc @ yc) / float(xc @ xc)
    resid = yc - slope * xc
    syy = float(yc @ yc)
    return float(resid @ resid) / syy if syy > 0 else math.inf


def _golden(fn, lo, hi):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > _SEARCH_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return (c, fc) if fc <= fd else (d, fd)


def _search_offset(x, loss):
    hi = (1.0 - 1e-6) * float(loss.min())
    fn = lambda off: _misfit(x, loss, off)  # noqa: E731
    best, f_best = _golden(fn, 0.0, hi)
    ends = [(0.0, fn(0.0)), (hi, fn(hi))]
    if any(fe < f_best for _, fe in ends):
        # Not unimodal on the bracket: scan, then refine around the best cell.
        grid = np.linspace(0.0, hi, _SCAN_POINTS)
        vals = np.array([fn(g) for g in grid])
        i = int(np.argmin(vals))
        lo_i, hi_i = max(i - 1, 0), min(i + 1, _SCAN_POINTS - 1)
        best, f_best = _golden(fn, grid[lo_i], grid[hi_i])
        if vals[i] < f_best:
            best = float(grid[i])
    return float(best)


def fit_offset_power_law(env, offset="search", skip_first: int = 0) -> PowerLawFit:
    """Fit log(J - J*) = log(beta) + alpha * log(F).

    ``offset`` is either ``"search"`` (golden-section maximization of the
    correlation over J* in [0, (1 - 1e-6) min J]) or a fixed J* value.
    """
    flops, loss = _as_arrays(env)
    flops, loss = flops[skip_first:], loss[skip_first:]
    if len(flops) < 3:
        raise InputError(f"need at least 3 envelope points, got {len(flops)}")
    if np.all(loss == loss[0]):
        raise DegenerateFitError("all losses are equal")
    x = np.log(flops)
    if isinstance(offset, str):
        if offset != "search":
            raise InputError(f"unknown offset mode {offset!r}")
        j_star = _search_offset(x, loss)
    else:
        j_star = float(offset)
        if j_star < 0:
            raise OffsetError("offset must be nonnegative")
    if np.any(loss - j_star <= 0):
        raise OffsetError(f"offset {j_star} is not below every loss value")
    y = np.log(loss - j_star)
    slope, intercept = np.polynomial.polynomial.polyfit(x, y, 1)[::-1]
    resid = y - (intercept + slope * x)
    rho = log_correlation(flops, loss, j_star)
    return PowerLawFit(float(slope), math.exp(intercept), j_star, rho, resid)


def compare_corrected(env, j_star: float) -> tuple[float, float]:
    """(rho of log J vs log F, rho of log(J - j_star) vs log F)."""
    flops, loss = _as_arrays(env)
    if not 0 <= j_star < loss.min():
        raise OffsetError("j_star must lie in [0, min J)")
    return log_correlation(flops, loss, 0.0), log_correlation(flops, loss, j_star)
