"""Training schedules derived from the optimal-loss curve.

The loss weight is ``a * min(1/J*, w_star) + N(log s; mu, varsigma^2) * [s < sigma_star]``
and the noise density over log sigma is proportional to the weighted loss gap
``w * (J - J*)``, tracked per bin with an exponential moving average and emitted
as a piecewise-linear density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from optloss.core import NoiseGrid, OptimalLossCurve
from optloss.errors import (
    AlignmentError,
    DomainError,
    ExtrapolationError,
    NoCriticalPointError,
)

__all__ = [
    "WeightParams",
    "GapBins",
    "PiecewisePdf",
    "monotone_curve",
    "interpolate_jstar",
    "loss_weight",
    "loss_weight_terms",
    "detect_critical_point",
    "default_weight_params",
    "update_gap_bins",
    "adaptive_pdf",
    "sample_sigma",
    "schedule_export",
    "DEFAULT_THRESHOLD_FRAC",
    "GAP_FLOOR_FRAC",
]

DEFAULT_THRESHOLD_FRAC = 0.01
GAP_FLOOR_FRAC = 1e-6


@dataclass(frozen=True)
class WeightParams:
    a: float
    w_star: float
    sigma_star: float
    mu: float
    varsigma: float

    def __post_init__(self):
        for name in ("a", "w_star", "sigma_star", "varsigma"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


def monotone_curve(curve: OptimalLossCurve) -> np.ndarray:
    """Nondecreasing least-squares projection of the J* values (pool adjacent violators)."""
    return isotonic_regression(curve.j_star, increasing=True).x


def interpolate_jstar(curve: OptimalLossCurve, sigma_hat, monotone: np.ndarray | None = None):
    """J* at ``sigma_hat``, linear in log sigma between grid points."""
    grid = np.asarray(curve.grid.log_sigmas)
    j = monotone_curve(curve) if monotone is None else monotone
    ls = np.log(np.asarray(sigma_hat, dtype=float))
    if np.any(ls < grid[0]) or np.any(ls > grid[-1]):
        raise ExtrapolationError(
            f"sigma_hat outside the curve span [{math.exp(grid[0])}, {math.exp(grid[-1])}]"
        )
    if len(grid) == 1:
        return np.full(np.shape(ls), j[0])[()]
    return np.interp(ls, grid, j)[()]


def _bump(log_sigma, mu, varsigma):
    z = (log_sigma - mu) / varsigma
    return np.exp(-0.5 * z * z) / (varsigma * math.sqrt(2.0 * math.pi))


def loss_weight_terms(curve, params: WeightParams, sigma_hat, monotone=None):
    """(cutoff term, bump term) of the loss weight; their sum is the weight."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    j = np.asarray(interpolate_jstar(curve, sigma_hat, monotone), dtype=float)
    with np.errstate(divide="ignore"):
        inv = np.where(j > 0, 1.0 / np.where(j > 0, j, 1.0), np.inf)
    base = params.a * np.minimum(inv, params.w_star)
    bump = np.where(
        sigma_hat < params.sigma_star, _bump(np.log(sigma_hat), params.mu, params.varsigma), 0.0
    )
    return base[()], bump[()]


def loss_weight(curve: OptimalLossCurve, params: WeightParams, sigma_hat, monotone=None):
    base, bump = loss_weight_terms(curve, params, sigma_hat, monotone)
    return base + bump


def detect_critical_point(curve: OptimalLossCurve,
                          threshold_frac: float = DEFAULT_THRESHOLD_FRAC) -> float:
    """Smallest sigma where the monotone J* curve reaches ``threshold_frac`` of its maximum."""
    if not 0 < threshold_frac < 1:
        raise DomainError("threshold_frac must lie in (0, 1)")
    j = monotone_curve(curve)
    top = j.max()
    if not top > 0:
        raise NoCriticalPointError("optimal-loss curve is identically zero")
    level = threshold_frac * top
    grid = np.asarray(curve.grid.log_sigmas)
    i = int(np.argmax(j >= level))
    if i == 0:
        return math.exp(grid[0])
    frac = (level - j[i - 1]) / (j[i] - j[i - 1])
    return math.exp(grid[i - 1] + frac * (grid[i] - grid[i - 1]))


def default_weight_params(curve: OptimalLossCurve, a: float = 1.0, w_star: float | None = None,
                          sigma_star: float | None = None, mu: float | None = None,
                          varsigma: float = 0.5,
                          threshold_frac: float = DEFAULT_THRESHOLD_FRAC) -> WeightParams:
    """Fill unset weight parameters from the curve.

    sigma_star is detected at ``threshold_frac``; w_star defaults to 1/J* at
    sigma_star so the weight stops growing there; mu defaults to one e-fold
    below sigma_star.
    """
    if sigma_star is None:
        sigma_star = detect_critical_point(curve, threshold_frac)
    if w_star is None:
        j_at = float(interpolate_jstar(curve, sigma_star))
        if not j_at > 0:
            j_at = threshold_frac * float(monotone_curve(curve).max())
        w_star = 1.0 / j_at
    if mu is None:
        mu = math.log(sigma_star) - 1.0
    return WeightParams(a, w_star, sigma_star, mu, varsigma)


@dataclass(frozen=True)
class GapBins:
    """EMA of the weighted loss gap per log-sigma bin; single writer."""

    grid: NoiseGrid
    gaps: np.ndarray
    decay: float = 0.9
    floor: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.gaps, dtype=float)
        if g.shape != (len(self.grid),):
            raise AlignmentError("gaps must align with the bin grid")
        if not 0.0 <= self.decay <= 1.0:
            raise DomainError("decay must lie in [0, 1]")
        if self.floor < 0:
            raise DomainError("floor must be nonnegative")
        object.__setattr__(self, "gaps", np.maximum(g, self.floor))

    @classmethod
    def from_observation(cls, grid: NoiseGrid, observed, decay=0.9, floor=0.0) -> GapBins:
        return cls(grid, np.maximum(np.asarray(observed, dtype=float), floor), decay, floor)


def update_gap_bins(bins: GapBins, observed, grid: NoiseGrid | None = None) -> GapBins:
    """new = decay * old + (1 - decay) * max(observed, floor), per bin."""
    obs = np.asarray(observed, dtype=float)
    if grid is not None and grid != bins.grid:
        raise AlignmentError("observation grid differs from the bin grid")
    if obs.shape != bins.gaps.shape:
        raise AlignmentError(f"expected {bins.gaps.shape[0]} observations, got {obs.shape}")
    new = bins.decay * bins.gaps + (1.0 - bins.decay) * np.maximum(obs, bins.floor)
    return GapBins(bins.grid, new, bins.decay, bins.floor)


@dataclass(frozen=True)
class PiecewisePdf:
    """Density over log sigma, linear between knots and zero outside."""

    knots: np.ndarray
    density: np.ndarray
    uniform_fallback: bool = False

    def __post_init__(self):
        x = np.asarray(self.knots, dtype=float)
        f = np.asarray(self.density, dtype=float)
        if x.ndim != 1 or x.shape != f.shape or len(x) < 2:
            raise DomainError("need at least two knots with matching densities")
        if np.any(np.diff(x) <= 0) or np.any(f < 0):
            raise DomainError("knots must increase and densities be nonnegative")
        object.__setattr__(self, "knots", x)
        object.__setattr__(self, "density", f)
        seg = 0.5 * (f[1:] + f[:-1]) * np.diff(x)
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        object.__setattr__(self, "_cdf", cdf)

    @property
    def cdf_knots(self) -> np.ndarray:
        return self._cdf

    def integral(self) -> float:
        f, x = self.density, self.knots
        return math.fsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))

    def pdf(self, log_sigma):
        ls = np.asarray(log_sigma, dtype=float)
        out = np.interp(ls, self.knots, self.density, left=0.0, right=0.0)
        return out[()]

    def cdf(self, log_sigma):
        ls = np.clip(np.asarray(log_sigma, dtype=float), self.knots[0], self.knots[-1])
        k = np.clip(np.searchsorted(self.knots, ls, side="right") - 1, 0, len(self.knots) - 2)
        x0, h = self.knots[k], np.diff(self.knots)[k]
        f0, f1 = self.density[k], self.density[k + 1]
        tau = ls - x0
        return (self._cdf[k] + f0 * tau + 0.5 * (f1 - f0) / h * tau * tau)[()]

    def to_json(self):
        return [[float(a), float(b)] for a, b in zip(self.knots, self.density)]


def adaptive_pdf(bins: GapBins) -> PiecewisePdf:
    """Normalized piecewise-linear density through (log sigma_i, gap_i)."""
    x = np.asarray(bins.grid.log_sigmas)
    if len(x) < 2:
        raise DomainError("adaptive density needs at least two bins")
    g = bins.gaps
    if np.all(g <= bins.floor):
        span = x[-1] - x[0]
        return PiecewisePdf(x, np.full(len(x), 1.0 / span), uniform_fallback=True)
    mass = math.fsum(0.5 * (g[1:] + g[:-1]) * np.diff(x))
    return PiecewisePdf(x, g / mass)


def sample_sigma(pdf: PiecewisePdf, u):
    """Inverse CDF of ``pdf``; returns sigma_hat = exp(log sigma). Vectorized over ``u``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u >= 1):
        raise DomainError("u must lie in [0, 1)")
    cdf = pdf.cdf_knots
    target = u * cdf[-1]
    k = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, len(cdf) - 2)
    x0 = pdf.knots[k]
    h = np.diff(pdf.knots)[k]
    f0 = pdf.density[k]
    slope = (pdf.density[k + 1] - f0) / h
    r = target - cdf[k]
    # Root of f0*tau + slope*tau^2/2 = r written to avoid cancellation.
    disc = np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * r, 0.0))
    denom = f0 + disc
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
    tau = np.clip(tau, 0.0, h)
    return np.exp(x0 + tau)[()]


def schedule_export(curve: OptimalLossCurve, params: WeightParams, pdf: PiecewisePdf,
                    threshold_frac: float, decay: float, gap_floor: float) -> dict:
    """JSON-ready schedule: weight table, density knots and every parameter used."""
    grid = curve.grid.sigmas
    mono = monotone_curve(curve)
    base, bump = loss_weight_terms(curve, params, grid, mono)
    base, bump = np.atleast_1d(base), np.atleast_1d(bump)
    log_s = curve.grid.log_sigmas
    return {
        "weight_table": [[float(ls), float(b + f)] for ls, b, f in zip(log_s, base, bump)],
        "weight_terms": [
            {"log_sigma": float(ls), "cutoff_term": float(b), "bump_term": float(f),
             "cutoff_binds": bool(b == params.a * params.w_star)}
            for ls, b, f in zip(log_s, base, bump)
        ],
        "pdf_knots": pdf.to_json(),
        "pdf_uniform_fallback": pdf.uniform_fallback,
        "params": {
            "a": params.a,
            "w_star": params.w_star,
            "sigma_star": params.sigma_star,
            "mu": params.mu,
            "varsigma": params.varsigma,
            "threshold_frac": threshold_frac,
            "decay": decay,
            "gap_floor": gap_floor,
        },
    }
