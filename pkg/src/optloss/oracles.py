"""Reference optimal losses for distributions where J* is computable without sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

from optloss.core import Dataset
from optloss.errors import DomainError, UnsupportedError
from optloss.kernels import log_weights

__all__ = ["GaussianOracle", "gaussian_jstar", "finite_mixture_jstar", "empirical_jstar"]


@dataclass(frozen=True)
class GaussianOracle:
    """x0 ~ N(mean, scale^2 I) in ``dim`` dimensions."""

    mean: tuple[float, ...] | float = 0.0
    scale: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")
        if self.dim < 1:
            raise DomainError("dim must be positive")

    @property
    def variance(self) -> float:
        return self.dim * self.scale**2


def gaussian_jstar(oracle: GaussianOracle, alpha: float, sigma: float) -> float:
    """Total posterior variance d * s^2 sigma^2 / (alpha^2 s^2 + sigma^2)."""
    if sigma < 0 or not alpha > 0:
        raise DomainError("need sigma >= 0 and alpha > 0")
    if sigma == 0:
        return 0.0
    s2 = oracle.scale**2
    return oracle.dim * s2 * sigma**2 / (alpha**2 * s2 + sigma**2)


@lru_cache(maxsize=32)
def _tensor_nodes(n: int, d: int, prune: float):
    z, w = roots_hermite(n)
    z = z * math.sqrt(2.0)
    w = w / math.sqrt(math.pi)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for wg in np.meshgrid(*([w] * d), indexing="ij"):
        weights = weights * wg.ravel()
    keep = weights > prune * weights.max()
    return nodes[keep], weights[keep]


def finite_mixture_jstar(points, probs, alpha: float, sigma: float,
                         quadrature_nodes: int = 128, prune: float = 1e-20) -> float:
    """J* for a discrete p_data by tensorized Gauss-Hermite quadrature over the noise.

    The integrand is the conditional variance of x0 given x_t with exact
    kernel weights, so the sum is A - B accumulated node by node. Supports
    d <= 2.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(probs, dtype=float)
    k, d = pts.shape
    if d > 2:
        raise UnsupportedError("quadrature oracle supports d <= 2 only")
    if p.shape != (k,) or (p < 0).any() or abs(math.fsum(p) - 1.0) > 1e-12:
        raise DomainError("probs must be a nonnegative vector summing to 1")
    if quadrature_nodes < 32:
        raise DomainError("need at least 32 quadrature nodes")
    if sigma < 0 or not alpha > 0:
        raise DomainError("need sigma >= 0 and alpha > 0")
    if sigma == 0 or k == 1:
        return 0.0
    nodes, weights = _tensor_nodes(int(quadrature_nodes), d, prune)
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
    sq_norms = np.einsum("kd,kd->k", pts, pts)
    total = []
    for j in range(k):
        if p[j] == 0:
            continue
        xt = alpha * pts[j] + sigma * nodes
        logits = log_weights(xt, pts, alpha, sigma) + log_p
        logits -= logits.max(axis=1, keepdims=True)
        post = np.exp(logits)
        post /= post.sum(axis=1, keepdims=True)
        mean = post @ pts
        cond_var = np.maximum(post @ sq_norms - np.einsum("nd,nd->n", mean, mean), 0.0)
        total.append(p[j] * math.fsum(weights * cond_var))
    return math.fsum(total)


def empirical_jstar(ds: Dataset, alpha: float, sigma: float, quadrature_nodes: int = 128) -> float:
    """Exact J* of a small low-dimensional dataset viewed as an equal-weight mixture."""
    n = ds.n_samples
    return finite_mixture_jstar(ds.x, np.full(n, 1.0 / n), alpha, sigma, quadrature_nodes)
