"""Log-space Gaussian posterior kernel and the posterior mean E[x0 | x_t].

All weights are formed as exp(logit - max logit), so at least one
unnormalized weight is exactly 1 and the normalizer never underflows.
"""

from __future__ import annotations

import math

import numpy as np

from optloss.errors import DomainError

__all__ = ["log_kernel", "posterior_mean", "posterior_means", "log_weights"]


def _check_scales(alpha, sigma):
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha!r}")


def log_kernel(xt, x0, alpha: float, sigma: float) -> float:
    """-||xt - alpha*x0||^2 / (2 sigma^2)."""
    _check_scales(alpha, sigma)
    r = np.asarray(xt, dtype=float) - alpha * np.asarray(x0, dtype=float)
    return -float(np.dot(r.ravel(), r.ravel())) / (2.0 * sigma * sigma)


def log_weights(xt, candidates, alpha, sigma, self_index=None, log_c=0.0):
    """Unnormalized log posterior weights, shape ``(..., M, L)``.

    The ||xt||^2 term is dropped since it is constant along the candidate
    axis. ``self_index`` (shape ``(..., M)``) marks the candidate each query
    was built from; its logit is shifted by ``-log_c``.
    """
    xt = np.asarray(xt, dtype=float)
    cand = np.asarray(candidates, dtype=float)
    cross = np.matmul(xt, np.swapaxes(cand, -1, -2))
    sq = np.einsum("...ld,...ld->...l", cand, cand)
    logits = (alpha * cross - 0.5 * alpha * alpha * sq[..., None, :]) / (sigma * sigma)
    if self_index is not None and log_c != 0.0:
        idx = np.asarray(self_index)[..., None]
        picked = np.take_along_axis(logits, idx, axis=-1)
        np.put_along_axis(logits, idx, picked - log_c, axis=-1)
    return logits


def posterior_means(xt, candidates, alpha, sigma, self_index=None, correction=1.0):
    """Batched posterior means.

    Parameters
    ----------
    xt : array, shape (..., M, d)
    candidates : array, shape (..., L, d)
        Leading batch dimensions broadcast against ``xt``.
    self_index : int array, shape (..., M), optional
        Position of each query's source in ``candidates``.
    correction : float
        Down-weight C >= 1 for the source candidate; ``inf`` removes it.

    Returns
    -------
    array, shape (..., M, d)
    """
    _check_scales(alpha, sigma)
    cand = np.asarray(candidates, dtype=float)
    if cand.shape[-2] == 0:
        raise DomainError("empty candidate set")
    log_c = math.inf if correction == math.inf else math.log(correction)
    logits = log_weights(xt, cand, alpha, sigma, self_index, log_c)
    top = logits.max(axis=-1, keepdims=True)
    if not np.isfinite(top).all():
        raise DomainError("no candidate carries positive weight")
    w = np.exp(logits - top)
    w /= w.sum(axis=-1, keepdims=True)
    return np.matmul(w, cand)


def posterior_mean(xt, candidates, alpha: float, sigma: float, correction=None):
    """Posterior mean of x0 given one noisy sample ``xt``.

    ``correction`` is an optional ``(index, C)`` pair using 1-based ``index``
    into ``candidates``; that candidate's weight is multiplied by 1/C.
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    if np.asarray(candidates).size == 0:
        raise DomainError("empty candidate set")
    xt = np.asarray(xt, dtype=float).reshape(1, -1)
    if correction is None:
        return posterior_means(xt, cand, alpha, sigma)[0]
    index, c = correction
    if not 1 <= index <= cand.shape[0]:
        raise DomainError(f"correction index {index} outside 1..{cand.shape[0]}")
    if not c >= 1:
        raise DomainError(f"correction C must be >= 1, got {c!r}")
    return posterior_means(xt, cand, alpha, sigma, np.array([index - 1]), c)[0]
