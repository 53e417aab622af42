"""Closed-form Lee-Carter estimators: SVD and Gaussian PPCA (latent dimension 1).

Conventions shared by every estimator in the package:

* log-rate matrices are ``y[age, year]``; column ``y[:, t]`` is one
  observation vector of length ``p`` (number of ages);
* ``b`` is normalized to sum to one and ``k`` carries the compensating scale;
* the sign of the leading eigenvector is chosen so that its entries sum to a
  positive number (mortality sensitivities are positive in practice).
"""

from dataclasses import dataclass
import warnings

import numpy as np

METHODS = ("svd", "ppca", "poisson_glm", "tppca")


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LeeCarterFit:
    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    method: str
    sigma2: float | None = None
    nu: float | None = None
    loglik: float | None = None
    iterations: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if np.shape(self.a) != np.shape(self.b):
            raise ValueError("a and b must have one entry per age")

    def fitted_log_rates(self):
        return self.a[:, None] + np.outer(self.b, self.k)

    def with_k(self, k):
        return LeeCarterFit(self.a, self.b, np.asarray(k, dtype=float), self.method,
                            self.sigma2, self.nu, self.loglik, self.iterations)


@dataclass(frozen=True, eq=False)
class GaussianPPCAFit:
    a: np.ndarray
    b_unnormalized: np.ndarray
    sigma2: float
    eigenvalues: np.ndarray


def _oriented(u):
    """Flip ``u`` so that ``sum(u) > 0``; ties go to the largest-magnitude entry."""
    s = u.sum()
    if abs(s) <= 1e-14:
        s = u[np.argmax(np.abs(u))]
    return -u if s < 0 else u


def normalize(b_raw, k_raw):
    """Rescale so that ``sum(b) == 1`` and center ``k``.

    Returns ``(b, k, shift)``; ``shift`` is the mean removed from the rescaled
    ``k`` and is folded into ``a`` by the caller (``a + b * shift``) so that
    ``a + b k`` is unchanged.
    """
    b_raw = np.asarray(b_raw, dtype=float)
    k_raw = np.asarray(k_raw, dtype=float)
    s = b_raw.sum()
    if s == 0 or abs(s) <= 1e-14 * np.abs(b_raw).sum():
        raise DegenerateDataError("cannot normalize b: entries sum to zero")
    b = b_raw / s
    k = k_raw * s
    shift = k.mean()
    return b, k - shift, shift


def _check_matrix(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise ValueError("log-rate input must be a 2-D [age, year] matrix")
    if y.shape[1] < 2 or y.shape[0] < 2:
        raise DegenerateDataError("need at least 2 ages and 2 years")
    if not np.all(np.isfinite(y)):
        raise ValueError("log-rate matrix contains non-finite values")
    return y


def fit_svd(y):
    """Classical Lee-Carter fit by the leading singular vector.

    ``a`` is the row mean, ``b = u / sum(u)`` and ``k_t = sum(u) * u'(y_t - a)``,
    so ``k`` sums to zero up to rounding. ``k`` here is the principal score,
    not the death-matched index.
    """
    y = _check_matrix(y)
    a = y.mean(axis=1)
    z = y - a[:, None]
    u, s, _ = np.linalg.svd(z, full_matrices=False)
    p, n = y.shape
    if s[0] <= 1e-13 * max(1.0, np.abs(y).max()) * np.sqrt(p * n):
        warnings.warn("log rates are constant over time; k set to 0 and b uniform",
                      RuntimeWarning, stacklevel=2)
        return LeeCarterFit(a, np.full(p, 1.0 / p), np.zeros(n), "svd")
    u1 = _oriented(u[:, 0])
    scale = u1.sum()
    if abs(scale) <= 1e-14:
        raise DegenerateDataError("leading singular vector sums to zero; b cannot be normalized")
    b = u1 / scale
    k = scale * (u1 @ z)
    return LeeCarterFit(a, b, k, "svd")


def fit_ppca_closed_form(y):
    """Maximum-likelihood Gaussian PPCA with one latent factor.

    The spectrum is that of ``S = (1/n) sum_t (y_t - ybar)(y_t - ybar)'``.
    Round-off negative eigenvalues are clipped to zero.
    """
    y = _check_matrix(y)
    a = y.mean(axis=1)
    z = y - a[:, None]
    n = y.shape[1]
    cov = z @ z.T / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    u1 = _oriented(evecs[:, order[0]])
    sigma2 = float(evals[1:].mean())
    gap = evals[0] - sigma2
    if gap < -1e-12 * max(evals[0], 1.0):
        raise DegenerateDataError("leading eigenvalue below residual variance")
    b = u1 * np.sqrt(max(gap, 0.0))
    return GaussianPPCAFit(a, b, sigma2, evals)


def ppca_as_lee_carter(fit, y):
    """Normalized Lee-Carter view of a PPCA fit, with ``k`` the projected scores."""
    y = np.asarray(y, dtype=float)
    b0 = fit.b_unnormalized
    if not np.any(b0):
        p, n = y.shape
        return LeeCarterFit(fit.a, np.full(p, 1.0 / p), np.zeros(n), "ppca",
                            sigma2=fit.sigma2)
    scores = b0 @ (y - fit.a[:, None]) / (b0 @ b0)
    b, k, shift = normalize(b0, scores)
    return LeeCarterFit(fit.a + b * shift, b, k, "ppca", sigma2=fit.sigma2)
