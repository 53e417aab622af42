"""Poisson bilinear Lee-Carter model fitted by Goodman-style cyclic Newton updates.

``D[x,t] ~ Poisson(N[x,t] exp(a_x + b_x k_t))``. Each cycle performs one
damped Newton step for every ``a_x``, then every ``k_t``, then every
``b_x``; within a block the coordinates decouple, so each step is guarded by
per-coordinate step halving and the log-likelihood never decreases.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from .data import log_rates
from .gaussian import LeeCarterFit, fit_svd

ETA_CLIP = 700.0


class ConvergenceError(RuntimeError):
    """``last_fit`` holds the final iterate when the cycle limit was hit."""

    def __init__(self, msg, last_fit=None):
        super().__init__(msg)
        self.last_fit = last_fit


@dataclass(frozen=True)
class GlmConfig:
    max_iter: int = 10000
    tol: float = 1e-10
    step_damping: float = 1.0
    # max |score| (in deaths) also required at convergence; None disables
    score_tol: float | None = 1e-8
    init: str = "svd"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.step_damping <= 1:
            raise ValueError("step_damping must be in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.init not in ("svd", "zeros"):
            raise ValueError("init must be 'svd' or 'zeros'")


def _eta(a, b, k):
    eta = a[:, None] + np.outer(b, k)
    clipped = np.abs(eta) > ETA_CLIP
    if clipped.any():
        eta = np.clip(eta, -ETA_CLIP, ETA_CLIP)
    return eta, bool(clipped.any())


def _cells(D, N, eta):
    return D * eta - N * np.exp(eta)


def poisson_loglik(fit, ds):
    """``sum D (a + b k) - N exp(a + b k)``; constant terms dropped."""
    if fit.a.shape != (ds.shape[0],) or fit.k.shape != (ds.shape[1],):
        raise ValueError("fit dimensions do not match the dataset")
    eta, clipped = _eta(fit.a, fit.b, fit.k)
    if clipped:
        warnings.warn("linear predictor clipped to [-700, 700]", RuntimeWarning, stacklevel=2)
    return float(_cells(ds.deaths, ds.exposures, eta).sum())


def score_residuals(fit, ds):
    """Gradients of the log-likelihood with respect to ``a``, ``k`` and ``b``."""
    eta, _ = _eta(fit.a, fit.b, fit.k)
    resid = ds.deaths - ds.exposures * np.exp(eta)
    return {
        "a": resid.sum(axis=1),
        "k": fit.b @ resid,
        "b": resid @ fit.k,
    }


def _guarded_step(value, step, contrib, axis, max_halvings=40):
    """Apply ``value + step`` coordinatewise, halving wherever the
    coordinate's log-likelihood contribution would drop.

    Drops smaller than the rounding noise of the contribution are ignored;
    otherwise Newton steps near the optimum get halved to nothing.
    """
    cells = contrib(value)
    base = cells.sum(axis=axis)
    slack = 64 * np.finfo(float).eps * np.abs(cells).sum(axis=axis)
    trial = value + step
    for _ in range(max_halvings):
        worse = contrib(trial).sum(axis=axis) < base - slack
        if not worse.any():
            return trial
        step = np.where(worse, step / 2.0, step)
        trial = value + step
    return np.where(contrib(trial).sum(axis=axis) < base - slack, value, trial)


def _initial(ds, cfg):
    p, n = ds.shape
    if cfg.init == "zeros":
        return np.zeros(p), np.full(p, 1.0 / p), np.zeros(n)
    f = fit_svd(log_rates(ds))
    return f.a.copy(), f.b.copy(), f.k.copy()


def fit_poisson_glm(ds, cfg=None, init=None):
    """Maximum-likelihood Poisson Lee-Carter fit.

    Parameters
    ----------
    ds : MortalityDataset
    cfg : GlmConfig, optional
    init : LeeCarterFit, optional
        Warm start; overrides ``cfg.init``.

    Returns
    -------
    LeeCarterFit
        ``b`` sums to one and ``k`` to zero.
    """
    cfg = cfg or GlmConfig()
    D, N = ds.deaths, ds.exposures
    empty_years = ds.years[D.sum(axis=0) <= 0]
    if empty_years.size:
        raise ConvergenceError(f"k unbounded: zero deaths in years {empty_years.tolist()}")
    empty_ages = ds.ages[D.sum(axis=1) <= 0]
    if empty_ages.size:
        raise ConvergenceError(f"a unbounded: zero deaths at ages {empty_ages.tolist()}")
    if init is not None:
        a, b, k = init.a.copy(), init.b.copy(), init.k.copy()
    else:
        a, b, k = _initial(ds, cfg)
    damp = cfg.step_damping

    ll = float(_cells(D, N, _eta(a, b, k)[0]).sum())
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # a block
        fitted = N * np.exp(_eta(a, b, k)[0])
        step = damp * (D - fitted).sum(axis=1) / fitted.sum(axis=1)
        a = _guarded_step(a, step, lambda v: _cells(D, N, _eta(v, b, k)[0]), axis=1)
        # k block
        fitted = N * np.exp(_eta(a, b, k)[0])
        hess = (fitted * (b * b)[:, None]).sum(axis=0)
        step = np.divide(damp * (b @ (D - fitted)), hess, out=np.zeros_like(k), where=hess > 0)
        k = _guarded_step(k, step, lambda v: _cells(D, N, _eta(a, b, v)[0]), axis=0)
        # b block
        fitted = N * np.exp(_eta(a, b, k)[0])
        hess = fitted @ (k * k)
        step = np.divide(damp * ((D - fitted) @ k), hess, out=np.zeros_like(b), where=hess > 0)
        b = _guarded_step(b, step, lambda v: _cells(D, N, _eta(a, v, k)[0]), axis=1)
        # re-identify: sum(b) = 1, mean(k) = 0, with a absorbing the shift
        kbar = k.mean()
        a = a + b * kbar
        k = k - kbar
        s = b.sum()
        if s != 0:
            b, k = b / s, k * s

        eta, _ = _eta(a, b, k)
        ll_new = float(_cells(D, N, eta).sum())
        small_change = abs(ll_new - ll) <= cfg.tol * abs(ll)
        ll = ll_new
        if small_change:
            if cfg.score_tol is None:
                converged = True
                break
            resid = D - N * np.exp(eta)
            worst = max(np.abs(resid.sum(axis=1)).max(), np.abs(b @ resid).max(),
                        np.abs(resid @ k).max())
            if worst <= cfg.score_tol:
                converged = True
                break
    if not converged:
        raise ConvergenceError(f"Poisson GLM did not converge in {cfg.max_iter} cycles",
                               LeeCarterFit(a, b, k, "poisson_glm", loglik=ll, iterations=it))
    if abs(b.sum()) <= 1e-14:
        raise ConvergenceError("fitted b sums to zero")
    return LeeCarterFit(a, b, k, "poisson_glm", loglik=ll, iterations=it)


def deviance_residuals(fit, ds):
    """Signed Poisson deviance residuals; a cell with ``D = 0`` contributes ``2 D_hat``."""
    eta, _ = _eta(fit.a, fit.b, fit.k)
    dhat = ds.exposures * np.exp(eta)
    return signed_deviance(ds.deaths, dhat)


def signed_deviance(d, dhat):
    d = np.asarray(d, dtype=float)
    dhat = np.asarray(dhat, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(d > 0, d * np.log(d / dhat), 0.0)
    dev = np.maximum(2.0 * (term - (d - dhat)), 0.0)
    return np.sign(d - dhat) * np.sqrt(dev)
