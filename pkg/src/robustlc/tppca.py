"""Multivariate t-PPCA Lee-Carter estimation by ECM.

Model: ``y_t ~ t_nu(a, b b' + sigma2 I)`` i.i.d. over years, written as the
hierarchy

    y | k, u ~ N(a + b k, sigma2 I / u),   k | u ~ N(0, 1/u),   u ~ Ga(nu/2, nu/2).

Every use of the scale matrix goes through its rank-one structure:
``|S| = sigma2^(p-1) (sigma2 + b'b)`` and
``S^-1 = (I - b b' / (sigma2 + b'b)) / sigma2``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special

from .gaussian import fit_ppca_closed_form
from .numerics import Bracket, solve_root

SIGMA2_FLOOR = 1e-12
NU_LOWER = 0.5
NU_UPPER = 1e6


@dataclass(frozen=True, eq=False)
class TPPCAParams:
    a: np.ndarray
    b: np.ndarray
    sigma2: float
    nu: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu!r}")
        if np.shape(self.a) != np.shape(self.b) or np.ndim(self.a) != 1:
            raise ValueError("a and b must be vectors of equal length")

    @property
    def p(self):
        return len(self.a)

    def scale_matrix(self):
        return np.outer(self.b, self.b) + self.sigma2 * np.eye(self.p)

    def log_det_scale(self):
        s2 = self.sigma2
        return (self.p - 1) * math.log(s2) + math.log(s2 + self.b @ self.b)


@dataclass(frozen=True, eq=False)
class PosteriorExpectations:
    u: np.ndarray
    log_u: np.ndarray
    k: np.ndarray
    uk: np.ndarray
    uk2: np.ndarray


@dataclass
class EmTrace:
    loglik_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    nu_at_bound: bool = False


@dataclass(frozen=True)
class TPPCAConfig:
    tol: float = 1e-10
    max_iter: int = 5000
    nu_init: float = 3.0
    # ``False`` keeps nu at nu_init throughout
    estimate_nu: bool = True
    nu_bounds: tuple = (NU_LOWER, NU_UPPER)
    # monotone SQUAREM extrapolation of the ECM map
    accelerate: bool = True

    def __post_init__(self):
        if not self.nu_init > 0:
            raise ValueError("invalid nu_init: must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


def mahalanobis_sq(params, y):
    """Squared Mahalanobis distances ``(y_t - a)' S^-1 (y_t - a)`` for every column."""
    r = np.asarray(y, dtype=float) - params.a[:, None]
    b, s2 = params.b, params.sigma2
    proj = b @ r
    delta = ((r * r).sum(axis=0) - proj * proj / (s2 + b @ b)) / s2
    return np.maximum(delta, 0.0)


def t_loglik_terms(params, y):
    p = params.p
    nu = params.nu
    delta = mahalanobis_sq(params, y)
    const = (special.gammaln((nu + p) / 2.0) - special.gammaln(nu / 2.0)
             - 0.5 * p * math.log(nu * math.pi) - 0.5 * params.log_det_scale())
    return const - 0.5 * (nu + p) * np.log1p(delta / nu)


def t_loglik(params, y):
    """Marginal log-likelihood of the columns of ``y`` under the t-PPCA model."""
    return float(t_loglik_terms(params, y).sum())


def e_step(params, y):
    p = params.p
    nu, b, s2 = params.nu, params.b, params.sigma2
    r = np.asarray(y, dtype=float) - params.a[:, None]
    delta = mahalanobis_sq(params, y)
    u = (nu + p) / (nu + delta)
    log_u = special.psi((nu + p) / 2.0) - np.log((nu + delta) / 2.0)
    m = b @ b + s2
    k = (b @ r) / m
    uk = u * k
    uk2 = s2 / m + u * k * k
    return PosteriorExpectations(u, log_u, k, uk, uk2)


def m_step(exp, y, prev):
    """Conditional maximization of the expected complete log-likelihood.

    ``a`` is updated with the previous ``b``, then ``b`` with the new ``a``,
    then ``sigma2`` with both; ``nu`` is carried over unchanged.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[1]
    if exp.u.shape != (n,):
        raise ValueError("expectations do not match the number of years")
    p = y.shape[0]
    a = (y @ exp.u - prev.b * exp.uk.sum()) / exp.u.sum()
    r = y - a[:, None]
    denom = exp.uk2.sum()
    if denom <= 0:
        raise ZeroDivisionError("sum of <u k^2> is zero; all observations sit at the center")
    b = r @ exp.uk / denom
    sigma2 = ((exp.u * (r * r).sum(axis=0)).sum()
              - 2.0 * (exp.uk * (b @ r)).sum()
              + (b @ b) * denom) / (n * p)
    return TPPCAParams(a, b, max(sigma2, SIGMA2_FLOOR), prev.nu)


def nu_equation(nu, c):
    """Left-hand side of the degrees-of-freedom score equation; decreasing in nu."""
    return 1.0 + math.log(nu / 2.0) - special.psi(nu / 2.0) + c


def update_nu(exp, bracket=None):
    """Solve the nu score equation on ``bracket`` (default ``[0.5, 1e6]``).

    The left-hand side decreases from +inf to ``1 + c`` with
    ``c = mean(<log u> - <u>)``; when the sign change lies outside the
    bracket the nearer bound is returned. The search runs on ``log(nu)``,
    with ``bracket.tol`` read as a relative tolerance on nu.
    """
    if bracket is None:
        bracket = Bracket(NU_LOWER, NU_UPPER, tol=1e-12)
    c = float(np.mean(exp.log_u - exp.u))
    if nu_equation(bracket.lo, c) <= 0:
        return bracket.lo
    if nu_equation(bracket.hi, c) >= 0:
        return bracket.hi
    log_bracket = Bracket(math.log(bracket.lo), math.log(bracket.hi),
                          tol=bracket.tol, max_iter=bracket.max_iter, max_expand=0)
    return math.exp(solve_root(lambda s: nu_equation(math.exp(s), c), log_bracket))


def initial_params(y, nu_init=3.0):
    g = fit_ppca_closed_form(y)
    return TPPCAParams(g.a, g.b_unnormalized, max(g.sigma2, SIGMA2_FLOOR), float(nu_init))


def ecm_update(params, y, config, bracket):
    """One full ECM cycle: E-step, conditional M-steps for (a, b, sigma2), then nu."""
    exp = e_step(params, y)
    new = m_step(exp, y, params)
    nu = update_nu(exp, bracket) if config.estimate_nu else params.nu
    return TPPCAParams(new.a, new.b, new.sigma2, nu)


def _pack(params):
    return np.concatenate([params.a, params.b, [math.log(params.sigma2), math.log(params.nu)]])


def _unpack(v, p, nu_bounds, nu_fixed=None):
    lo, hi = nu_bounds
    nu = nu_fixed if nu_fixed is not None else min(max(math.exp(v[-1]), lo), hi)
    return TPPCAParams(v[:p], v[p:2 * p], max(math.exp(v[-2]), SIGMA2_FLOOR), nu)


def _squarem_cycle(params, ll, y, config, bracket):
    """Two ECM steps plus a squared extrapolation (SqS3 step length).

    The extrapolated point is followed by one more ECM step and kept only if
    it beats the plain two-step result, so the sequence stays monotone.
    Returns ``(params, loglik, n_ecm_steps)``.
    """
    p1 = ecm_update(params, y, config, bracket)
    p2 = ecm_update(p1, y, config, bracket)
    ll2 = t_loglik(p2, y)
    t0, t1, t2 = _pack(params), _pack(p1), _pack(p2)
    r = t1 - t0
    v = t2 - t1 - r
    nv = np.linalg.norm(v)
    if nv == 0:
        return p2, ll2, 2
    alpha = min(-np.linalg.norm(r) / nv, -1.0)
    if alpha == -1.0:
        return p2, ll2, 2
    with np.errstate(over="ignore", invalid="ignore"):
        jump = t0 - 2.0 * alpha * r + alpha * alpha * v
    if not np.all(np.isfinite(jump)):
        return p2, ll2, 2
    try:
        nu_fixed = None if config.estimate_nu else params.nu
        q = ecm_update(_unpack(jump, params.p, config.nu_bounds, nu_fixed), y, config, bracket)
        llq = t_loglik(q, y)
    except (ValueError, ZeroDivisionError, FloatingPointError):
        return p2, ll2, 3
    if np.isfinite(llq) and llq >= ll2:
        return q, llq, 3
    return p2, ll2, 3


def fit_tppca(y, config=None, init=None):
    """Fit the t-PPCA model by ECM.

    Starts from the Gaussian PPCA closed form with ``nu = config.nu_init``
    unless ``init`` is given. Stops when the relative change of the marginal
    log-likelihood between recorded iterates drops below ``config.tol``.
    With ``config.accelerate`` the ECM map is wrapped in a monotone SQUAREM
    scheme; ``max_iter`` always bounds the number of ECM cycles evaluated.
    ``b`` is returned unnormalized.

    Returns
    -------
    params : TPPCAParams
    trace : EmTrace
    """
    config = config or TPPCAConfig()
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] < 2 or y.shape[0] < 2:
        raise ValueError("t-PPCA needs at least 2 ages and 2 years")
    params = init if init is not None else initial_params(y, config.nu_init)
    lo, hi = config.nu_bounds
    bracket = Bracket(lo, hi, tol=1e-12)
    ll = t_loglik(params, y)
    trace = EmTrace([ll])
    if math.isinf(config.tol):
        trace.converged = True
        return params, trace
    steps = 0
    while steps < config.max_iter:
        if config.accelerate and config.max_iter - steps >= 3:
            new, ll_new, used = _squarem_cycle(params, ll, y, config, bracket)
        else:
            new = ecm_update(params, y, config, bracket)
            ll_new, used = t_loglik(new, y), 1
        steps += used
        trace.loglik_history.append(ll_new)
        params = new
        if abs(ll_new - ll) <= config.tol * abs(ll):
            trace.converged = True
            break
        ll = ll_new
    trace.iterations = steps
    trace.nu_at_bound = config.estimate_nu and params.nu in (lo, hi)
    return params, trace
