"""Special functions and bracketed scalar root finding.

The gamma-family functions and the regularized incomplete beta are thin
wrappers over :mod:`scipy.special`; the F quantile is obtained by inverting
the incomplete beta with our own bracketed solver so that the whole chain is
checkable against simple oracles.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import optimize, special


class RootFindingError(RuntimeError):
    """Raised when no root can be bracketed or the solver does not converge."""


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    tol: float = 1e-12
    max_iter: int = 200
    # geometric expansion: width doubles at most this many times
    max_expand: int = 60

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if not self.tol > 0:
            raise ValueError("bracket tol must be positive")
        if self.max_iter < 1:
            raise ValueError("bracket max_iter must be positive")


def _check_positive(x, name="x"):
    if not x > 0:
        raise ValueError(f"{name} must be positive, got {x!r}")


def log_gamma(x):
    """log Gamma(x) for x > 0."""
    _check_positive(x)
    return float(special.gammaln(x))


def digamma(x):
    """Digamma (psi) function for x > 0."""
    _check_positive(x)
    return float(special.psi(x))


def f_cdf(q, d1, d2):
    if q <= 0:
        return 0.0
    return float(special.betainc(d1 / 2.0, d2 / 2.0, d1 * q / (d1 * q + d2)))


def f_quantile(alpha, d1, d2):
    """alpha-quantile of the F(d1, d2) distribution.

    The CDF is I_z(d1/2, d2/2) with z = d1 q / (d1 q + d2), so we solve for
    z on (0, 1) and map back.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0,1), got {alpha!r}")
    _check_positive(d1, "d1")
    _check_positive(d2, "d2")
    a, b = d1 / 2.0, d2 / 2.0

    def g(z):
        return special.betainc(a, b, z) - alpha

    z = solve_root(g, Bracket(0.0, 1.0, tol=1e-15, max_iter=500))
    if z >= 1.0:
        return math.inf
    return d2 * z / (d1 * (1.0 - z))


def solve_root(f, bracket):
    """Find a sign change of ``f`` with Brent's method.

    If ``f(lo)`` and ``f(hi)`` have the same sign, the bracket is widened
    about its midpoint, doubling its width each time, up to
    ``bracket.max_expand`` times.
    """
    lo, hi = float(bracket.lo), float(bracket.hi)
    flo, fhi = f(lo), f(hi)
    n_expand = 0
    while flo * fhi > 0:
        if n_expand >= bracket.max_expand:
            raise RootFindingError(
                f"no sign change found after {n_expand} bracket expansions "
                f"(last bracket [{lo:.6g}, {hi:.6g}])"
            )
        width = hi - lo
        lo, hi = lo - width / 2.0, hi + width / 2.0
        flo, fhi = f(lo), f(hi)
        n_expand += 1
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    try:
        return optimize.brentq(f, lo, hi, xtol=bracket.tol, rtol=4 * np.finfo(float).eps,
                               maxiter=bracket.max_iter)
    except RuntimeError as exc:
        raise RootFindingError(str(exc)) from exc
