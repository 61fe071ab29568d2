"""Special functions and closed-form expectations under the variational families.

Every coordinate update and the ELBO reduce to digamma and log-gamma
evaluations of variational parameters. The functions here accept scalars or
numpy arrays, check the domain once, and return a float for scalar input.
"""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import gammaln, psi

from .errors import DomainError

ArrayLike = Union[float, np.ndarray]

LOG_2PI = math.log(2.0 * math.pi)


def _check_positive(x: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        raise DomainError(f"'{name}' must not be empty")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"'{name}' must be finite, got {x!r}")
    if np.any(arr <= 0):
        raise DomainError(f"'{name}' must be strictly positive, got {x!r}")
    return arr


def _as_output(arr: np.ndarray) -> ArrayLike:
    return float(arr) if arr.ndim == 0 else arr


def digamma(x: ArrayLike) -> ArrayLike:
    """Digamma function psi(x) for x > 0.

    Args:
        x: Positive scalar or array.

    Returns:
        psi(x), same shape as the input.

    Raises:
        DomainError: if any entry is non-positive or non-finite.
    """
    return _as_output(psi(_check_positive(x, 'x')))


def log_gamma(x: ArrayLike) -> ArrayLike:
    """Natural log of the gamma function for x > 0."""
    return _as_output(gammaln(_check_positive(x, 'x')))


def dirichlet_expected_log(t: np.ndarray) -> np.ndarray:
    """E[log tau_s] under tau ~ Dir(t).

    Args:
        t: Positive concentration vector.

    Returns:
        Vector with entry s equal to psi(t_s) - psi(sum(t)).
    """
    arr = _check_positive(t, 't')
    if arr.ndim != 1:
        raise DomainError(f"'t' must be a vector, got shape {arr.shape}")
    return psi(arr) - psi(arr.sum())


def beta_expected_logs(e: ArrayLike, f: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """E[log w] and E[log(1 - w)] under w ~ Beta(e, f).

    Works elementwise on matching arrays, as used for the stick-breaking and
    Bernoulli-probability factors.
    """
    e_arr = _check_positive(e, 'e')
    f_arr = _check_positive(f, 'f')
    total = psi(e_arr + f_arr)
    return _as_output(psi(e_arr) - total), _as_output(psi(f_arr) - total)


@dataclass(frozen=True)
class NigExpectations:
    """Moments of a Normal-Inverse-Gamma factor.

    The factor is sigma^2 ~ IG(g/2, h/2), mu | sigma^2 ~ N(u, sigma^2 / r).
    Fields are scalars or arrays sharing the parameter shape.
    """

    e_inv_var: ArrayLike
    e_mean_over_var: ArrayLike
    e_meansq_over_var: ArrayLike
    e_log_var: ArrayLike


def nig_expectations(u: ArrayLike, r: ArrayLike, g: ArrayLike, h: ArrayLike) -> NigExpectations:
    """Closed-form moments of the NIG factor with parameters (u, r, g, h).

    Raises:
        DomainError: if r, g or h is non-positive.
    """
    r_arr = _check_positive(r, 'r')
    g_arr = _check_positive(g, 'g')
    h_arr = _check_positive(h, 'h')
    u_arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u_arr)):
        raise DomainError(f"'u' must be finite, got {u!r}")
    inv_var = g_arr / h_arr
    return NigExpectations(
        e_inv_var=_as_output(inv_var),
        e_mean_over_var=_as_output(u_arr * inv_var),
        e_meansq_over_var=_as_output(u_arr ** 2 * inv_var + 1.0 / r_arr),
        e_log_var=_as_output(np.log(h_arr / 2.0) - psi(g_arr / 2.0)),
    )


@dataclass(frozen=True)
class EdgeLogDensity:
    """Expected log-density of one edge weight as a quadratic in the weight.

    E_q[log f(a)] = c0 + c1 * a + c2 * a^2. Both likelihood families reduce to
    this form (c2 = 0 for Bernoulli), so a block of edges only needs its
    count, sum and sum of squares.
    """

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    def block(self, count: ArrayLike, total: ArrayLike, total_sq: ArrayLike) -> ArrayLike:
        """Sum of the expected log-density over a block with the given statistics."""
        return self.c0 * count + self.c1 * total + self.c2 * total_sq


def normal_edge_density(moments: NigExpectations) -> EdgeLogDensity:
    """Edge log-density coefficients for a Normal edge under a NIG factor."""
    return EdgeLogDensity(
        c0=-0.5 * (LOG_2PI + np.asarray(moments.e_log_var) + np.asarray(moments.e_meansq_over_var)),
        c1=np.asarray(moments.e_mean_over_var, dtype=float),
        c2=-0.5 * np.asarray(moments.e_inv_var, dtype=float),
    )


def fixed_normal_edge_density(mean: float, var: float) -> EdgeLogDensity:
    """Edge log-density coefficients for a Normal edge with known mean and variance."""
    if not var > 0:
        raise DomainError(f"noise variance must be positive, got {var}")
    return EdgeLogDensity(
        c0=np.asarray(-0.5 * (LOG_2PI + math.log(var) + mean * mean / var)),
        c1=np.asarray(mean / var),
        c2=np.asarray(-0.5 / var),
    )


def bernoulli_edge_density(e_log_p: ArrayLike, e_log_1mp: ArrayLike) -> EdgeLogDensity:
    """Edge log-density coefficients for a binary edge with success probability rho."""
    e_log_p = np.asarray(e_log_p, dtype=float)
    e_log_1mp = np.asarray(e_log_1mp, dtype=float)
    return EdgeLogDensity(c0=e_log_1mp, c1=e_log_p - e_log_1mp, c2=np.zeros_like(e_log_p))


def fixed_bernoulli_edge_density(prob: float) -> EdgeLogDensity:
    """Edge log-density coefficients for a binary edge with known probability."""
    if not 0.0 < prob < 1.0:
        raise DomainError(f"noise probability must lie in (0, 1), got {prob}")
    return bernoulli_edge_density(math.log(prob), math.log1p(-prob))
