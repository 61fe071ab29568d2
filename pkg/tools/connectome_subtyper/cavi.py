"""Coordinate-ascent variational inference for network-variate subtyping.

Each ``update_*`` function replaces one factor of a VariationalState by the
exact maximizer of the ELBO over that factor's family, holding every other
factor fixed. ``fit`` cycles them in schedule order:

    sticks -> informative params -> noise params -> selection -> clusters
    -> node-allocation probabilities -> node memberships

and refreshes the block statistics after the node updates, the only step
that changes them. The selection update is skipped during the warm-up
sweeps of a restart.

Two families are available for the selection indicators (``selection_mode``).
``mean_field`` keeps q(gamma) independent of the component parameters, so
theta1 sees each pair's edges weighted by q(gamma) and theta0 by
1 - q(gamma). ``conditional`` (the default) sets q(theta1 | gamma=0) and
q(theta0 | gamma=1) to their priors; both parameter sets then see every edge
and the selection logit compares the two branches net of their KL
divergences from the prior.

Block-pair indices ``p`` follow ``tensor.block_pairs`` order; block indices
``s, s'`` and cluster indices ``d`` are 0-based.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betaln, gammaln, log_softmax, logit, psi, softmax, xlogy

from .config import ModelConfig, VariationalState, init_state
from .errors import NumericalError, ValidationError
from .parallel import parallel_map
from .special import (
    LOG_2PI,
    EdgeLogDensity,
    NigExpectations,
    beta_expected_logs,
    bernoulli_edge_density,
    dirichlet_expected_log,
    fixed_bernoulli_edge_density,
    fixed_normal_edge_density,
    nig_expectations,
    normal_edge_density,
)
from .tensor import (
    SIMPLEX_TOLERANCE,
    BlockSuffStats,
    ConnectivityTensor,
    block_suffstats,
    pair_lookup,
    unfold_pairs,
)

logger = logging.getLogger(__name__)

H_FLOOR = 1e-10
MONOTONE_TOLERANCE = 1e-8
ABSOLUTE_TOLERANCE = 1e-8


# ---------------------------------------------------------------------------
# Expectations shared by the updates and the ELBO
# ---------------------------------------------------------------------------

def is_continuous(state: VariationalState) -> bool:
    """Family of a state, fixed at initialization from the tensor."""
    return state.u is not None


def has_learned_noise(state: VariationalState) -> bool:
    return state.u0 is not None or state.j0 is not None


def expected_alpha(state: VariationalState, config: ModelConfig) -> Tuple[float, float]:
    """E[alpha] and E[log alpha] for the DP concentration."""
    if config.alpha_mode == 'fixed':
        return config.alpha_value, math.log(config.alpha_value)
    e_alpha = state.alpha_shape / state.alpha_rate
    return e_alpha, float(psi(state.alpha_shape) - math.log(state.alpha_rate))


def expected_log_weights(e: np.ndarray, f: np.ndarray) -> np.ndarray:
    """E[log w_d] under truncated stick-breaking with q(w'_d) = Beta(e_d, f_d).

    The last stick is fixed at one, so the returned vector has length
    ``len(e) + 1``.
    """
    out = np.zeros(e.size + 1)
    if e.size == 0:
        return out
    elog_v, elog_1mv = beta_expected_logs(e, f)
    out[:-1] += elog_v
    out[1:] += np.cumsum(elog_1mv)
    return out


def informative_density(state: VariationalState, config: ModelConfig, m: int) -> EdgeLogDensity:
    """Edge log-density coefficients of every informative component, shape (D, P_m)."""
    if is_continuous(state):
        return normal_edge_density(nig_expectations(state.u[m], state.r[m], state.g[m], state.h[m]))
    elog, elog_1m = beta_expected_logs(state.j[m], state.k[m])
    return bernoulli_edge_density(elog, elog_1m)


def noise_density(state: VariationalState, config: ModelConfig, m: int) -> EdgeLogDensity:
    """Edge log-density coefficients of the noise component (scalar or (P_m,))."""
    if is_continuous(state):
        if state.u0 is not None:
            return normal_edge_density(nig_expectations(state.u0[m], state.r0[m], state.g0[m], state.h0[m]))
        if config.noise_var is None:
            raise ValidationError("'noise_var' is unresolved; call ModelConfig.resolved(tensor) first")
        return fixed_normal_edge_density(config.noise_mean, config.noise_var)
    if state.j0 is not None:
        elog, elog_1m = beta_expected_logs(state.j0[m], state.k0[m])
        return bernoulli_edge_density(elog, elog_1m)
    return fixed_bernoulli_edge_density(config.noise_prob)


def block_logliks(state: VariationalState,
                  config: ModelConfig,
                  stats: BlockSuffStats,
                  m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Expected block log-likelihoods of one state.

    Returns:
        (informative, noise) with shapes (N, D, P_m) and (N, P_m).
    """
    count = stats.edge_count[m]
    total = stats.weighted_sum[m]
    total_sq = stats.weighted_sq_sum[m]

    dens1 = informative_density(state, config, m)
    informative = (dens1.c0 * count)[None] + dens1.c1[None] * total[:, None, :] + dens1.c2[None] * total_sq[:, None, :]

    dens0 = noise_density(state, config, m)
    noise = np.broadcast_to(dens0.c0 * count, total.shape) + dens0.c1 * total + dens0.c2 * total_sq
    return informative, noise


def expected_block_loglik(state: VariationalState,
                          config: ModelConfig,
                          stats: BlockSuffStats,
                          i: int,
                          d: Optional[int],
                          m: int,
                          s: int,
                          s_prime: int) -> float:
    """E_q[log f] summed over the edges of block pair (s, s') for subject i.

    Args:
        d: Informative component; ``None`` selects the noise component.
    """
    p = pair_lookup(len(state.t[m]))[s, s_prime]
    count = stats.edge_count[m][p]
    total = stats.weighted_sum[m][i, p]
    total_sq = stats.weighted_sq_sum[m][i, p]
    if d is None:
        dens = noise_density(state, config, m)
        idx: Any = p
    else:
        dens = informative_density(state, config, m)
        idx = (d, p)

    def at(coef: np.ndarray) -> float:
        return float(coef) if np.ndim(coef) == 0 else float(coef[idx])

    return at(dens.c0) * count + at(dens.c1) * total + at(dens.c2) * total_sq


def nig_posterior(weight: np.ndarray,
                  total: np.ndarray,
                  total_sq: np.ndarray,
                  prior_mean: float,
                  config: ModelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Weighted conjugate NIG update; returns (u, r, g, h)."""
    lam = config.nig_lambda
    r = lam + weight
    u = (lam * prior_mean + total) / r
    g = config.nig_a + weight
    h = np.maximum(config.nig_b + total_sq + lam * prior_mean ** 2 - r * u ** 2, H_FLOOR)
    return u, r, g, h


# ---------------------------------------------------------------------------
# Coordinate updates
# ---------------------------------------------------------------------------

def update_sticks(state: VariationalState, config: ModelConfig) -> None:
    """Update q(w'_d) = Beta(e_d, f_d), and q(alpha) first when it is learned."""
    resp = state.responsibilities()
    n_clusters = resp.shape[1]
    if n_clusters < 2:
        return
    if config.alpha_mode == 'learned':
        _, elog_1mv = beta_expected_logs(state.e, state.f)
        state.alpha_shape = config.alpha_prior_shape + (n_clusters - 1)
        state.alpha_rate = config.alpha_prior_rate - float(np.sum(elog_1mv))
    e_alpha, _ = expected_alpha(state, config)

    counts = resp.sum(axis=0)
    tail = np.cumsum(counts[::-1])[::-1]
    state.e = 1.0 + counts[:-1]
    state.f = e_alpha + tail[1:]


def conditional_selection(config: ModelConfig) -> bool:
    """Whether q(theta) is conditioned on the selection indicator.

    Under the conditional family q(theta1 | gamma=0) and q(theta0 | gamma=1)
    are their priors, so both parameter sets are fitted to every edge of the
    pair and the selection logit pays their KL divergences from the prior.
    """
    return config.selection_mode == 'conditional'


def _informative_weights(state: VariationalState,
                         config: ModelConfig,
                         stats: BlockSuffStats,
                         m: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted (count, sum, sum of squares) per (d, p).

    Subject weights are r_id, times q(gamma) under the mean-field family.
    """
    resp = state.responsibilities()
    q = 1.0 if conditional_selection(config) else state.selection_prob(m)
    weight = np.outer(resp.sum(axis=0), q * stats.edge_count[m])
    total = q * (resp.T @ stats.weighted_sum[m])
    total_sq = q * (resp.T @ stats.weighted_sq_sum[m])
    return weight, total, total_sq


def update_theta1_normal(state: VariationalState, config: ModelConfig, stats: BlockSuffStats) -> None:
    """Update the NIG factors (u, r, g, h) of every informative component."""
    for m in range(len(state.zeta)):
        weight, total, total_sq = _informative_weights(state, config, stats, m)
        state.u[m], state.r[m], state.g[m], state.h[m] = nig_posterior(weight, total, total_sq, 0.0, config)


def update_theta1_bernoulli(state: VariationalState, config: ModelConfig, stats: BlockSuffStats) -> None:
    """Update the Beta factors (j, k) of every informative component."""
    for m in range(len(state.zeta)):
        weight, total, _ = _informative_weights(state, config, stats, m)
        state.j[m] = config.beta_a0 + total
        state.k[m] = config.beta_b0 + np.maximum(weight - total, 0.0)


def update_theta0(state: VariationalState, config: ModelConfig, stats: BlockSuffStats) -> None:
    """Update the learned noise component.

    Every subject has weight one under the conditional family and
    1 - q(gamma) under the mean-field family. No-op when the noise
    component is fixed.
    """
    if not has_learned_noise(state):
        return
    for m in range(len(state.zeta)):
        keep = 1.0 if conditional_selection(config) else 1.0 - state.selection_prob(m)
        n_subjects = stats.weighted_sum[m].shape[0]
        weight = keep * n_subjects * stats.edge_count[m]
        total = keep * stats.weighted_sum[m].sum(axis=0)
        if is_continuous(state):
            total_sq = keep * stats.weighted_sq_sum[m].sum(axis=0)
            state.u0[m], state.r0[m], state.g0[m], state.h0[m] = nig_posterior(
                weight, total, total_sq, config.noise_mean, config
            )
        else:
            state.j0[m] = config.beta_a0 + total
            state.k0[m] = config.beta_b0 + np.maximum(weight - total, 0.0)


def update_gamma(state: VariationalState, config: ModelConfig, stats: BlockSuffStats) -> None:
    """Update the selection logits zeta.

    Under the conditional family each logit also pays KL(q(theta1) || prior)
    summed over the clusters and is refunded the noise KL.
    """
    resp = state.responsibilities()
    prior_logit = float(logit(config.gamma_prior_prob))
    for m in range(len(state.zeta)):
        informative, noise = block_logliks(state, config, stats, m)
        zeta = prior_logit + np.einsum('id,idp->p', resp, informative) - noise.sum(axis=0)
        if conditional_selection(config):
            kl1, kl0 = pair_divergences(state, config, m)
            zeta = zeta - kl1 + kl0
        state.zeta[m] = zeta


def update_clusters(state: VariationalState, config: ModelConfig, stats: BlockSuffStats) -> None:
    """Update the cluster logits b."""
    logits = np.tile(expected_log_weights(state.e, state.f), (state.b.shape[0], 1))
    for m in range(len(state.zeta)):
        informative, _ = block_logliks(state, config, stats, m)
        logits += np.einsum('idp,p->id', informative, state.selection_prob(m))
    state.b = logits


def update_tau(state: VariationalState, config: ModelConfig) -> None:
    """Update the Dirichlet factors of the node-allocation probabilities."""
    for m in range(len(state.t)):
        state.t[m] = config.phi(m) + state.eta[m].sum(axis=0)


class _NodeSweep:
    """Bookkeeping for sequential node-membership updates within one state.

    Every edge's expected mixture log-likelihood is a quadratic in its weight
    with subject-specific coefficients, so a node's block scores only need
    the projections A_i eta and (A_i o A_i) eta, which are patched in place
    after every row update.
    """

    def __init__(self, state: VariationalState, config: ModelConfig, tensor: ConnectivityTensor, m: int):
        self.state = state
        self.m = m
        eta = state.eta[m]
        n_blocks = eta.shape[1]
        resp = state.responsibilities()
        q = state.selection_prob(m)
        dens1 = informative_density(state, config, m)
        dens0 = noise_density(state, config, m)

        def mix(c1: np.ndarray, c0: np.ndarray) -> np.ndarray:
            return q * (resp @ c1) + (1.0 - q) * np.broadcast_to(c0, q.shape)

        self.k0 = unfold_pairs(mix(dens1.c0, dens0.c0).sum(axis=0), n_blocks)
        self.k1 = unfold_pairs(mix(dens1.c1, dens0.c1), n_blocks)
        self.a = tensor.offdiag(m)
        self.p1 = np.matmul(self.a, eta)
        self.quadratic = is_continuous(state)
        if self.quadratic:
            self.k2 = unfold_pairs(mix(dens1.c2, dens0.c2), n_blocks)
            self.a2 = tensor.offdiag_sq(m)
            self.p2 = np.matmul(self.a2, eta)
        self.colsum = eta.sum(axis=0)
        self.elog_tau = dirichlet_expected_log(state.t[m])

    def scores(self, v: int) -> np.ndarray:
        """Unnormalized log responsibilities of node v over the blocks."""
        row = self.state.eta[self.m][v]
        score = self.elog_tau + self.k0 @ (self.colsum - row)
        score = score + np.einsum('ist,it->s', self.k1, self.p1[:, v, :])
        if self.quadratic:
            score = score + np.einsum('ist,it->s', self.k2, self.p2[:, v, :])
        return score

    def update_row(self, v: int) -> None:
        eta = self.state.eta[self.m]
        new_row = softmax(self.scores(v))
        delta = new_row - eta[v]
        eta[v] = new_row
        self.colsum += delta
        self.p1 += self.a[:, v, :, None] * delta
        if self.quadratic:
            self.p2 += self.a2[:, v, :, None] * delta


def update_node_row(state: VariationalState,
                    config: ModelConfig,
                    tensor: ConnectivityTensor,
                    m: int,
                    v: int) -> None:
    """Update the membership row of a single node with every other row fixed."""
    _NodeSweep(state, config, tensor, m).update_row(v)


def update_nodes(state: VariationalState,
                 config: ModelConfig,
                 tensor: ConnectivityTensor,
                 states: Optional[Sequence[int]] = None) -> None:
    """Update node memberships sequentially in node index order.

    Args:
        states: States to sweep; defaults to all of them.
    """
    for m in (range(len(state.eta)) if states is None else states):
        sweep = _NodeSweep(state, config, tensor, m)
        for v in range(tensor.n_nodes):
            sweep.update_row(v)


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------

@dataclass
class ElboTerms:
    """ELBO decomposition: expected data log-likelihood plus, per factor,
    E_q[log p] (prior) and E_q[log q].

    Under the conditional selection family the parameter terms of a pair are
    weighted by the probability of the branch that uses them; the unused
    branch sits at its prior and contributes nothing.
    """

    data: float
    log_prior: Dict[str, float]
    log_q: Dict[str, float]

    @property
    def expected_log_q(self) -> float:
        return sum(self.log_q.values())

    @property
    def total(self) -> float:
        return self.data + sum(self.log_prior.values()) - self.expected_log_q


def _nig_expected_log_density(moments: NigExpectations,
                              mean: Any,
                              lam: Any,
                              shape: Any,
                              rate: Any) -> np.ndarray:
    """E_q[log NIG(mu, sigma^2 | mean, lam, shape, rate)] per entry."""
    e_log_var = np.asarray(moments.e_log_var)
    e_inv_var = np.asarray(moments.e_inv_var)
    quad = (np.asarray(moments.e_meansq_over_var)
            - 2.0 * mean * np.asarray(moments.e_mean_over_var)
            + mean ** 2 * e_inv_var)
    value = (0.5 * np.log(lam) - 0.5 * LOG_2PI - 0.5 * e_log_var - 0.5 * lam * quad
             + shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * e_log_var - rate * e_inv_var)
    return np.broadcast_to(value, e_log_var.shape)


def _beta_expected_log_density(elog: np.ndarray, elog_1m: np.ndarray, a: Any, b: Any) -> np.ndarray:
    value = -betaln(a, b) + (a - 1.0) * elog + (b - 1.0) * elog_1m
    return np.broadcast_to(value, np.shape(elog))


def _nig_terms(u, r, g, h, prior_mean: float, config: ModelConfig) -> Tuple[np.ndarray, np.ndarray]:
    moments = nig_expectations(u, r, g, h)
    prior = _nig_expected_log_density(moments, prior_mean, config.nig_lambda, config.nig_a / 2.0, config.nig_b / 2.0)
    log_q = _nig_expected_log_density(moments, np.asarray(u), np.asarray(r), np.asarray(g) / 2.0, np.asarray(h) / 2.0)
    return prior, log_q


def _beta_terms(j, k, config: ModelConfig) -> Tuple[np.ndarray, np.ndarray]:
    elog, elog_1m = beta_expected_logs(j, k)
    prior = _beta_expected_log_density(elog, elog_1m, config.beta_a0, config.beta_b0)
    log_q = _beta_expected_log_density(elog, elog_1m, np.asarray(j), np.asarray(k))
    return prior, log_q


def _informative_terms(state: VariationalState, config: ModelConfig, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pair E_q[log p(theta1)] and E_q[log q(theta1)], summed over clusters."""
    if is_continuous(state):
        prior, log_q = _nig_terms(state.u[m], state.r[m], state.g[m], state.h[m], 0.0, config)
    else:
        prior, log_q = _beta_terms(state.j[m], state.k[m], config)
    return prior.sum(axis=0), log_q.sum(axis=0)


def _noise_terms(state: VariationalState, config: ModelConfig, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pair E_q[log p(theta0)] and E_q[log q(theta0)] of a learned noise component."""
    if is_continuous(state):
        return _nig_terms(state.u0[m], state.r0[m], state.g0[m], state.h0[m], config.noise_mean, config)
    return _beta_terms(state.j0[m], state.k0[m], config)


def pair_divergences(state: VariationalState, config: ModelConfig, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """KL divergences of the parameter factors from their priors, per block pair.

    Returns:
        (informative, noise), both of shape (P_m,). The informative one is
        summed over the clusters; the noise one is zero for a fixed noise
        component.
    """
    prior1, log_q1 = _informative_terms(state, config, m)
    kl0 = np.zeros_like(prior1)
    if has_learned_noise(state):
        prior0, log_q0 = _noise_terms(state, config, m)
        kl0 = log_q0 - prior0
    return log_q1 - prior1, kl0


def elbo_terms(state: VariationalState, config: ModelConfig, stats: BlockSuffStats) -> ElboTerms:
    """Closed-form ELBO broken down by factor.

    Raises:
        NumericalError: naming the first non-finite term.
    """
    resp = state.responsibilities()
    log_resp = log_softmax(state.b, axis=1)
    log_pi = math.log(config.gamma_prior_prob)
    log_1mpi = math.log1p(-config.gamma_prior_prob)

    prior = {'tau': 0.0, 'nodes': 0.0, 'gamma': 0.0, 'theta1': 0.0}
    log_q = {'tau': 0.0, 'nodes': 0.0, 'gamma': 0.0, 'theta1': 0.0}
    if has_learned_noise(state):
        prior['theta0'] = 0.0
        log_q['theta0'] = 0.0
    data = 0.0

    for m in range(len(state.zeta)):
        informative, noise = block_logliks(state, config, stats, m)
        q = state.selection_prob(m)
        data += float(np.sum(q * np.einsum('id,idp->p', resp, informative)) + np.sum((1.0 - q) * noise.sum(axis=0)))

        phi = config.phi(m)
        t = state.t[m]
        elog_tau = dirichlet_expected_log(t)
        prior['tau'] += float(gammaln(phi.sum()) - gammaln(phi).sum() + np.sum((phi - 1.0) * elog_tau))
        log_q['tau'] += float(gammaln(t.sum()) - gammaln(t).sum() + np.sum((t - 1.0) * elog_tau))

        eta = state.eta[m]
        prior['nodes'] += float(np.sum(eta @ elog_tau))
        log_q['nodes'] += float(np.sum(xlogy(eta, eta)))

        prior['gamma'] += float(np.sum(q * log_pi + (1.0 - q) * log_1mpi))
        log_q['gamma'] += float(np.sum(xlogy(q, q) + xlogy(1.0 - q, 1.0 - q)))

        if conditional_selection(config):
            weight1, weight0 = q, 1.0 - q
        else:
            weight1 = weight0 = 1.0
        p_term, q_term = _informative_terms(state, config, m)
        prior['theta1'] += float(np.sum(weight1 * p_term))
        log_q['theta1'] += float(np.sum(weight1 * q_term))

        if has_learned_noise(state):
            p_term, q_term = _noise_terms(state, config, m)
            prior['theta0'] += float(np.sum(weight0 * p_term))
            log_q['theta0'] += float(np.sum(weight0 * q_term))

    e_alpha, elog_alpha = expected_alpha(state, config)
    if state.e.size:
        elog_v, elog_1mv = beta_expected_logs(state.e, state.f)
        prior['sticks'] = float(np.sum(elog_alpha + (e_alpha - 1.0) * elog_1mv))
        log_q['sticks'] = float(np.sum(_beta_expected_log_density(elog_v, elog_1mv, state.e, state.f)))
    else:
        prior['sticks'] = log_q['sticks'] = 0.0

    prior['clusters'] = float(np.sum(resp * expected_log_weights(state.e, state.f)))
    log_q['clusters'] = float(np.sum(resp * log_resp))

    if config.alpha_mode == 'learned':
        a0, b0 = config.alpha_prior_shape, config.alpha_prior_rate
        a, b = state.alpha_shape, state.alpha_rate
        prior['alpha'] = float(a0 * math.log(b0) - gammaln(a0) + (a0 - 1.0) * elog_alpha - b0 * e_alpha)
        log_q['alpha'] = float(a * math.log(b) - gammaln(a) + (a - 1.0) * elog_alpha - b * e_alpha)

    if not math.isfinite(data):
        raise NumericalError("Non-finite ELBO", term='data')
    for name in prior:
        if not math.isfinite(prior[name]) or not math.isfinite(log_q[name]):
            raise NumericalError("Non-finite ELBO", term=name)
    return ElboTerms(data=data, log_prior=prior, log_q=log_q)


def compute_elbo(state: VariationalState,
                 config: ModelConfig,
                 tensor: Optional[ConnectivityTensor],
                 stats: BlockSuffStats) -> float:
    """ELBO = E_q[log p(Xi, A)] - E_q[log q(Xi)].

    ``stats`` must be current for ``state.eta``; ``tensor`` is accepted for
    symmetry with the other operations and is not read.
    """
    return elbo_terms(state, config, stats).total


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass
class FitDiagnostics:
    """Outcome of the fit that was kept (the best restart).

    ``max_elbo_drop`` is the largest relative decrease of the ELBO over any
    single update across all restarts; it is only measured when the fit runs
    with ``check_monotone=True``.
    """

    n_iter: int
    final_elbo: float
    converged: bool
    wall_time: float
    restart_index: int
    max_elbo_drop: float = 0.0
    restart_elbos: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FitDiagnostics':
        return cls(**data)


class _MonotoneMonitor:
    """Recompute the ELBO after every update and track the worst decrease."""

    def __init__(self, config: ModelConfig, baseline: float):
        self.config = config
        self.last = baseline
        self.max_drop = 0.0

    def check(self, step: str, state: VariationalState, stats: BlockSuffStats) -> None:
        current = compute_elbo(state, self.config, None, stats)
        drop = (self.last - current) / max(abs(self.last), ABSOLUTE_TOLERANCE)
        if drop > self.max_drop:
            self.max_drop = drop
        if drop > MONOTONE_TOLERANCE:
            logger.warning("ELBO decreased by %.3e (relative) in the '%s' update", drop, step)
        self.last = current


def run_sweep(state: VariationalState,
              config: ModelConfig,
              tensor: ConnectivityTensor,
              stats: BlockSuffStats,
              monitor: Optional[_MonotoneMonitor] = None,
              hold_selection: bool = False) -> BlockSuffStats:
    """One pass over every factor in schedule order.

    Args:
        hold_selection: Skip the selection update and keep zeta as it is.

    Returns:
        Block statistics refreshed for the updated node memberships.
    """
    def checkpoint(step: str) -> None:
        if monitor is not None:
            monitor.check(step, state, stats)

    update_sticks(state, config)
    checkpoint('sticks')
    if is_continuous(state):
        update_theta1_normal(state, config, stats)
    else:
        update_theta1_bernoulli(state, config, stats)
    checkpoint('theta1')
    if has_learned_noise(state):
        update_theta0(state, config, stats)
        checkpoint('theta0')
    if not hold_selection:
        update_gamma(state, config, stats)
        checkpoint('gamma')
    update_clusters(state, config, stats)
    checkpoint('clusters')
    update_tau(state, config)
    checkpoint('tau')
    update_nodes(state, config, tensor)
    stats = block_suffstats(tensor, state.eta)
    checkpoint('nodes')
    return stats


def has_converged(previous: float, current: float, tol: float) -> bool:
    """Relative ELBO change below ``tol``; absolute 1e-8 when the ELBO is near zero."""
    change = abs(current - previous)
    if abs(previous) > ABSOLUTE_TOLERANCE:
        return change / abs(previous) < tol
    return change < ABSOLUTE_TOLERANCE


def check_state(state: VariationalState) -> None:
    """Raise NumericalError unless every variational invariant holds."""
    positive = {'t': state.t, 'e': [state.e], 'f': [state.f]}
    for name in ('r', 'g', 'h', 'j', 'k', 'r0', 'g0', 'h0', 'j0', 'k0'):
        if getattr(state, name) is not None:
            positive[name] = getattr(state, name)
    for name, arrays in positive.items():
        for arr in arrays:
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise NumericalError("Variational parameter left the positive orthant", term=name)
    for name in ('u', 'u0'):
        if getattr(state, name) is not None and not all(np.all(np.isfinite(a)) for a in getattr(state, name)):
            raise NumericalError("Non-finite variational mean", term=name)
    if not np.all(np.isfinite(state.b)) or not all(np.all(np.isfinite(z)) for z in state.zeta):
        raise NumericalError("Non-finite cluster or selection logits", term='b/zeta')
    for eta in state.eta:
        if np.any(eta < 0) or np.any(np.abs(eta.sum(axis=1) - 1.0) > SIMPLEX_TOLERANCE):
            raise NumericalError("Node memberships left the simplex", term='eta')


def fit_restart(tensor: ConnectivityTensor,
                config: ModelConfig,
                seed: int,
                restart_index: int = 0,
                check_monotone: bool = False) -> Tuple[VariationalState, FitDiagnostics]:
    """Run one randomly initialized CAVI fit to convergence or ``max_iter``.

    The first ``config.selection_warmup`` sweeps (at most half of
    ``max_iter``) keep the selection probabilities at their prior so that
    clusters and node blocks form before any block pair is dropped. Warm-up
    ends early once the ELBO settles; convergence is only declared after it.
    """
    start = time.perf_counter()
    state = init_state(config, tensor, seed)
    stats = block_suffstats(tensor, state.eta)
    monitor = _MonotoneMonitor(config, compute_elbo(state, config, tensor, stats)) if check_monotone else None

    warmup = min(config.selection_warmup, config.max_iter // 2)
    previous: Optional[float] = None
    converged = False
    elbo = float('nan')
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        holding = iteration <= warmup
        stats = run_sweep(state, config, tensor, stats, monitor, hold_selection=holding)
        elbo = compute_elbo(state, config, tensor, stats)
        state.elbo_trace.append(elbo)
        logger.debug("restart %d iteration %d: ELBO %.6f", restart_index, iteration, elbo)
        if previous is not None and has_converged(previous, elbo, config.tol):
            if not holding:
                converged = True
                break
            logger.debug("restart %d: warm-up settled after %d sweeps", restart_index, iteration)
            warmup = iteration
        previous = elbo

    check_state(state)
    diagnostics = FitDiagnostics(
        n_iter=iteration,
        final_elbo=elbo,
        converged=converged,
        wall_time=time.perf_counter() - start,
        restart_index=restart_index,
        max_elbo_drop=monitor.max_drop if monitor is not None else 0.0,
    )
    if not converged:
        logger.info("restart %d hit max_iter=%d without converging", restart_index, config.max_iter)
    return state, diagnostics


def _run_restart(job: Tuple[ConnectivityTensor, ModelConfig, int, int, bool]) -> Tuple[VariationalState, FitDiagnostics]:
    return fit_restart(*job)


def restart_seeds(seed: int, n_restarts: int) -> List[int]:
    """Independent, reproducible per-restart seeds derived from one seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_restarts)]


def fit(tensor: ConnectivityTensor,
        config: ModelConfig,
        threads: int = 1,
        check_monotone: bool = False) -> Tuple[VariationalState, FitDiagnostics]:
    """Fit the model with ``config.n_restarts`` random restarts.

    Args:
        tensor: Validated connectivity tensor.
        config: Model configuration; data-dependent defaults are resolved here.
        threads: Worker processes for the restarts.
        check_monotone: Recompute the ELBO after every single update and record
            the worst decrease in the diagnostics.

    Returns:
        The state and diagnostics of the restart with the largest final ELBO
        (lowest restart index on ties).
    """
    config = config.resolved(tensor)
    jobs = [(tensor, config, seed, index, check_monotone)
            for index, seed in enumerate(restart_seeds(config.seed, config.n_restarts))]
    results = parallel_map(_run_restart, jobs, threads)

    best = max(range(len(results)), key=lambda idx: (results[idx][1].final_elbo, -idx))
    state, diagnostics = results[best]
    diagnostics.restart_elbos = [diag.final_elbo for _, diag in results]
    diagnostics.max_elbo_drop = max(diag.max_elbo_drop for _, diag in results)
    logger.info(
        "fit done: best restart %d of %d, ELBO %.4f after %d iterations (converged=%s)",
        best, len(results), diagnostics.final_elbo, diagnostics.n_iter, diagnostics.converged,
    )
    return state, diagnostics
