"""Tests for the ELBO: exact-evidence bound, monotone ascent and additivity."""

import itertools
import math

import numpy as np
import pytest
from scipy.special import betaln, gammaln, logsumexp

from tools.connectome_subtyper.cavi import compute_elbo, elbo_terms, fit_restart
from tools.connectome_subtyper.config import ModelConfig
from tools.connectome_subtyper.errors import NumericalError
from tools.connectome_subtyper.simulator import SimConfig, generate
from tools.connectome_subtyper.tensor import block_suffstats, pair_lookup, validate_tensor

from .helpers import random_state, random_tensor


def nig_log_marginal(x: np.ndarray, prior_mean: float, config: ModelConfig) -> float:
    """log p(x) for i.i.d. Normal data with (mean, variance) integrated under the NIG prior."""
    n = x.size
    if n == 0:
        return 0.0
    lam, a, b = config.nig_lambda, config.nig_a / 2.0, config.nig_b / 2.0
    lam_n = lam + n
    mean_n = (lam * prior_mean + x.sum()) / lam_n
    a_n = a + n / 2.0
    b_n = b + 0.5 * (np.sum(x ** 2) + lam * prior_mean ** 2 - lam_n * mean_n ** 2)
    return (-0.5 * n * math.log(2 * math.pi) + 0.5 * math.log(lam / lam_n)
            + a * math.log(b) - a_n * math.log(b_n) + gammaln(a_n) - gammaln(a))


def log_evidence(tensor, config: ModelConfig) -> float:
    """Exact log p(A) by enumerating node blocks, subject clusters and selection flags.

    Supports one state, two blocks, two clusters, a fixed concentration and a
    learned Normal noise component.
    """
    n_subjects, n_nodes = tensor.n_subjects, tensor.n_nodes
    alpha = config.alpha_value
    pi = config.gamma_prior_prob
    phi = config.phi(0)
    rows, cols = np.triu_indices(n_nodes, k=1)
    edges = tensor.values[:, 0, rows, cols]
    lookup = pair_lookup(2)

    terms = []
    for z in itertools.product(range(2), repeat=n_nodes):
        z = np.array(z)
        sizes = np.bincount(z, minlength=2)
        log_pz = (gammaln(phi.sum()) - gammaln(phi.sum() + n_nodes)
                  + np.sum(gammaln(phi + sizes) - gammaln(phi)))
        edge_pair = lookup[z[rows], z[cols]]
        for c in itertools.product(range(2), repeat=n_subjects):
            c = np.array(c)
            n1 = int(np.sum(c == 0))
            log_pc = betaln(1.0 + n1, alpha + n_subjects - n1) - betaln(1.0, alpha)
            for gamma in itertools.product(range(2), repeat=3):
                log_pg = sum(math.log(pi) if g else math.log1p(-pi) for g in gamma)
                log_data = 0.0
                for p, g in enumerate(gamma):
                    in_pair = edge_pair == p
                    if g:
                        for d in range(2):
                            log_data += nig_log_marginal(edges[c == d][:, in_pair], 0.0, config)
                    else:
                        log_data += nig_log_marginal(edges[:, in_pair], config.noise_mean, config)
                terms.append(log_pz + log_pc + log_pg + log_data)
    return float(logsumexp(terms))


def enumerable_instance(seed: int, selection_mode: str = 'conditional'):
    rng = np.random.default_rng(100 + seed)
    tensor = random_tensor(rng, n_subjects=2, n_states=1, n_nodes=3)
    config = ModelConfig(blocks_per_state=(2,), truncation=2, alpha_mode='fixed', alpha_value=1.0,
                         selection_mode=selection_mode, n_restarts=1, max_iter=300, seed=seed).resolved(tensor)
    return tensor, config, rng


class TestEvidenceBound:
    """The ELBO never exceeds the exact log evidence."""

    @pytest.mark.parametrize('seed', range(5))
    @pytest.mark.parametrize('selection_mode', ['conditional', 'mean_field'])
    def test_converged_fit(self, seed, selection_mode):
        """Test a converged fit stays below the enumerated evidence."""
        tensor, config, _ = enumerable_instance(seed, selection_mode)
        _, diagnostics = fit_restart(tensor, config, seed=seed)
        assert diagnostics.final_elbo <= log_evidence(tensor, config) + 1e-9

    @pytest.mark.parametrize('seed', range(5))
    @pytest.mark.parametrize('selection_mode', ['conditional', 'mean_field'])
    def test_arbitrary_state(self, seed, selection_mode):
        """Test any valid variational state gives a lower bound."""
        tensor, config, rng = enumerable_instance(seed, selection_mode)
        state = random_state(config, tensor, rng)
        elbo = compute_elbo(state, config, tensor, block_suffstats(tensor, state.eta))
        assert elbo <= log_evidence(tensor, config)


class TestMonotoneAscent:
    """The ELBO never decreases across single factor updates."""

    @pytest.mark.parametrize('family', ['continuous', 'binary'])
    @pytest.mark.parametrize('alpha_mode', ['learned', 'fixed'])
    def test_every_update(self, family, alpha_mode):
        """Test the worst relative decrease over every update is within 1e-8."""
        sim = SimConfig(n_subjects=12, n_nodes=10, node_probs=((0.5, 0.5),), n_states=1,
                        family=family, seed=5)
        tensor, _ = generate(sim)
        config = ModelConfig(blocks_per_state=(2,), truncation=4, alpha_mode=alpha_mode,
                             max_iter=40).resolved(tensor)
        state, diagnostics = fit_restart(tensor, config, seed=1, check_monotone=True)
        assert diagnostics.max_elbo_drop <= 1e-8
        trace = np.array(state.elbo_trace)
        assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))

    def test_fixed_noise(self):
        """Test ascent with a fixed noise component."""
        tensor, _ = generate(SimConfig(n_subjects=10, n_nodes=8, n_states=1, node_probs=((0.5, 0.5),), seed=2))
        config = ModelConfig(blocks_per_state=(2,), truncation=3, noise_mode='fixed', max_iter=30).resolved(tensor)
        _, diagnostics = fit_restart(tensor, config, seed=0, check_monotone=True)
        assert diagnostics.max_elbo_drop <= 1e-8

    def test_mean_field_family(self):
        """Test ascent when q(gamma) is independent of the component parameters."""
        tensor, _ = generate(SimConfig(n_subjects=10, n_nodes=8, n_states=1, node_probs=((0.5, 0.5),), seed=4))
        config = ModelConfig(blocks_per_state=(2,), truncation=3, selection_mode='mean_field',
                             max_iter=30).resolved(tensor)
        _, diagnostics = fit_restart(tensor, config, seed=0, check_monotone=True)
        assert diagnostics.max_elbo_drop <= 1e-8


class TestElboTerms:
    """Tests for the ELBO decomposition."""

    def test_duplicated_subjects_double_data_term(self, rng):
        """Test duplicating every subject doubles the data term and keeps subject-free terms."""
        tensor = random_tensor(rng, n_subjects=3, n_states=2, n_nodes=5)
        config = ModelConfig(blocks_per_state=(2, 3), truncation=3).resolved(tensor)
        state = random_state(config, tensor, rng)

        doubled_values = np.concatenate([tensor.values, tensor.values])
        doubled = validate_tensor(doubled_values, 6, 2, 5)
        doubled_state = state.copy()
        doubled_state.b = np.concatenate([state.b, state.b])

        single = elbo_terms(state, config, block_suffstats(tensor, state.eta))
        double = elbo_terms(doubled_state, config, block_suffstats(doubled, doubled_state.eta))
        assert double.data == pytest.approx(2.0 * single.data, rel=1e-12)
        for name in ('tau', 'nodes', 'gamma', 'theta1', 'theta0', 'sticks'):
            assert double.log_prior[name] == pytest.approx(single.log_prior[name], rel=1e-12)
            assert double.log_q[name] == pytest.approx(single.log_q[name], rel=1e-12)
        assert double.log_prior['clusters'] == pytest.approx(2.0 * single.log_prior['clusters'], rel=1e-12)

    def test_total_is_prior_plus_data_minus_entropy_terms(self, rng):
        """Test that the total combines the three parts."""
        tensor = random_tensor(rng)
        config = ModelConfig(blocks_per_state=(2,), truncation=3).resolved(tensor)
        state = random_state(config, tensor, rng)
        terms = elbo_terms(state, config, block_suffstats(tensor, state.eta))
        assert terms.total == pytest.approx(terms.data + sum(terms.log_prior.values()) - terms.expected_log_q)
        assert 'alpha' in terms.log_prior

    def test_non_finite_term_is_named(self, rng):
        """Test that a non-finite contribution reports its term."""
        tensor = random_tensor(rng)
        config = ModelConfig(blocks_per_state=(2,), truncation=3).resolved(tensor)
        state = random_state(config, tensor, rng)
        state.b[0, 0] = np.inf
        with pytest.raises(NumericalError):
            compute_elbo(state, config, tensor, block_suffstats(tensor, state.eta))
