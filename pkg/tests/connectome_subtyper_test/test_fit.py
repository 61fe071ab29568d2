"""Tests for the restart loop and convergence handling."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logit

from tools.connectome_subtyper.cavi import (
    FitDiagnostics,
    check_state,
    fit,
    fit_restart,
    has_converged,
    restart_seeds,
    run_sweep,
)
from tools.connectome_subtyper.config import ModelConfig, init_state
from tools.connectome_subtyper.errors import NumericalError
from tools.connectome_subtyper.metrics import evaluate
from tools.connectome_subtyper.simulator import SimConfig, generate
from tools.connectome_subtyper.summary import summarize
from tools.connectome_subtyper.tensor import block_pairs, block_suffstats, pair_lookup, validate_tensor

from .helpers import random_state, random_tensor, small_config


class TestHasConverged:
    """Tests for has_converged function."""

    def test_relative_change(self):
        """Test relative tolerance on a large ELBO."""
        assert has_converged(-1000.0, -1000.0005, 1e-6)
        assert not has_converged(-1000.0, -1000.01, 1e-6)

    def test_absolute_near_zero(self):
        """Test the absolute fallback when the ELBO is near zero."""
        assert has_converged(0.0, 1e-9, 1e-6)
        assert not has_converged(0.0, 1e-6, 1e-6)


class TestRestartSeeds:
    """Tests for restart_seeds function."""

    def test_reproducible_and_distinct(self):
        """Test seeds are stable for a base seed and differ between restarts."""
        assert restart_seeds(4, 5) == restart_seeds(4, 5)
        assert len(set(restart_seeds(4, 5))) == 5
        assert restart_seeds(4, 3) != restart_seeds(5, 3)


class TestFit:
    """Tests for fit function."""

    def test_deterministic(self, small_simulation):
        """Test the same seed and data give identical output."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=6, n_restarts=2, max_iter=50, seed=3)
        first, diag_first = fit(tensor, config)
        second, diag_second = fit(tensor, config)
        np.testing.assert_array_equal(first.b, second.b)
        np.testing.assert_array_equal(first.eta[1], second.eta[1])
        assert diag_first.final_elbo == diag_second.final_elbo

    def test_keeps_best_restart(self, small_simulation):
        """Test the kept restart has the largest final ELBO."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=6, n_restarts=3, max_iter=50)
        _, diagnostics = fit(tensor, config)
        assert len(diagnostics.restart_elbos) == 3
        assert diagnostics.final_elbo == max(diagnostics.restart_elbos)
        assert diagnostics.restart_elbos[diagnostics.restart_index] == diagnostics.final_elbo

    def test_recovers_simulated_structure(self, small_simulation):
        """Test default settings recover subtypes, node blocks and exactly the informative pairs."""
        tensor, truth = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=8, n_restarts=3)
        state, diagnostics = fit(tensor, config)
        report = evaluate(summarize(state, config), truth)
        assert diagnostics.converged
        assert report.subtyping_ari > 0.8
        assert report.modular_ari == pytest.approx([1.0, 1.0])
        assert report.sensitivity == 1.0
        assert report.specificity == 1.0

    def test_null_pair_is_dropped(self, small_simulation):
        """Test the block pair without subtype contrast ends with a selection probability near zero."""
        tensor, truth = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=8, n_restarts=2, seed=1)
        state, _ = fit(tensor, config)
        summary = summarize(state, config)
        lookup = pair_lookup(2)
        for m, (est, true) in enumerate(zip(summary.block_of, truth.block_of)):
            # block labels may be swapped
            relabel = {int(e): int(t) for e, t in zip(est, true)}
            for p, (s, t) in enumerate(block_pairs(2)):
                true_p = lookup[relabel[s + 1] - 1, relabel[t + 1] - 1]
                if truth.informative[m][true_p]:
                    assert summary.selection_prob[m][p] > 0.99
                else:
                    assert summary.selection_prob[m][p] < 0.01

    def test_single_subtype_gives_one_dominant_cluster(self):
        """Test data from one subtype concentrate on a single cluster."""
        sim = SimConfig(n_subjects=40, n_nodes=16, n_subtypes=1, informative_means=(4.0,),
                        informative_vars=(3.0,), node_probs=((0.5, 0.5), (0.5, 0.5)), seed=8)
        tensor, _ = generate(sim)
        config = ModelConfig(blocks_per_state=(2, 2), truncation=10, n_restarts=3)
        state, _ = fit(tensor, config)
        mass = state.responsibilities().sum(axis=0)
        assert mass.max() / mass.sum() >= 0.99

    def test_binary_fit_runs(self):
        """Test the Bernoulli path fits and yields valid probabilities."""
        sim = SimConfig(n_subjects=20, n_nodes=12, n_states=1, node_probs=((0.5, 0.5),),
                        family='binary', seed=4)
        tensor, _ = generate(sim)
        config = ModelConfig(blocks_per_state=(2,), truncation=5, n_restarts=2, max_iter=100)
        state, diagnostics = fit(tensor, config)
        summary = summarize(state, config)
        assert np.isfinite(diagnostics.final_elbo)
        assert np.all((summary.profile[0] > 0) & (summary.profile[0] < 1))

    def test_threads_do_not_change_result(self, small_simulation):
        """Test worker processes give the same answer as in-process restarts."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=4, n_restarts=2, max_iter=20)
        serial, _ = fit(tensor, config, threads=1)
        pooled, _ = fit(tensor, config, threads=2)
        np.testing.assert_array_equal(serial.b, pooled.b)


class TestSelectionWarmup:
    """Tests for holding the selection probabilities during the first sweeps."""

    def test_held_sweep_keeps_zeta(self, small_simulation):
        """Test a held sweep leaves zeta at the prior while the other factors move."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=4, gamma_prior_prob=0.3).resolved(tensor)
        state = init_state(config, tensor, seed=0)
        before = state.copy()
        run_sweep(state, config, tensor, block_suffstats(tensor, state.eta), hold_selection=True)
        for zeta in state.zeta:
            np.testing.assert_allclose(zeta, logit(0.3))
        assert not np.allclose(state.b, before.b)

    def test_no_convergence_during_warmup(self, small_simulation):
        """Test a settled ELBO ends the warm-up and convergence needs one more sweep."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=4, tol=10.0, max_iter=50).resolved(tensor)
        _, held = fit_restart(tensor, replace(config, selection_warmup=5), seed=0)
        _, free = fit_restart(tensor, replace(config, selection_warmup=0), seed=0)
        assert held.converged and free.converged
        assert (held.n_iter, free.n_iter) == (3, 2)

    def test_warmup_capped_at_half_of_max_iter(self, small_simulation):
        """Test selection is still updated when the warm-up is longer than the iteration budget."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=4, tol=1e-15, max_iter=4,
                             selection_warmup=100).resolved(tensor)
        state, diagnostics = fit_restart(tensor, config, seed=0)
        assert diagnostics.n_iter == 4
        assert not all(np.allclose(zeta, 0.0) for zeta in state.zeta)


class TestCheckState:
    """Tests for check_state function."""

    def test_detects_negative_parameter(self, small_simulation):
        """Test that a non-positive variational parameter is reported."""
        tensor, _ = small_simulation
        config = ModelConfig(blocks_per_state=(2, 2), truncation=3, n_restarts=1, max_iter=2)
        state, _ = fit(tensor, config)
        state.h[0][0, 0] = -1.0
        with pytest.raises(NumericalError, match='term: h'):
            check_state(state)


class TestFitDiagnostics:
    """Tests for FitDiagnostics serialization."""

    def test_dict_round_trip(self):
        """Test from_dict inverts to_dict."""
        diag = FitDiagnostics(n_iter=3, final_elbo=-1.5, converged=True, wall_time=0.1,
                              restart_index=1, restart_elbos=[-2.0, -1.5])
        assert FitDiagnostics.from_dict(diag.to_dict()) == diag


class TestSubjectPermutation:
    """Tests that subject order carries no information."""

    @pytest.mark.parametrize('seed', [0, 1, 2])
    def test_sweep_is_equivariant(self, seed):
        """Test permuting subjects permutes rows of b and leaves every other factor unchanged."""
        rng = np.random.default_rng(seed)
        tensor = random_tensor(rng, n_subjects=5, n_states=2, n_nodes=6)
        config = small_config((2, 2), truncation=3, tensor=tensor)
        state = random_state(config, tensor, rng)
        perm = rng.permutation(tensor.n_subjects)

        shuffled_tensor = validate_tensor(tensor.values[perm], tensor.n_subjects, tensor.n_states,
                                          tensor.n_nodes, family=tensor.family)
        shuffled = state.copy()
        shuffled.b = state.b[perm].copy()

        run_sweep(state, config, tensor, block_suffstats(tensor, state.eta))
        run_sweep(shuffled, config, shuffled_tensor, block_suffstats(shuffled_tensor, shuffled.eta))

        np.testing.assert_allclose(shuffled.b, state.b[perm], atol=1e-8)
        np.testing.assert_allclose(shuffled.e, state.e, rtol=1e-8)
        np.testing.assert_allclose(shuffled.f, state.f, rtol=1e-8)
        for name in ('eta', 'zeta', 't', 'u', 'r', 'g', 'h'):
            for ours, theirs in zip(getattr(shuffled, name), getattr(state, name)):
                np.testing.assert_allclose(ours, theirs, rtol=1e-7, atol=1e-8)
