"""Tests for recovery metrics."""

import itertools
from math import comb

import numpy as np
import pytest

from tools.connectome_subtyper.errors import ValidationError
from tools.connectome_subtyper.metrics import (
    MetricsReport,
    adjusted_rand_index,
    evaluate,
    modular_ari,
    selection_auc,
    selection_metrics,
)
from tools.connectome_subtyper.simulator import GroundTruth
from tools.connectome_subtyper.summary import FitSummary
from tools.connectome_subtyper.tensor import pair_lookup


def brute_force_ari(x, y):
    """ARI by explicit pair counting."""
    n = len(x)
    a = b = c = d = 0
    for i, j in itertools.combinations(range(n), 2):
        same_x = x[i] == x[j]
        same_y = y[i] == y[j]
        a += same_x and same_y
        b += same_x and not same_y
        c += same_y and not same_x
        d += not same_x and not same_y
    total = comb(n, 2)
    expected = (a + b) * (a + c) / total
    maximum = 0.5 * ((a + b) + (a + c))
    if maximum == expected:
        return 1.0
    return (a - expected) / (maximum - expected)


def make_truth(block_of, informative, subtypes=(1, 1, 2)):
    return GroundTruth(
        subtype_of=np.array(subtypes),
        block_of=[np.asarray(b) for b in block_of],
        informative=[np.asarray(f, dtype=bool) for f in informative],
        true_means=[np.zeros((2, len(f))) for f in informative],
        true_vars=[np.ones((2, len(f))) for f in informative],
    )


def brute_force_confusion(selected, est_blocks, truth):
    tp = fp = tn = fn = 0
    for m in range(len(selected)):
        n_true = int(np.max(truth.block_of[m]))
        n_est = int(round((np.sqrt(8 * len(selected[m]) + 1) - 1) / 2))
        true_lookup, est_lookup = pair_lookup(n_true), pair_lookup(n_est)
        for v, w in itertools.combinations(range(len(est_blocks[m])), 2):
            positive = truth.informative[m][true_lookup[truth.block_of[m][v] - 1, truth.block_of[m][w] - 1]]
            predicted = selected[m][est_lookup[est_blocks[m][v] - 1, est_blocks[m][w] - 1]]
            tp += positive and predicted
            fp += predicted and not positive
            tn += not predicted and not positive
            fn += positive and not predicted
    return tp, fp, tn, fn


class TestAdjustedRandIndex:
    """Tests for adjusted_rand_index function."""

    def test_identical(self):
        """Test identical partitions score 1."""
        assert adjusted_rand_index([1, 1, 2, 2], [1, 1, 2, 2]) == pytest.approx(1.0)

    def test_relabeling(self):
        """Test a relabeled partition scores 1."""
        assert adjusted_rand_index([1, 1, 2, 3], [7, 7, 4, 9]) == pytest.approx(1.0)

    def test_hand_example(self):
        """Test (1,1,1,2,2,2) vs (1,1,2,2,2,2) against pair counting."""
        x, y = [1, 1, 1, 2, 2, 2], [1, 1, 2, 2, 2, 2]
        assert adjusted_rand_index(x, y) == pytest.approx(brute_force_ari(x, y))

    def test_trivial_partitions(self):
        """Test two single-cluster partitions score 1."""
        assert adjusted_rand_index([1, 1, 1], [2, 2, 2]) == pytest.approx(1.0)

    def test_random_pairs_match_pair_counting(self):
        """Test 100 random partition pairs against pair counting."""
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 13))
            x = rng.integers(0, int(rng.integers(1, 5)), size=n)
            y = rng.integers(0, int(rng.integers(1, 5)), size=n)
            assert adjusted_rand_index(x, y) == pytest.approx(brute_force_ari(list(x), list(y)), abs=1e-12)
            assert adjusted_rand_index(x, y) == pytest.approx(adjusted_rand_index(y, x), abs=1e-12)

    def test_errors(self):
        """Test length mismatch and too few items are rejected."""
        with pytest.raises(ValidationError):
            adjusted_rand_index([1, 2], [1, 2, 3])
        with pytest.raises(ValidationError):
            adjusted_rand_index([1], [1])


class TestSelectionMetrics:
    """Tests for selection_metrics function."""

    def test_exact_recovery(self):
        """Test a perfect estimate gives (1, 1, 1)."""
        truth = make_truth([[1, 1, 2, 2, 2]], [[True, False, True]])
        sen, spe, youden, confusion = selection_metrics([np.array([True, False, True])], truth.block_of, truth)
        assert (sen, spe, youden) == (1.0, 1.0, 1.0)
        assert confusion.total == 10

    def test_everything_selected(self):
        """Test selecting every pair gives sen=1, spe=0."""
        truth = make_truth([[1, 1, 2, 2, 2]], [[True, False, True]])
        sen, spe, youden, _ = selection_metrics([np.ones(3, dtype=bool)], truth.block_of, truth)
        assert (sen, spe, youden) == (1.0, 0.0, 0.0)

    def test_zero_denominator_reports_one(self):
        """Test no true negatives gives specificity 1."""
        truth = make_truth([[1, 1, 2, 2]], [[True, True, True]])
        _, spe, _, _ = selection_metrics([np.ones(3, dtype=bool)], truth.block_of, truth)
        assert spe == 1.0

    def test_random_instances_match_edge_count(self):
        """Test 20 random small instances against an edge-by-edge count."""
        rng = np.random.default_rng(11)
        for _ in range(20):
            n_nodes = int(rng.integers(3, 8))
            n_states = int(rng.integers(1, 3))
            true_blocks = [rng.integers(1, 3, size=n_nodes) for _ in range(n_states)]
            est_blocks = [rng.integers(1, 4, size=n_nodes) for _ in range(n_states)]
            informative = [rng.random(3) < 0.5 for _ in range(n_states)]
            selected = [rng.random(6) < 0.5 for _ in range(n_states)]
            for m in range(n_states):
                true_blocks[m][:2] = [1, 2]
            truth = make_truth(true_blocks, informative)
            _, _, _, confusion = selection_metrics(selected, est_blocks, truth)
            assert (confusion.tp, confusion.fp, confusion.tn, confusion.fn) == \
                brute_force_confusion(selected, est_blocks, truth)
            assert confusion.total == n_states * n_nodes * (n_nodes - 1) // 2

    def test_invariant_to_block_relabeling(self):
        """Test swapping estimated block labels with their pairs leaves metrics unchanged."""
        truth = make_truth([[1, 1, 2, 2, 1]], [[True, False, False]])
        est = [np.array([1, 2, 2, 1, 1])]
        swapped = [3 - est[0]]
        selected = np.array([True, False, False])
        first = selection_metrics([selected], est, truth)
        second = selection_metrics([selected[::-1]], swapped, truth)
        assert first[:3] == second[:3]

    def test_state_count_mismatch(self):
        """Test that a different number of states is rejected."""
        truth = make_truth([[1, 2, 2]], [[True, False, False]])
        with pytest.raises(ValidationError):
            selection_metrics([np.ones(3, dtype=bool)] * 2, [np.array([1, 2, 2])] * 2, truth)


class TestModularAriAndAuc:
    """Tests for modular_ari and selection_auc functions."""

    def test_modular_ari(self):
        """Test per-state block ARI."""
        truth = make_truth([[1, 1, 2, 2], [1, 2, 1, 2]], [[True, False, False]] * 2)
        values = modular_ari([np.array([2, 2, 1, 1]), np.array([1, 1, 2, 2])], truth)
        assert values[0] == pytest.approx(1.0)
        assert values[1] < 1.0

    def test_auc_perfect_ranking(self):
        """Test probabilities ranking every informative edge first give AUC 1."""
        truth = make_truth([[1, 1, 2, 2, 2]], [[True, False, False]])
        auc = selection_auc([np.array([0.9, 0.2, 0.1])], truth.block_of, truth)
        assert auc == pytest.approx(1.0)

    def test_auc_single_class(self):
        """Test AUC is undefined when every edge is informative."""
        truth = make_truth([[1, 1, 2, 2]], [[True, True, True]])
        assert selection_auc([np.array([0.9, 0.2, 0.1])], truth.block_of, truth) is None


class TestEvaluate:
    """Tests for evaluate function."""

    def test_report(self):
        """Test a summary equal to the truth scores perfectly."""
        truth = make_truth([[1, 1, 2, 2, 2]], [[True, False, True]])
        summary = FitSummary(
            cluster_of=np.array([3, 3, 1]),
            occupied_clusters=2,
            block_of=[np.array([2, 2, 1, 1, 1])],
            selected=[np.array([True, False, True])],
            selection_prob=[np.array([0.9, 0.1, 0.8])],
            profile=[np.zeros((2, 3))],
            occupied=np.array([1, 3]),
        )
        report = evaluate(summary, truth, runtime=2.5)
        assert report.subtyping_ari == pytest.approx(1.0)
        assert report.modular_ari == [pytest.approx(1.0)]
        assert (report.sensitivity, report.specificity, report.youden) == (1.0, 1.0, 1.0)
        assert report.auc == pytest.approx(1.0)
        assert report.runtime_seconds == 2.5
        assert MetricsReport.from_dict(report.to_dict()) == report
