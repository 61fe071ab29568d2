"""Tests for simulation replicates."""

import math

import pandas as pd
import pytest

from tools.connectome_subtyper.config import ModelConfig
from tools.connectome_subtyper.errors import ValidationError
from tools.connectome_subtyper.replicate import ReplicateTable, run_setting

SMALL = dict(n_subjects=12, n_nodes=12, node_probs=((0.5, 0.5), (0.5, 0.5)))
FAST = ModelConfig(blocks_per_state=(2, 2), truncation=4, n_restarts=1, max_iter=20)


class TestRunSetting:
    """Tests for run_setting function."""

    def test_table_columns(self):
        """Test one row per replicate with every metric column."""
        table = run_setting('v60-high', 2, seed=3, config=FAST, **SMALL)
        assert list(table.metrics.columns) == ['ari', 'sen', 'spe', 'y_index', 'auc',
                                               'modular_ari_1', 'modular_ari_2']
        assert len(table.metrics) == 2
        assert len(table.runtimes) == 2

    def test_deterministic(self):
        """Test the same seed reproduces the metric table."""
        first = run_setting('v60-low', 2, seed=7, config=FAST, **SMALL)
        second = run_setting('v60-low', 2, seed=7, config=FAST, **SMALL)
        assert first.to_dict() == second.to_dict()

    def test_rejects_zero_replicates(self):
        """Test at least one replicate is required."""
        with pytest.raises(ValidationError):
            run_setting('v60-high', 0)


class TestReplicateTable:
    """Tests for ReplicateTable aggregation."""

    def make_table(self, rows):
        return ReplicateTable(setting='v60-high', seed=0, config=FAST,
                              metrics=pd.DataFrame(rows), runtimes=[1.0] * len(rows))

    def test_mean_and_sd_row(self):
        """Test the row formats mean (sd) with two decimals."""
        table = self.make_table([{'ari': 1.0, 'auc': float('nan')}, {'ari': 0.5, 'auc': 0.8}])
        mean, sd = table.aggregate()
        assert mean['ari'] == pytest.approx(0.75)
        assert sd['ari'] == pytest.approx(math.sqrt(0.125))
        assert table.row()['ari'] == '0.75 (0.35)'
        assert mean['auc'] == pytest.approx(0.8)

    def test_single_replicate_sd_is_zero(self):
        """Test a single replicate reports sd 0."""
        table = self.make_table([{'ari': 0.9}])
        assert table.row()['ari'] == '0.90 (0.00)'

    def test_missing_metric_is_na(self):
        """Test an all-missing column prints NA."""
        table = self.make_table([{'ari': 0.9, 'auc': float('nan')}])
        assert table.row()['auc'] == 'NA'
        assert table.to_dict()['per_replicate'][0]['auc'] is None

    def test_runtimes_kept_apart(self):
        """Test runtimes live in the timing document only."""
        table = self.make_table([{'ari': 0.9}, {'ari': 0.8}])
        assert 'runtime' not in str(table.to_dict())
        assert table.timing_dict()['mean'] == pytest.approx(1.0)
        assert table.timing_dict()['sd'] == pytest.approx(0.0)
