"""Recovery metrics against simulation ground truth.

Edge-level selection metrics map block-pair decisions back onto node pairs:
the edge universe is every strictly-upper-triangle pair (v < v') of every
state, each counted once.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import adjusted_rand_score, roc_auc_score

from .errors import ValidationError
from .simulator import GroundTruth
from .summary import FitSummary
from .tensor import pair_lookup


def adjusted_rand_index(x: Sequence[int], y: Sequence[int]) -> float:
    """Hubert-Arabie adjusted Rand index of two labelings.

    Two trivial partitions (both a single cluster, or both all singletons)
    score 1.

    Raises:
        ValidationError: on length mismatch or fewer than two items.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"Label vectors differ in shape: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValidationError("ARI needs at least two items")
    return float(adjusted_rand_score(x, y))


@dataclass
class EdgeConfusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, truth: np.ndarray, predicted: np.ndarray) -> None:
        self.tp += int(np.sum(truth & predicted))
        self.fp += int(np.sum(~truth & predicted))
        self.tn += int(np.sum(~truth & ~predicted))
        self.fn += int(np.sum(truth & ~predicted))


def _n_blocks_from_pairs(n_pairs: int) -> int:
    n_blocks = int(round((math.sqrt(8 * n_pairs + 1) - 1) / 2))
    if n_blocks * (n_blocks + 1) // 2 != n_pairs:
        raise ValidationError(f"{n_pairs} is not a block-pair count S(S+1)/2")
    return n_blocks


def _edge_pairs(block_of: np.ndarray, n_blocks: int) -> np.ndarray:
    """Block-pair index of every upper-triangle edge under 1-based block labels."""
    if block_of.min() < 1 or block_of.max() > n_blocks:
        raise ValidationError(f"Block labels must lie in [1, {n_blocks}]")
    rows, cols = np.triu_indices(block_of.size, k=1)
    return pair_lookup(n_blocks)[block_of[rows] - 1, block_of[cols] - 1]


def _edge_flags(selected: Sequence[np.ndarray],
                block_of: Sequence[np.ndarray],
                truth: GroundTruth) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per state: (true edge flags, estimated pair of every edge, per-pair values)."""
    if len(selected) != len(truth.informative) or len(block_of) != len(truth.block_of):
        raise ValidationError(
            f"Estimate covers {len(selected)} states, truth has {len(truth.informative)}"
        )
    out = []
    for m, (flags, est_blocks) in enumerate(zip(selected, block_of)):
        est_blocks = np.asarray(est_blocks, dtype=int)
        true_blocks = np.asarray(truth.block_of[m], dtype=int)
        if est_blocks.shape != true_blocks.shape:
            raise ValidationError(
                f"State {m}: estimate has {est_blocks.size} nodes, truth has {true_blocks.size}"
            )
        true_informative = np.asarray(truth.informative[m], dtype=bool)
        true_edges = true_informative[_edge_pairs(true_blocks, _n_blocks_from_pairs(true_informative.size))]
        est_pairs = _edge_pairs(est_blocks, _n_blocks_from_pairs(len(flags)))
        out.append((true_edges, est_pairs, np.asarray(flags)))
    return out


def selection_metrics(selected: Sequence[np.ndarray],
                      block_of: Sequence[np.ndarray],
                      truth: GroundTruth) -> Tuple[float, float, float, EdgeConfusion]:
    """Edge-level sensitivity, specificity and Youden index of block-pair selection.

    Args:
        selected: Per state, estimated selection flags over estimated block pairs.
        block_of: Per state, estimated 1-based node block labels.
        truth: Ground truth of the simulated data.

    Returns:
        (sensitivity, specificity, youden, confusion). A rate whose
        denominator is zero is reported as 1.
    """
    confusion = EdgeConfusion()
    for true_edges, est_pairs, flags in _edge_flags(selected, block_of, truth):
        confusion.add(true_edges, flags.astype(bool)[est_pairs])

    positives = confusion.tp + confusion.fn
    negatives = confusion.tn + confusion.fp
    sensitivity = confusion.tp / positives if positives else 1.0
    specificity = confusion.tn / negatives if negatives else 1.0
    return sensitivity, specificity, sensitivity + specificity - 1.0, confusion


def modular_ari(block_of: Sequence[np.ndarray], truth: GroundTruth) -> List[float]:
    """Per-state ARI between estimated and true node blocks."""
    if len(block_of) != len(truth.block_of):
        raise ValidationError(f"Estimate covers {len(block_of)} states, truth has {len(truth.block_of)}")
    return [adjusted_rand_index(est, true) for est, true in zip(block_of, truth.block_of)]


def selection_auc(selection_prob: Sequence[np.ndarray],
                  block_of: Sequence[np.ndarray],
                  truth: GroundTruth) -> Optional[float]:
    """Edge-level ROC AUC of expit(zeta) scores pooled over states.

    Returns None when the truth holds only one class.
    """
    labels, scores = [], []
    for true_edges, est_pairs, probs in _edge_flags(selection_prob, block_of, truth):
        labels.append(true_edges)
        scores.append(probs.astype(float)[est_pairs])
    labels_all = np.concatenate(labels)
    if labels_all.all() or not labels_all.any():
        return None
    return float(roc_auc_score(labels_all, np.concatenate(scores)))


@dataclass
class MetricsReport:
    subtyping_ari: float
    modular_ari: List[float]
    sensitivity: float
    specificity: float
    youden: float
    edge_confusion: EdgeConfusion
    runtime_seconds: float = 0.0
    auc: Optional[float] = None
    occupied_clusters: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        data = dict(data)
        data['edge_confusion'] = EdgeConfusion(**data['edge_confusion'])
        return cls(**data)


def evaluate(summary: FitSummary, truth: GroundTruth, runtime: float = 0.0) -> MetricsReport:
    """Score a fit summary against the ground truth it was simulated from."""
    sensitivity, specificity, youden, confusion = selection_metrics(summary.selected, summary.block_of, truth)
    return MetricsReport(
        subtyping_ari=adjusted_rand_index(summary.cluster_of, truth.subtype_of),
        modular_ari=modular_ari(summary.block_of, truth),
        sensitivity=sensitivity,
        specificity=specificity,
        youden=youden,
        edge_confusion=confusion,
        runtime_seconds=float(runtime),
        auc=selection_auc(summary.selection_prob, summary.block_of, truth),
        occupied_clusters=summary.occupied_clusters,
    )
