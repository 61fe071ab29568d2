"""Hard posterior summaries of a fitted state.

Labels are 1-based: cluster labels lie in [1, D] and block labels in
[1, S_m]. Ties always resolve to the lowest index, as ``np.argmax`` does.
"""

from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np
import pandas as pd
from scipy.special import expit

from .config import ModelConfig, VariationalState
from .tensor import block_pairs


@dataclass
class FitSummary:
    """Subtype labels, node blocks, selected block pairs and subtype profiles.

    Attributes:
        cluster_of: (N,) subject cluster labels.
        occupied_clusters: Number of distinct cluster labels.
        block_of: Per state, (V,) node block labels.
        selected: Per state, (P_m,) flags, ``expit(zeta) > 0.5``.
        selection_prob: Per state, (P_m,) ``expit(zeta)``.
        profile: Per state, (K, P_m) posterior mean connectivity of the occupied
            clusters, rows ordered as ``occupied``.
        occupied: Occupied cluster labels in increasing order.
    """

    cluster_of: np.ndarray
    occupied_clusters: int
    block_of: List[np.ndarray]
    selected: List[np.ndarray]
    selection_prob: List[np.ndarray]
    profile: List[np.ndarray]
    occupied: np.ndarray

    @property
    def cluster_sizes(self) -> Dict[int, int]:
        labels, counts = np.unique(self.cluster_of, return_counts=True)
        return {int(label): int(count) for label, count in zip(labels, counts)}

    def block_sizes(self, state: int, n_blocks: int) -> List[int]:
        """Nodes per block of one state, including empty blocks."""
        return np.bincount(self.block_of[state] - 1, minlength=n_blocks).tolist()

    def canonical_order(self) -> List[int]:
        """Occupied cluster labels sorted by size (largest first), ties by label."""
        sizes = self.cluster_sizes
        return sorted(sizes, key=lambda label: (-sizes[label], label))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cluster_of': self.cluster_of.tolist(),
            'occupied_clusters': self.occupied_clusters,
            'block_of': [b.tolist() for b in self.block_of],
            'selected': [s.tolist() for s in self.selected],
            'selection_prob': [p.tolist() for p in self.selection_prob],
            'profile': [p.tolist() for p in self.profile],
            'occupied': self.occupied.tolist(),
        }


def summarize(state: VariationalState, config: ModelConfig) -> FitSummary:
    """Apply the three decision rules to a fitted state.

    A subject joins the cluster with the largest logit, a node joins its most
    probable block, and a block pair is selected when its selection
    probability is strictly greater than 0.5.
    """
    cluster_of = np.argmax(state.b, axis=1) + 1
    occupied = np.unique(cluster_of)
    rows = occupied - 1

    block_of = [np.argmax(eta, axis=1) + 1 for eta in state.eta]
    selection_prob = [expit(z) for z in state.zeta]
    selected = [p > 0.5 for p in selection_prob]

    if state.u is not None:
        profile = [u[rows] for u in state.u]
    else:
        profile = [j[rows] / (j[rows] + k[rows]) for j, k in zip(state.j, state.k)]

    return FitSummary(
        cluster_of=cluster_of,
        occupied_clusters=int(occupied.size),
        block_of=block_of,
        selected=selected,
        selection_prob=selection_prob,
        profile=profile,
        occupied=occupied,
    )


def format_summary(summary: FitSummary, config: ModelConfig, state_names=None) -> str:
    """Aligned text report: cluster sizes, block sizes, selected pairs, profiles."""
    names = list(state_names) if state_names is not None else [f"state{m + 1}" for m in range(config.n_states)]
    order = summary.canonical_order()
    sizes = summary.cluster_sizes
    lines = [f"Subtypes: {summary.occupied_clusters} occupied of {config.truncation}"]

    clusters = pd.DataFrame({'cluster': order, 'subjects': [sizes[c] for c in order]})
    lines.append(clusters.to_string(index=False))
    lines.append('')

    for m, name in enumerate(names):
        n_blocks = config.blocks_per_state[m]
        sizes_m = summary.block_sizes(m, n_blocks)
        lines.append(f"[{name}] block sizes: " + ', '.join(f"{s + 1}:{n}" for s, n in enumerate(sizes_m)))

        table: Dict[str, Any] = {
            'pair': [f"({s + 1},{t + 1})" for s, t in block_pairs(n_blocks)],
            'q(gamma=1)': np.round(summary.selection_prob[m], 3),
            'selected': ['yes' if flag else '' for flag in summary.selected[m]],
        }
        position = {int(label): row for row, label in enumerate(summary.occupied)}
        for label in order:
            table[f"c{label}"] = np.round(summary.profile[m][position[label]], 3)
        lines.append(pd.DataFrame(table).to_string(index=False))
        lines.append('')
    return '\n'.join(lines).rstrip() + '\n'
