"""Multi-state connectivity tensor and expected block-level sufficient statistics.

Only strictly upper-triangle node pairs (v < v') enter any computation; the
diagonal of every slice is stored but ignored.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

FAMILIES = ('continuous', 'binary')

SYMMETRY_TOLERANCE = 1e-9
SIMPLEX_TOLERANCE = 1e-8


def n_block_pairs(n_blocks: int) -> int:
    """Number of unordered block pairs s <= s' among ``n_blocks`` blocks."""
    return n_blocks * (n_blocks + 1) // 2


def block_pairs(n_blocks: int) -> List[Tuple[int, int]]:
    """Block pairs (s, s') with s <= s', in the storage order used everywhere."""
    rows, cols = np.triu_indices(n_blocks)
    return list(zip(rows.tolist(), cols.tolist()))


def pair_lookup(n_blocks: int) -> np.ndarray:
    """Symmetric ``n_blocks x n_blocks`` matrix mapping (s, s') to its pair index."""
    lookup = np.empty((n_blocks, n_blocks), dtype=int)
    rows, cols = np.triu_indices(n_blocks)
    lookup[rows, cols] = np.arange(rows.size)
    lookup[cols, rows] = np.arange(rows.size)
    return lookup


def fold_pairs(matrix: np.ndarray) -> np.ndarray:
    """Fold an ordered-pair matrix (..., S, S) onto unordered pairs (..., P).

    Off-diagonal pairs keep the (s, s') entry, which already counts both
    orientations of every node pair; diagonal pairs are halved.
    """
    n_blocks = matrix.shape[-1]
    rows, cols = np.triu_indices(n_blocks)
    folded = matrix[..., rows, cols].copy()
    folded[..., rows == cols] *= 0.5
    return folded


def unfold_pairs(values: np.ndarray, n_blocks: int) -> np.ndarray:
    """Expand pair-indexed values (..., P) to a symmetric (..., S, S) array."""
    return values[..., pair_lookup(n_blocks)]


@dataclass(frozen=True, eq=False)
class ConnectivityTensor:
    """Validated per-subject, per-state symmetric networks.

    Attributes:
        values: Array of shape (N, M, V, V); read-only.
        family: ``'continuous'`` or ``'binary'``.
        state_names: One label per state.
    """

    values: np.ndarray
    family: str
    state_names: Tuple[str, ...]
    _cache: Dict[Tuple[str, int], np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[2]

    @property
    def n_edges(self) -> int:
        """Unique off-diagonal node pairs per slice, V(V-1)/2."""
        return self.n_nodes * (self.n_nodes - 1) // 2

    def offdiag(self, state: int) -> np.ndarray:
        """Slices of one state with the diagonal zeroed, shape (N, V, V)."""
        key = ('a', state)
        if key not in self._cache:
            slab = np.array(self.values[:, state], dtype=float)
            idx = np.arange(self.n_nodes)
            slab[:, idx, idx] = 0.0
            slab.setflags(write=False)
            self._cache[key] = slab
        return self._cache[key]

    def offdiag_sq(self, state: int) -> np.ndarray:
        """Squared edge weights of one state, diagonal zeroed."""
        if self.family == 'binary':
            return self.offdiag(state)
        key = ('a2', state)
        if key not in self._cache:
            slab = np.square(self.offdiag(state))
            slab.setflags(write=False)
            self._cache[key] = slab
        return self._cache[key]

    def upper_edges(self) -> np.ndarray:
        """All strictly-upper-triangle edge weights, shape (N, M, V(V-1)/2)."""
        rows, cols = np.triu_indices(self.n_nodes, k=1)
        return self.values[:, :, rows, cols]


def validate_tensor(raw: Sequence[float],
                    n_subjects: int,
                    n_states: int,
                    n_nodes: int,
                    family: str = 'continuous',
                    state_names: Optional[Sequence[str]] = None) -> ConnectivityTensor:
    """Check and package raw connectivity values.

    Args:
        raw: N*M*V*V values in subject, state, row, column order (flat or shaped).
        n_subjects: N.
        n_states: M.
        n_nodes: V.
        family: Likelihood family, ``'continuous'`` or ``'binary'``.
        state_names: Optional labels for the states.

    Returns:
        A read-only ConnectivityTensor, symmetrized by averaging.

    Raises:
        ValidationError: naming the first offending (i, m, v, v') for a
            non-finite value, a binary violation or an asymmetry beyond 1e-9.
    """
    if family not in FAMILIES:
        raise ValidationError(f"Unknown likelihood family '{family}'. Valid families: {', '.join(FAMILIES)}")
    for name, dim in (('n_subjects', n_subjects), ('n_states', n_states), ('n_nodes', n_nodes)):
        if int(dim) != dim or dim < 1:
            raise ValidationError(f"'{name}' must be a positive integer, got {dim}")

    arr = np.asarray(raw, dtype=float)
    expected = n_subjects * n_states * n_nodes * n_nodes
    if arr.size != expected:
        raise ValidationError(
            f"Tensor has {arr.size} values, expected N*M*V*V = {expected}"
        )
    arr = arr.reshape(n_subjects, n_states, n_nodes, n_nodes)

    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        raise ValidationError("Non-finite connectivity value", location=tuple(bad[0].tolist()))

    if family == 'binary':
        bad = np.argwhere((arr != 0.0) & (arr != 1.0))
        if bad.size:
            i, m, v, w = bad[0].tolist()
            raise ValidationError(
                f"Binary tensor holds value {arr[i, m, v, w]!r}", location=(i, m, v, w)
            )

    transposed = np.swapaxes(arr, 2, 3)
    bad = np.argwhere(np.abs(arr - transposed) > SYMMETRY_TOLERANCE)
    if bad.size:
        i, m, v, w = bad[0].tolist()
        raise ValidationError(
            f"Slice is not symmetric: a[v, v']={arr[i, m, v, w]!r}, a[v', v]={arr[i, m, w, v]!r}",
            location=(i, m, v, w),
        )

    values = (arr + transposed) / 2.0
    values.setflags(write=False)

    if state_names is None:
        names = tuple(f"state{m + 1}" for m in range(n_states))
    else:
        names = tuple(str(s) for s in state_names)
        if len(names) != n_states:
            raise ValidationError(f"Got {len(names)} state names for {n_states} states")

    return ConnectivityTensor(values=values, family=family, state_names=names)


@dataclass
class BlockSuffStats:
    """Expected block-pair statistics under the current node responsibilities.

    All lists are indexed by state; pair axes follow ``block_pairs`` order.

    Attributes:
        edge_count: (P_m,) expected number of edges per block pair.
        weighted_sum: (N, P_m) expected sum of edge weights per subject.
        weighted_sq_sum: (N, P_m) expected sum of squared weights per subject.
    """

    edge_count: List[np.ndarray]
    weighted_sum: List[np.ndarray]
    weighted_sq_sum: List[np.ndarray]


def check_node_resp(eta: np.ndarray, n_nodes: int, state: int) -> None:
    """Raise ValidationError unless ``eta`` is a (V, S) row-simplex array."""
    if eta.ndim != 2 or eta.shape[0] != n_nodes:
        raise ValidationError(
            f"Node responsibilities for state {state} have shape {eta.shape}, expected ({n_nodes}, S)"
        )
    if np.any(eta < 0) or np.any(np.abs(eta.sum(axis=1) - 1.0) > SIMPLEX_TOLERANCE):
        raise ValidationError(f"Node responsibilities for state {state} are not on the simplex")


def block_suffstats(tensor: ConnectivityTensor, node_resp: Sequence[np.ndarray]) -> BlockSuffStats:
    """Project every slice onto block pairs via eta^T A eta.

    Args:
        tensor: Validated connectivity tensor.
        node_resp: Per-state (V, S_m) node responsibilities.

    Returns:
        BlockSuffStats for the current responsibilities.
    """
    if len(node_resp) != tensor.n_states:
        raise ValidationError(
            f"Got node responsibilities for {len(node_resp)} states, tensor has {tensor.n_states}"
        )

    counts, sums, sq_sums = [], [], []
    for m, eta in enumerate(node_resp):
        eta = np.asarray(eta, dtype=float)
        check_node_resp(eta, tensor.n_nodes, m)

        col = eta.sum(axis=0)
        counts.append(fold_pairs(np.outer(col, col) - eta.T @ eta))

        weighted = np.matmul(np.matmul(eta.T, tensor.offdiag(m)), eta)
        sums.append(fold_pairs(weighted))
        if tensor.family == 'binary':
            sq_sums.append(sums[-1])
        else:
            weighted_sq = np.matmul(np.matmul(eta.T, tensor.offdiag_sq(m)), eta)
            sq_sums.append(fold_pairs(weighted_sq))

    return BlockSuffStats(edge_count=counts, weighted_sum=sums, weighted_sq_sum=sq_sums)
