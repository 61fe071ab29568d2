"""Synthetic multi-state networks with known subtypes, blocks and informative pairs.

Subjects are split uniformly at random into subtypes and, per state, nodes
into blocks. A random subset of block pairs is informative: on each of them
the subtypes receive a random permutation of the configured means and, as an
independent permutation, of the variances. All other block pairs share one
noise distribution across subjects.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ValidationError
from .tensor import FAMILIES, ConnectivityTensor, n_block_pairs, pair_lookup, validate_tensor

logger = logging.getLogger(__name__)

MAX_LABEL_ATTEMPTS = 100

# Named settings: number of nodes and noise variance (high / low SNR).
SETTINGS = {
    'v60-high': (60, 6.0),
    'v60-low': (60, 10.0),
    'v200-high': (200, 6.0),
    'v200-low': (200, 10.0),
    'v500-high': (500, 6.0),
    'v500-low': (500, 10.0),
}


@dataclass(frozen=True)
class SimConfig:
    """Generator settings. Block counts per state are ``len(node_probs[m])``."""

    n_subjects: int = 100
    n_states: int = 2
    n_subtypes: int = 3
    n_nodes: int = 60
    node_probs: Tuple[Tuple[float, ...], ...] = ((0.25, 0.40, 0.35), (0.30, 0.30, 0.40))
    informative_fraction: float = 0.5
    informative_means: Tuple[float, ...] = (-3.0, 2.0, 7.0)
    informative_vars: Tuple[float, ...] = (3.0, 5.0, 7.0)
    noise_mean: float = 0.0
    noise_var: float = 6.0
    family: str = 'continuous'
    informative_probs: Tuple[float, ...] = (0.2, 0.5, 0.8)
    noise_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'node_probs', tuple(tuple(float(p) for p in row) for row in self.node_probs))
        for name in ('informative_means', 'informative_vars', 'informative_probs'):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        self._validate()

    def _validate(self):
        for name in ('n_subjects', 'n_states', 'n_subtypes'):
            if getattr(self, name) < 1:
                raise ValidationError(f"'{name}' must be >= 1, got {getattr(self, name)}")
        if self.n_nodes < 2:
            raise ValidationError(f"'n_nodes' must be >= 2, got {self.n_nodes}")
        if self.family not in FAMILIES:
            raise ValidationError(f"Unknown family '{self.family}'")
        if len(self.node_probs) != self.n_states:
            raise ValidationError(f"'node_probs' has {len(self.node_probs)} rows for {self.n_states} states")
        for m, row in enumerate(self.node_probs):
            if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-8:
                raise ValidationError(f"'node_probs' row {m} is not on the simplex", location=f"node_probs.{m}")
        if not 0.0 < self.informative_fraction <= 1.0:
            raise ValidationError("'informative_fraction' must lie in (0, 1]")
        per_subtype = ('informative_probs',) if self.family == 'binary' else ('informative_means', 'informative_vars')
        for name in per_subtype:
            if len(getattr(self, name)) != self.n_subtypes:
                raise ValidationError(
                    f"'{name}' needs {self.n_subtypes} values (one per subtype), got {len(getattr(self, name))}"
                )
        if any(v <= 0 for v in self.informative_vars) or self.noise_var <= 0:
            raise ValidationError("Variances must be positive")
        if any(not 0.0 <= p <= 1.0 for p in self.informative_probs + (self.noise_prob,)):
            raise ValidationError("Probabilities must lie in [0, 1]")

    @property
    def n_blocks(self) -> Tuple[int, ...]:
        return tuple(len(row) for row in self.node_probs)

    def n_informative(self, state: int) -> int:
        return math.ceil(self.informative_fraction * n_block_pairs(self.n_blocks[state]))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['node_probs'] = [list(row) for row in self.node_probs]
        for name in ('informative_means', 'informative_vars', 'informative_probs'):
            data[name] = list(data[name])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SimConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown simulation config keys: {sorted(unknown)}")
        return cls(**data)


def setting(name: str, **overrides: Any) -> SimConfig:
    """SimConfig of a named setting such as ``'v60-high'``."""
    if name not in SETTINGS:
        raise ValidationError(f"Unknown setting '{name}'. Valid settings: {', '.join(SETTINGS)}")
    n_nodes, noise_var = SETTINGS[name]
    return replace(SimConfig(n_nodes=n_nodes, noise_var=noise_var), **overrides)


@dataclass
class GroundTruth:
    """Labels and parameters a simulated tensor was drawn from.

    Attributes:
        subtype_of: (N,) 1-based subtype labels.
        block_of: Per state, (V,) 1-based block labels.
        informative: Per state, (P_m,) flags.
        true_means: Per state, (K, P_m) edge means (noise pairs hold the noise mean).
        true_vars: Per state, (K, P_m) edge variances; for binary data the
            Bernoulli variances p (1 - p).
        true_probs: Per state, (K, P_m) edge probabilities; binary data only.
    """

    subtype_of: np.ndarray
    block_of: List[np.ndarray]
    informative: List[np.ndarray]
    true_means: List[np.ndarray]
    true_vars: List[np.ndarray]
    true_probs: Optional[List[np.ndarray]] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'subtype_of': self.subtype_of.tolist(),
            'block_of': [b.tolist() for b in self.block_of],
            'informative': [f.tolist() for f in self.informative],
            'true_means': [x.tolist() for x in self.true_means],
            'true_vars': [x.tolist() for x in self.true_vars],
        }
        if self.true_probs is not None:
            data['true_probs'] = [x.tolist() for x in self.true_probs]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GroundTruth':
        probs = data.get('true_probs')
        return cls(
            subtype_of=np.asarray(data['subtype_of'], dtype=int),
            block_of=[np.asarray(b, dtype=int) for b in data['block_of']],
            informative=[np.asarray(f, dtype=bool) for f in data['informative']],
            true_means=[np.asarray(x, dtype=float) for x in data['true_means']],
            true_vars=[np.asarray(x, dtype=float) for x in data['true_vars']],
            true_probs=None if probs is None else [np.asarray(x, dtype=float) for x in probs],
        )


def draw_node_blocks(rng: np.random.Generator, probs: Tuple[float, ...], n_nodes: int, state: int) -> np.ndarray:
    """0-based block labels with at least two nodes per block.

    Every block pair, diagonal ones included, then has at least one edge.

    Raises:
        ValidationError: if no valid draw is found in 100 attempts.
    """
    n_blocks = len(probs)
    for attempt in range(MAX_LABEL_ATTEMPTS):
        labels = rng.choice(n_blocks, size=n_nodes, p=probs)
        if np.all(np.bincount(labels, minlength=n_blocks) >= 2):
            if attempt:
                logger.debug("state %d: node labels redrawn %d times", state, attempt)
            return labels
    raise ValidationError(
        f"Could not draw node blocks with every block holding two nodes after {MAX_LABEL_ATTEMPTS} attempts",
        location=f"node_probs.{state}",
    )


def generate(sim: SimConfig) -> Tuple[ConnectivityTensor, GroundTruth]:
    """Draw a tensor and its ground truth; deterministic given ``sim.seed``."""
    rng = np.random.default_rng(sim.seed)
    n_subjects, n_nodes, n_subtypes = sim.n_subjects, sim.n_nodes, sim.n_subtypes
    binary = sim.family == 'binary'

    subtype = rng.integers(0, n_subtypes, size=n_subjects)
    values = np.zeros((n_subjects, sim.n_states, n_nodes, n_nodes))
    rows, cols = np.triu_indices(n_nodes, k=1)

    block_of, informative, means, variances, probs = [], [], [], [], []
    for m in range(sim.n_states):
        n_blocks = sim.n_blocks[m]
        n_pairs = n_block_pairs(n_blocks)
        labels = draw_node_blocks(rng, sim.node_probs[m], n_nodes, m)

        chosen = rng.choice(n_pairs, size=sim.n_informative(m), replace=False)
        flags = np.zeros(n_pairs, dtype=bool)
        flags[chosen] = True

        if binary:
            prob = np.full((n_subtypes, n_pairs), sim.noise_prob)
            for p in np.sort(chosen):
                prob[:, p] = rng.permutation(sim.informative_probs)
            mean, var = prob, prob * (1.0 - prob)
            probs.append(prob)
        else:
            mean = np.full((n_subtypes, n_pairs), sim.noise_mean)
            var = np.full((n_subtypes, n_pairs), sim.noise_var)
            for p in np.sort(chosen):
                mean[:, p] = rng.permutation(sim.informative_means)
                var[:, p] = rng.permutation(sim.informative_vars)

        edge_pair = pair_lookup(n_blocks)[labels[rows], labels[cols]]
        edge_mean = mean[subtype][:, edge_pair]
        if binary:
            draws = (rng.random(edge_mean.shape) < edge_mean).astype(float)
        else:
            draws = rng.normal(edge_mean, np.sqrt(var[subtype][:, edge_pair]))
        values[:, m, rows, cols] = draws
        values[:, m, cols, rows] = draws

        block_of.append(labels + 1)
        informative.append(flags)
        means.append(mean)
        variances.append(var)

    tensor = validate_tensor(values, n_subjects, sim.n_states, n_nodes, family=sim.family)
    truth = GroundTruth(
        subtype_of=subtype + 1,
        block_of=block_of,
        informative=informative,
        true_means=means,
        true_vars=variances,
        true_probs=probs if binary else None,
    )
    logger.info("simulated N=%d, M=%d, V=%d (%s, seed %d)", n_subjects, sim.n_states, n_nodes, sim.family, sim.seed)
    return tensor, truth
