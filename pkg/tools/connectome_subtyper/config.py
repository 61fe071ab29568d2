"""Model configuration, the variational state, and its initialization.

ModelConfig carries every prior hyperparameter and inference control.
VariationalState is the single mutable object of a fit; all its arrays are
indexed per state because block counts may differ across states.
"""

import copy
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, logit, softmax

from .errors import ValidationError
from .tensor import FAMILIES, ConnectivityTensor, n_block_pairs

ALPHA_MODES = ('learned', 'fixed')
NOISE_MODES = ('learned', 'fixed')
SELECTION_MODES = ('conditional', 'mean_field')

# Symmetric Dirichlet concentration for the initial node responsibilities.
INIT_NODE_CONCENTRATION = 5.0


@dataclass(frozen=True)
class ModelConfig:
    """Fixed model structure, priors and inference controls."""

    blocks_per_state: Tuple[int, ...]
    truncation: int = 20
    likelihood_family: Optional[str] = None
    nig_lambda: float = 1.0
    nig_a: float = 10.0
    nig_b: float = 10.0
    beta_a0: float = 1.0
    beta_b0: float = 1.0
    dir_phi: Optional[Tuple[Tuple[float, ...], ...]] = None
    gamma_prior_prob: float = 0.5
    alpha_mode: str = 'learned'
    alpha_value: float = 1.0
    alpha_prior_shape: float = 1.0
    alpha_prior_rate: float = 1.0
    noise_mode: str = 'learned'
    noise_mean: float = 0.0
    noise_var: Optional[float] = None
    noise_prob: float = 0.5
    selection_mode: str = 'conditional'
    selection_warmup: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    n_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'blocks_per_state', tuple(int(s) for s in self.blocks_per_state))
        if self.dir_phi is not None:
            object.__setattr__(self, 'dir_phi', tuple(tuple(float(x) for x in row) for row in self.dir_phi))
        self._validate()

    def _validate(self):
        if not self.blocks_per_state:
            raise ValidationError("'blocks_per_state' must name at least one state")
        if any(s < 1 for s in self.blocks_per_state):
            raise ValidationError(f"Every block count must be >= 1, got {self.blocks_per_state}")
        if self.truncation < 1:
            raise ValidationError(f"'truncation' must be >= 1, got {self.truncation}")
        if self.likelihood_family is not None and self.likelihood_family not in FAMILIES:
            raise ValidationError(f"Unknown likelihood family '{self.likelihood_family}'")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValidationError(f"'alpha_mode' must be one of {ALPHA_MODES}, got '{self.alpha_mode}'")
        if self.noise_mode not in NOISE_MODES:
            raise ValidationError(f"'noise_mode' must be one of {NOISE_MODES}, got '{self.noise_mode}'")
        if self.selection_mode not in SELECTION_MODES:
            raise ValidationError(f"'selection_mode' must be one of {SELECTION_MODES}, got '{self.selection_mode}'")
        if self.selection_warmup < 0:
            raise ValidationError(f"'selection_warmup' must be >= 0, got {self.selection_warmup}")
        for name in ('nig_lambda', 'nig_a', 'nig_b', 'beta_a0', 'beta_b0', 'alpha_value',
                     'alpha_prior_shape', 'alpha_prior_rate', 'tol'):
            if not getattr(self, name) > 0:
                raise ValidationError(f"'{name}' must be positive, got {getattr(self, name)}")
        for name in ('gamma_prior_prob', 'noise_prob'):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValidationError(f"'{name}' must lie strictly between 0 and 1")
        if self.noise_var is not None and not self.noise_var > 0:
            raise ValidationError(f"'noise_var' must be positive, got {self.noise_var}")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ValidationError("'max_iter' and 'n_restarts' must be >= 1")
        if self.dir_phi is not None:
            if len(self.dir_phi) != self.n_states:
                raise ValidationError(f"'dir_phi' has {len(self.dir_phi)} rows for {self.n_states} states")
            for m, (row, n_blocks) in enumerate(zip(self.dir_phi, self.blocks_per_state)):
                if len(row) != n_blocks or any(x <= 0 for x in row):
                    raise ValidationError(f"'dir_phi' row {m} must hold {n_blocks} positive values")

    @property
    def n_states(self) -> int:
        return len(self.blocks_per_state)

    def phi(self, state: int) -> np.ndarray:
        """Dirichlet prior of the node-allocation probabilities of one state."""
        if self.dir_phi is None:
            return np.ones(self.blocks_per_state[state])
        return np.asarray(self.dir_phi[state], dtype=float)

    def resolved(self, tensor: ConnectivityTensor) -> 'ModelConfig':
        """Fill data-dependent defaults and check the config against a tensor.

        The likelihood family is taken from the tensor; the noise variance
        defaults to twice the pooled variance of all off-diagonal edges.
        """
        if self.n_states != tensor.n_states:
            raise ValidationError(
                f"Config names {self.n_states} states (blocks {self.blocks_per_state}), "
                f"data has {tensor.n_states}"
            )
        if self.likelihood_family is not None and self.likelihood_family != tensor.family:
            raise ValidationError(
                f"Config asks for the {self.likelihood_family} family, data is {tensor.family}"
            )
        if tensor.n_nodes < 2:
            raise ValidationError("Networks need at least two nodes")
        updates: Dict[str, Any] = {'likelihood_family': tensor.family}
        if self.noise_var is None:
            pooled = float(np.var(tensor.upper_edges()))
            updates['noise_var'] = 2.0 * pooled if pooled > 0 else 1.0
        return replace(self, **updates)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['blocks_per_state'] = list(self.blocks_per_state)
        if self.dir_phi is not None:
            data['dir_phi'] = [list(row) for row in self.dir_phi]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown model config keys: {sorted(unknown)}")
        if 'blocks_per_state' not in data:
            raise ValidationError("Model config is missing 'blocks_per_state'")
        return cls(**data)


@dataclass
class VariationalState:
    """Every variational parameter of a fit.

    Per-state lists hold arrays with a block-pair axis of length
    P_m = S_m (S_m + 1) / 2. Continuous fits use ``u, r, g, h`` (shape (D, P_m));
    binary fits use ``j, k``. With a learned noise component the matching
    ``u0, r0, g0, h0`` or ``j0, k0`` (shape (P_m,)) are set as well.
    """

    t: List[np.ndarray]
    eta: List[np.ndarray]
    e: np.ndarray
    f: np.ndarray
    b: np.ndarray
    zeta: List[np.ndarray]
    alpha_shape: float
    alpha_rate: float
    u: Optional[List[np.ndarray]] = None
    r: Optional[List[np.ndarray]] = None
    g: Optional[List[np.ndarray]] = None
    h: Optional[List[np.ndarray]] = None
    j: Optional[List[np.ndarray]] = None
    k: Optional[List[np.ndarray]] = None
    u0: Optional[List[np.ndarray]] = None
    r0: Optional[List[np.ndarray]] = None
    g0: Optional[List[np.ndarray]] = None
    h0: Optional[List[np.ndarray]] = None
    j0: Optional[List[np.ndarray]] = None
    k0: Optional[List[np.ndarray]] = None
    elbo_trace: List[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return self.b.shape[1]

    def responsibilities(self) -> np.ndarray:
        """Cluster responsibilities r_{id}: row-wise softmax of b."""
        return softmax(self.b, axis=1)

    def selection_prob(self, state: int) -> np.ndarray:
        """q(gamma = 1) for every block pair of one state."""
        return expit(self.zeta[state])

    def copy(self) -> 'VariationalState':
        return copy.deepcopy(self)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, list) and value and isinstance(value[0], np.ndarray):
                data[f.name] = [arr.tolist() for arr in value]
            elif isinstance(value, np.ndarray):
                data[f.name] = value.tolist()
            elif isinstance(value, list):
                data[f.name] = [float(x) for x in value]
            else:
                data[f.name] = float(value)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'VariationalState':
        per_state = ('t', 'eta', 'zeta', 'u', 'r', 'g', 'h', 'j', 'k', 'u0', 'r0', 'g0', 'h0', 'j0', 'k0')
        kwargs: Dict[str, Any] = {}
        for name in per_state:
            if name in data:
                kwargs[name] = [np.asarray(x, dtype=float) for x in data[name]]
        for name in ('e', 'f', 'b'):
            kwargs[name] = np.asarray(data[name], dtype=float)
        kwargs['alpha_shape'] = float(data['alpha_shape'])
        kwargs['alpha_rate'] = float(data['alpha_rate'])
        kwargs['elbo_trace'] = [float(x) for x in data.get('elbo_trace', [])]
        return cls(**kwargs)


def init_state(config: ModelConfig, tensor: ConnectivityTensor, seed: int) -> VariationalState:
    """Random initial state for one restart, deterministic given ``seed``.

    Node responsibilities are drawn from a symmetric Dirichlet(5), cluster
    logits are standard normal, and every other factor starts at its prior.
    """
    if config.n_states != tensor.n_states:
        raise ValidationError(
            f"Config names {config.n_states} states, data has {tensor.n_states}"
        )
    family = config.likelihood_family or tensor.family
    rng = np.random.default_rng(seed)
    n_clusters = config.truncation
    n_nodes = tensor.n_nodes

    eta = [rng.dirichlet(np.full(s, INIT_NODE_CONCENTRATION), size=n_nodes) for s in config.blocks_per_state]
    b = rng.standard_normal((tensor.n_subjects, n_clusters))
    t = [config.phi(m) + eta[m].sum(axis=0) for m in range(config.n_states)]
    pairs = [n_block_pairs(s) for s in config.blocks_per_state]

    if config.alpha_mode == 'learned':
        alpha_shape, alpha_rate = config.alpha_prior_shape, config.alpha_prior_rate
    else:
        alpha_shape, alpha_rate = config.alpha_value, 1.0

    state = VariationalState(
        t=t,
        eta=eta,
        e=np.ones(n_clusters - 1),
        f=np.ones(n_clusters - 1),
        b=b,
        zeta=[np.full(p, float(logit(config.gamma_prior_prob))) for p in pairs],
        alpha_shape=alpha_shape,
        alpha_rate=alpha_rate,
    )

    def full(shape, value):
        return np.full(shape, float(value))

    if family == 'continuous':
        state.u = [full((n_clusters, p), 0.0) for p in pairs]
        state.r = [full((n_clusters, p), config.nig_lambda) for p in pairs]
        state.g = [full((n_clusters, p), config.nig_a) for p in pairs]
        state.h = [full((n_clusters, p), config.nig_b) for p in pairs]
        if config.noise_mode == 'learned':
            state.u0 = [full(p, config.noise_mean) for p in pairs]
            state.r0 = [full(p, config.nig_lambda) for p in pairs]
            state.g0 = [full(p, config.nig_a) for p in pairs]
            state.h0 = [full(p, config.nig_b) for p in pairs]
    else:
        state.j = [full((n_clusters, p), config.beta_a0) for p in pairs]
        state.k = [full((n_clusters, p), config.beta_b0) for p in pairs]
        if config.noise_mode == 'learned':
            state.j0 = [full(p, config.beta_a0) for p in pairs]
            state.k0 = [full(p, config.beta_b0) for p in pairs]
    return state
