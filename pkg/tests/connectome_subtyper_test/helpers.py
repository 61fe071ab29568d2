"""Shared builders for small random instances used across the test modules."""

from typing import Callable, Optional, Sequence

import numpy as np

from tools.connectome_subtyper.config import ModelConfig, VariationalState, init_state
from tools.connectome_subtyper.tensor import ConnectivityTensor, validate_tensor


def random_tensor(rng: np.random.Generator,
                  n_subjects: int = 4,
                  n_states: int = 1,
                  n_nodes: int = 5,
                  family: str = 'continuous') -> ConnectivityTensor:
    """Symmetric random tensor with a zero diagonal."""
    shape = (n_subjects, n_states, n_nodes, n_nodes)
    if family == 'binary':
        raw = rng.integers(0, 2, size=shape).astype(float)
    else:
        raw = rng.normal(0.0, 1.5, size=shape)
    upper = np.triu(raw, k=1)
    values = upper + np.swapaxes(upper, 2, 3)
    return validate_tensor(values, n_subjects, n_states, n_nodes, family=family)


def random_state(config: ModelConfig,
                 tensor: ConnectivityTensor,
                 rng: np.random.Generator) -> VariationalState:
    """A valid but arbitrary variational state (not the output of any update)."""
    state = init_state(config, tensor, seed=int(rng.integers(0, 2 ** 31)))
    n_clusters = config.truncation
    state.eta = [rng.dirichlet(np.ones(s), size=tensor.n_nodes) for s in config.blocks_per_state]
    state.b = rng.normal(0.0, 1.0, size=(tensor.n_subjects, n_clusters))
    state.zeta = [rng.normal(0.0, 1.0, size=z.shape) for z in state.zeta]
    state.t = [rng.uniform(0.5, 4.0, size=t.shape) for t in state.t]
    state.e = rng.uniform(0.5, 3.0, size=n_clusters - 1)
    state.f = rng.uniform(0.5, 3.0, size=n_clusters - 1)
    if config.alpha_mode == 'learned':
        state.alpha_shape = float(rng.uniform(1.0, 4.0))
        state.alpha_rate = float(rng.uniform(0.5, 3.0))

    def positive(arrays):
        return [rng.uniform(0.5, 5.0, size=a.shape) for a in arrays]

    if state.u is not None:
        state.u = [rng.normal(0.0, 1.0, size=u.shape) for u in state.u]
        state.r, state.g, state.h = positive(state.r), positive(state.g), positive(state.h)
        if state.u0 is not None:
            state.u0 = [rng.normal(0.0, 1.0, size=u.shape) for u in state.u0]
            state.r0, state.g0, state.h0 = positive(state.r0), positive(state.g0), positive(state.h0)
    else:
        state.j, state.k = positive(state.j), positive(state.k)
        if state.j0 is not None:
            state.j0, state.k0 = positive(state.j0), positive(state.k0)
    return state


def central_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up = x.copy()
        down = x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (func(up) - func(down)) / (2.0 * step)
    return grad


def small_config(blocks: Sequence[int] = (2,),
                 truncation: int = 3,
                 tensor: Optional[ConnectivityTensor] = None,
                 **overrides) -> ModelConfig:
    config = ModelConfig(blocks_per_state=tuple(blocks), truncation=truncation, **overrides)
    return config.resolved(tensor) if tensor is not None else config
