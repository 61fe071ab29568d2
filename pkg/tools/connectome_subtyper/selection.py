"""Choice of per-state block counts by the variational BIC.

A candidate is a block-count vector (S_1, ..., S_M). Each candidate is fitted
with the base configuration's restarts and scored by

    VBIC = -2 E_q[log p(A | Xi)] + 2 E_q[log q(Xi)]

at its best restart; lower is better.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .cavi import FitDiagnostics, elbo_terms, fit
from .config import ModelConfig, VariationalState
from .errors import NumericalError, SubtyperError, ValidationError
from .parallel import parallel_map
from .tensor import BlockSuffStats, ConnectivityTensor, block_suffstats

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 64

Blocks = Tuple[int, ...]


def vbic(state: VariationalState,
         config: ModelConfig,
         tensor: Optional[ConnectivityTensor],
         stats: BlockSuffStats) -> float:
    """Variational BIC of a fitted state.

    Raises:
        NumericalError: if the criterion is not finite.
    """
    terms = elbo_terms(state, config, stats)
    value = -2.0 * terms.data + 2.0 * terms.expected_log_q
    if not math.isfinite(value):
        raise NumericalError("Non-finite VBIC", term='vbic')
    return value


@dataclass
class CandidateResult:
    """Outcome of fitting one block-count vector."""

    blocks: Blocks
    vbic: Optional[float] = None
    final_elbo: Optional[float] = None
    diagnostics: Optional[FitDiagnostics] = None
    error: Optional[str] = None
    state: Optional[VariationalState] = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'blocks': list(self.blocks),
            'vbic': self.vbic,
            'final_elbo': self.final_elbo,
            'diagnostics': self.diagnostics.to_dict() if self.diagnostics else None,
            'failed': self.failed,
            'error': self.error,
        }


@dataclass
class SelectionReport:
    """Every evaluated candidate and the chosen block counts."""

    candidates: List[CandidateResult]
    chosen: Blocks
    strategy: str

    def best(self) -> CandidateResult:
        return next(c for c in self.candidates if c.blocks == self.chosen)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'strategy': self.strategy,
            'chosen': list(self.chosen),
            'candidates': [c.to_dict() for c in self.candidates],
        }


def factorial_grid(values_per_state: Sequence[Sequence[int]]) -> List[Blocks]:
    """All block-count vectors of a per-state value grid, in lexicographic order."""
    return [tuple(int(s) for s in combo) for combo in itertools.product(*[sorted(set(v)) for v in values_per_state])]


def parse_blocks_grid(text: str, n_states: int) -> List[Blocks]:
    """Parse a CLI grid such as ``2:4`` (every state) or ``2:4;3`` (per state).

    A ``lo:hi`` range is inclusive; a comma list names explicit values.
    """
    parts = [p.strip() for p in text.split(';') if p.strip()]
    if not parts:
        raise ValidationError(f"Empty blocks grid '{text}'")
    if len(parts) == 1:
        parts = parts * n_states
    if len(parts) != n_states:
        raise ValidationError(f"Blocks grid '{text}' has {len(parts)} entries for {n_states} states")

    values = []
    for part in parts:
        try:
            if ':' in part:
                lo, hi = (int(x) for x in part.split(':'))
                vals = list(range(lo, hi + 1))
            else:
                vals = [int(x) for x in part.split(',')]
        except ValueError:
            raise ValidationError(f"Cannot parse blocks grid entry '{part}'")
        if not vals or min(vals) < 1:
            raise ValidationError(f"Blocks grid entry '{part}' must name counts >= 1")
        values.append(vals)
    return factorial_grid(values)


def candidate_config(base_config: ModelConfig, blocks: Blocks) -> ModelConfig:
    dir_phi = base_config.dir_phi
    if dir_phi is not None and tuple(len(row) for row in dir_phi) != blocks:
        logger.warning("dir_phi does not match blocks %s; using a flat prior", blocks)
        dir_phi = None
    return replace(base_config, blocks_per_state=blocks, dir_phi=dir_phi)


def _evaluate(job: Tuple[ConnectivityTensor, ModelConfig, Blocks]) -> Tuple[CandidateResult, Optional[SubtyperError]]:
    tensor, base_config, blocks = job
    try:
        config = candidate_config(base_config, blocks).resolved(tensor)
        state, diagnostics = fit(tensor, config)
        stats = block_suffstats(tensor, state.eta)
        score = vbic(state, config, tensor, stats)
    except SubtyperError as exc:
        logger.warning("candidate %s failed: %s", blocks, exc)
        return CandidateResult(blocks=blocks, error=str(exc)), exc
    logger.info("candidate %s: VBIC %.4f, ELBO %.4f", blocks, score, diagnostics.final_elbo)
    return CandidateResult(blocks=blocks, vbic=score, final_elbo=diagnostics.final_elbo,
                           diagnostics=diagnostics, state=state), None


def _choose(results: Sequence[CandidateResult]) -> CandidateResult:
    return min((r for r in results if not r.failed), key=lambda r: (r.vbic, r.blocks))


def select(tensor: ConnectivityTensor,
           base_config: ModelConfig,
           grid: Sequence[Sequence[int]],
           budget: int = DEFAULT_BUDGET,
           threads: int = 1,
           progress=None) -> SelectionReport:
    """Fit every candidate and keep the one with minimal VBIC.

    When the grid is larger than ``budget`` fits, the search becomes
    coordinate-wise over the per-state values present in the grid: start at
    the per-state medians, then optimize S_1, S_2, ... once each with the
    others held at their current values.

    Args:
        tensor: Validated connectivity tensor.
        base_config: Configuration shared by all candidates.
        grid: Candidate block-count vectors.
        budget: Largest number of fits run exhaustively.
        threads: Worker processes across candidates.
        progress: Optional wrapper such as ``tqdm`` (see ``parallel_map``).

    Raises:
        ValidationError: on an empty or malformed grid.
        SubtyperError: the first candidate's error, if every candidate failed.
    """
    candidates = sorted({tuple(int(s) for s in blocks) for blocks in grid})
    if not candidates:
        raise ValidationError("Model selection needs a non-empty grid")
    if any(len(c) != tensor.n_states for c in candidates):
        raise ValidationError(f"Every grid entry must name {tensor.n_states} block counts")

    results: Dict[Blocks, CandidateResult] = {}
    errors: List[SubtyperError] = []

    def run(batch: Sequence[Blocks]) -> None:
        todo = [b for b in batch if b not in results]
        jobs = [(tensor, base_config, b) for b in todo]
        for result, exc in parallel_map(_evaluate, jobs, threads, progress):
            results[result.blocks] = result
            if exc is not None:
                errors.append(exc)

    if len(candidates) <= budget:
        strategy = 'factorial'
        run(candidates)
    else:
        strategy = 'coordinate'
        values = [sorted({c[m] for c in candidates}) for m in range(tensor.n_states)]
        current = [v[(len(v) - 1) // 2] for v in values]
        logger.info("grid of %d exceeds budget %d; coordinate search from %s",
                    len(candidates), budget, tuple(current))
        for m in range(tensor.n_states):
            batch = [tuple(current[:m] + [s] + current[m + 1:]) for s in values[m]]
            run(batch)
            evaluated = [results[b] for b in batch if not results[b].failed]
            if evaluated:
                current[m] = _choose(evaluated).blocks[m]

    ordered = [results[b] for b in sorted(results)]
    if all(r.failed for r in ordered):
        raise errors[0]
    chosen = _choose(ordered)
    logger.info("selected blocks %s (VBIC %.4f)", chosen.blocks, chosen.vbic)
    return SelectionReport(candidates=ordered, chosen=chosen.blocks, strategy=strategy)
