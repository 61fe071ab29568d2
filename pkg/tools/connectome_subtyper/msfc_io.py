"""On-disk formats: the MSFC tensor container and the JSON documents.

MSFC layout (all integers little-endian)::

    b'MSFC' | uint32 meta length | UTF-8 meta JSON | payload

The payload holds N*M*V*V entries in subject, state, row, column order:
float64 for continuous tensors, one unsigned byte per entry for binary ones.
Full symmetric matrices are stored so symmetry can be checked on read.

JSON documents (fit, truth, metrics, reports) are written atomically via a
temporary file and ``os.replace``. Floats are written with Python's shortest
round-trip repr, so every float64 survives a save/load cycle exactly.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from .cavi import FitDiagnostics
from .config import ModelConfig, VariationalState
from .errors import SchemaError, ValidationError
from .simulator import GroundTruth, SimConfig
from .summary import FitSummary, summarize
from .tensor import ConnectivityTensor, n_block_pairs, validate_tensor

PathLike = Union[str, Path]

MAGIC = b'MSFC'
FORMAT_VERSION = 1
HEADER = struct.Struct('<4sI')
TENSOR_FILE = 'tensor.msfc'
TRUTH_FILE = 'truth.json'
FIT_FORMAT = 'connectome-subtyper-fit'

SCHEMA_DIR = Path(__file__).resolve().parents[2] / 'schemas'


@lru_cache(maxsize=None)
def load_schema(name: str) -> Dict[str, Any]:
    """Load ``schemas/<name>.schema.json``."""
    with open(SCHEMA_DIR / f'{name}.schema.json', 'r', encoding='utf-8') as f:
        return json.load(f)


def _error_location(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == 'required' and isinstance(error.instance, dict):
        missing = [key for key in error.validator_value if key not in error.instance]
        if missing:
            parts.append(missing[0])
    return '.'.join(parts) or '<root>'


def check_document(document: Any, schema_name: str) -> None:
    """Validate a JSON document against one of the bundled schemas.

    Raises:
        SchemaError: located at the dotted path of the most relevant failure.
    """
    error = best_match(Draft7Validator(load_schema(schema_name)).iter_errors(document))
    if error is not None:
        raise SchemaError(f"{schema_name} document: {error.message}", location=_error_location(error))


def save_json_atomic(document: Any, path: PathLike) -> None:
    """Write JSON through a temporary sibling file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2, allow_nan=False)
            f.write('\n')
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_bytes_atomic(data: bytes, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_json(path: PathLike) -> Any:
    """Read a JSON file, turning syntax errors into ValidationError."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Invalid JSON in {path}: {e.msg}", location=f"line {e.lineno}")
    except OSError as e:
        raise ValidationError(f"Cannot read {path}: {e.strerror}")


# ---------------------------------------------------------------------------
# MSFC container
# ---------------------------------------------------------------------------

def _payload_dtype(family: str) -> np.dtype:
    return np.dtype('<u1') if family == 'binary' else np.dtype('<f8')


def write_msfc(tensor: ConnectivityTensor, path: PathLike) -> None:
    """Write a tensor as an MSFC container."""
    meta = {
        'format_version': FORMAT_VERSION,
        'n_subjects': tensor.n_subjects,
        'n_states': tensor.n_states,
        'n_nodes': tensor.n_nodes,
        'family': tensor.family,
        'state_names': list(tensor.state_names),
        'endianness': 'little',
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode('utf-8')
    payload = np.ascontiguousarray(tensor.values).astype(_payload_dtype(tensor.family)).tobytes()
    _write_bytes_atomic(HEADER.pack(MAGIC, len(meta_bytes)) + meta_bytes + payload, path)


def read_msfc(path: PathLike) -> ConnectivityTensor:
    """Read and validate an MSFC container.

    Raises:
        ValidationError: on a bad magic number or version, a meta document that
            does not match its schema, a payload of the wrong length, or
            tensor values that fail ``validate_tensor``.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ValidationError(f"Cannot read {path}: {e.strerror}")
    if len(data) < HEADER.size:
        raise ValidationError(f"{path} is too short for an MSFC header ({len(data)} bytes)")

    magic, meta_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path} is not an MSFC container (magic {magic!r})")
    meta_end = HEADER.size + meta_len
    if len(data) < meta_end:
        raise ValidationError(f"{path} ends inside the meta document")
    try:
        meta = json.loads(data[HEADER.size:meta_end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"{path}: unreadable meta document ({e})")
    if isinstance(meta, dict) and meta.get('format_version') != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported format_version {meta.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    check_document(meta, 'msfc-meta')

    n_subjects, n_states, n_nodes = meta['n_subjects'], meta['n_states'], meta['n_nodes']
    dtype = _payload_dtype(meta['family'])
    expected = n_subjects * n_states * n_nodes * n_nodes * dtype.itemsize
    payload = data[meta_end:]
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: payload has {len(payload)} bytes, expected {expected} "
            f"for N={n_subjects}, M={n_states}, V={n_nodes} ({meta['family']})"
        )
    values = np.frombuffer(payload, dtype=dtype).astype(float)
    return validate_tensor(values, n_subjects, n_states, n_nodes,
                           family=meta['family'], state_names=meta['state_names'])


def tensor_path(data: PathLike) -> Path:
    """Resolve a data directory (or a container file) to the container path."""
    data = Path(data)
    return data / TENSOR_FILE if data.is_dir() else data


def read_data(data: PathLike) -> ConnectivityTensor:
    return read_msfc(tensor_path(data))


def import_csv(paths: Sequence[Sequence[PathLike]],
               family: str = 'continuous',
               state_names: Optional[Sequence[str]] = None) -> ConnectivityTensor:
    """Build a tensor from one headerless V x V CSV matrix per subject and state.

    Args:
        paths: ``paths[i][m]`` is the matrix of subject i in state m.
        family: Likelihood family of the values.
        state_names: Optional state labels.
    """
    if not paths or not paths[0]:
        raise ValidationError("import_csv needs at least one subject and one state")
    n_states = len(paths[0])
    matrices = []
    for i, row in enumerate(paths):
        if len(row) != n_states:
            raise ValidationError(f"Subject {i} lists {len(row)} files, expected {n_states}")
        for m, csv_path in enumerate(row):
            try:
                frame = pd.read_csv(csv_path, header=None)
            except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
                raise ValidationError(f"Cannot read matrix {csv_path}: {e}", location=(i, m))
            matrix = frame.to_numpy(dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValidationError(f"{csv_path} holds a {matrix.shape} table, expected a square matrix",
                                      location=(i, m))
            if matrices and matrix.shape != matrices[0].shape:
                raise ValidationError(f"{csv_path} is {matrix.shape}, expected {matrices[0].shape}",
                                      location=(i, m))
            matrices.append(matrix)
    n_nodes = matrices[0].shape[0]
    return validate_tensor(np.stack(matrices), len(paths), n_states, n_nodes,
                           family=family, state_names=state_names)


def read_manifest(path: PathLike) -> Dict[str, Any]:
    """Read a CSV manifest with columns ``subject, state, path``.

    Relative matrix paths resolve against the manifest's directory. Subjects
    keep their first-appearance order; states likewise.

    Returns:
        ``{'paths': [[...], ...], 'state_names': [...]}`` for ``import_csv``.
    """
    base = Path(path).parent
    try:
        frame = pd.read_csv(path, dtype=str)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ValidationError(f"Cannot read manifest {path}: {e}")
    missing = {'subject', 'state', 'path'} - set(frame.columns)
    if missing:
        raise ValidationError(f"Manifest {path} lacks columns {sorted(missing)}")
    if frame.duplicated(['subject', 'state']).any():
        raise ValidationError(f"Manifest {path} lists a (subject, state) twice")

    subjects = list(dict.fromkeys(frame['subject']))
    states = list(dict.fromkeys(frame['state']))
    grid = frame.pivot(index='subject', columns='state', values='path').reindex(index=subjects, columns=states)
    if grid.isna().any().any():
        raise ValidationError(f"Manifest {path} does not list every subject in every state")
    paths = [[str(base / p) for p in row] for row in grid.itertuples(index=False)]
    return {'paths': paths, 'state_names': states}


# ---------------------------------------------------------------------------
# Truth and fit documents
# ---------------------------------------------------------------------------

def save_truth(truth: GroundTruth, path: PathLike, sim: Optional[SimConfig] = None) -> None:
    document = truth.to_dict()
    if sim is not None:
        document['simulation'] = sim.to_dict()
    save_json_atomic(document, path)


def load_truth(path: PathLike) -> GroundTruth:
    document = load_json(path)
    check_document(document, 'truth')
    return GroundTruth.from_dict(document)


@dataclass
class FitResult:
    """Everything persisted for one fit. ``summary`` is derived from ``state``."""

    state: VariationalState
    config: ModelConfig
    diagnostics: FitDiagnostics
    summary: FitSummary
    data: Optional[Dict[str, Any]] = None


def tensor_info(tensor: ConnectivityTensor) -> Dict[str, Any]:
    return {
        'n_subjects': tensor.n_subjects,
        'n_states': tensor.n_states,
        'n_nodes': tensor.n_nodes,
        'family': tensor.family,
        'state_names': list(tensor.state_names),
    }


def save_fit(result: FitResult, path: PathLike) -> None:
    document = {
        'format': FIT_FORMAT,
        'format_version': FORMAT_VERSION,
        'config': result.config.to_dict(),
        'state': result.state.to_dict(),
        'diagnostics': result.diagnostics.to_dict(),
        'summary': result.summary.to_dict(),
    }
    if result.data is not None:
        document['data'] = result.data
    save_json_atomic(document, path)


def _check_fit_dims(state: VariationalState, config: ModelConfig) -> None:
    if len(state.eta) != config.n_states or len(state.zeta) != config.n_states:
        raise SchemaError(f"State covers {len(state.eta)} states, config names {config.n_states}", location='state')
    for m, n_blocks in enumerate(config.blocks_per_state):
        if state.eta[m].ndim != 2 or state.eta[m].shape[1] != n_blocks:
            raise SchemaError(f"eta of state {m} does not have {n_blocks} columns", location=f'state.eta.{m}')
        if state.zeta[m].shape != (n_block_pairs(n_blocks),):
            raise SchemaError(f"zeta of state {m} does not cover {n_block_pairs(n_blocks)} block pairs",
                              location=f'state.zeta.{m}')
    if state.b.ndim != 2 or state.b.shape[1] != config.truncation:
        raise SchemaError(f"b does not have {config.truncation} columns", location='state.b')
    family = config.likelihood_family
    needed = ('u', 'r', 'g', 'h') if family == 'continuous' else ('j', 'k')
    for name in needed:
        if getattr(state, name) is None:
            raise SchemaError(f"{family} fit lacks '{name}'", location=f'state.{name}')


def load_fit(path: PathLike) -> FitResult:
    """Load a fit document and recompute its summary from the stored state.

    Raises:
        SchemaError: with the dotted path of the offending field.
    """
    document = load_json(path)
    check_document(document, 'fit-document')
    config = ModelConfig.from_dict(document['config'])
    state = VariationalState.from_dict(document['state'])
    _check_fit_dims(state, config)
    return FitResult(
        state=state,
        config=config,
        diagnostics=FitDiagnostics.from_dict(document['diagnostics']),
        summary=summarize(state, config),
        data=document.get('data'),
    )
