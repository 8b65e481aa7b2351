"""Reading expression-style matrices and writing run outputs."""

from __future__ import annotations

import csv
import io as _io
import json
import platform
import warnings
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .engine import RunResult
from .errors import DataError, InvalidArgumentError
from .stats_perm import Dataset


def _read_rows(path, fmt):
    delim = {"tsv": "\t", "csv": ","}.get(fmt)
    if delim is None:
        raise InvalidArgumentError(f"format must be tsv or csv, got {fmt!r}")
    # newline="" lets csv handle CRLF and LF alike
    with open(path, newline="") as fh:
        text = fh.read()
    rows = [r for r in csv.reader(_io.StringIO(text), delimiter=delim) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows


def read_labels(path) -> np.ndarray:
    vals = []
    with open(path, newline="") as fh:
        for k, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s not in ("0", "1"):
                raise DataError(f"{path}: line {k}: label must be 0 or 1, got {s!r}")
            vals.append(int(s))
    return np.array(vals, dtype=np.int8)


def ingest_matrix(path, fmt: Optional[str] = None, label_col: Optional[str] = None,
                  labels=None, sample_col: bool = False) -> Dataset:
    """Samples x hypotheses table with a header row of hypothesis names.

    Labels come from the column named ``label_col`` or from ``labels``
    (an array or a file with one 0/1 per line).  With ``sample_col`` the
    first column holds sample identifiers and is skipped.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "tsv"
    rows = _read_rows(path, fmt)
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DataError(f"{path}: header only, no samples")
    width = len(header)
    for k, r in enumerate(body, 2):
        if len(r) != width:
            raise DataError(f"{path}: row {k} has {len(r)} fields, header has {width}")
    skip = {0} if sample_col else set()
    lab = None
    if label_col is not None:
        if label_col not in header:
            raise DataError(f"{path}: label column {label_col!r} not in header")
        j = header.index(label_col)
        skip.add(j)
        try:
            lab = np.array([int(r[j].strip()) for r in body])
        except ValueError:
            raise DataError(f"{path}: label column {label_col!r} must hold 0/1 integers") from None
    elif labels is not None:
        lab = read_labels(labels) if isinstance(labels, (str, Path)) else np.asarray(labels)
    else:
        raise DataError("no labels: pass a label column or a label file")
    keep = [j for j in range(width) if j not in skip]
    mat = np.empty((len(body), len(keep)))
    for k, r in enumerate(body):
        for c, j in enumerate(keep):
            cell = r[j].strip()
            try:
                mat[k, c] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {k + 2}, column {header[j]!r}: non-numeric value {cell!r}") from None
            if not np.isfinite(mat[k, c]):
                raise DataError(f"{path}: row {k + 2}, column {header[j]!r}: non-finite value")
    if lab.size != mat.shape[0]:
        raise DataError(f"{lab.size} labels for {mat.shape[0]} samples")
    try:
        return Dataset(mat, lab, [header[j] for j in keep])
    except InvalidArgumentError as exc:
        raise DataError(str(exc)) from None


def normalize_library_size(dataset: Dataset) -> Dataset:
    """Divide each sample's counts by its total."""
    tot = dataset.matrix.sum(axis=1)
    bad = np.flatnonzero(tot <= 0)
    if bad.size:
        raise DataError(f"sample {int(bad[0])} has a nonpositive library size")
    return Dataset(dataset.matrix / tot[:, None], dataset.labels.copy(), list(dataset.names))


def filter_zero_genes(dataset: Dataset):
    """Drop columns that are zero in every sample; returns (dataset, removed names)."""
    zero = np.all(dataset.matrix == 0, axis=0)
    removed = [dataset.names[j] for j in np.flatnonzero(zero)]
    if zero.all() and zero.size:
        warnings.warn("every column is zero; the filtered dataset is empty", RuntimeWarning)
    return dataset.columns(~zero), removed


def bh_maxp_shortcut_check(active_pvalues, A_size: int, m_so_far: int,
                           alpha: float, M: int) -> bool:
    """Whether the largest active p-value passes BH at rank m_so_far + |A|.

    ``m_so_far`` counts hypotheses already rejected.  When this holds, BH on
    the current p-values rejects the whole active set.
    """
    p = np.asarray(active_pvalues, dtype=float)
    if p.size == 0 or A_size < 1:
        raise InvalidArgumentError("active set must be nonempty")
    return bool(p.max() <= (m_so_far + A_size) * alpha / M)


# -- outputs -------------------------------------------------------------------------

RESULT_COLUMNS = ("name", "tau", "p_value", "rejected", "rejection_time")


def results_table(result: RunResult, names: Sequence[str]) -> str:
    buf = _io.StringIO()
    wr = csv.writer(buf, delimiter="\t", lineterminator="\n")
    wr.writerow(RESULT_COLUMNS)
    rej = result.rejected_mask
    for i, name in enumerate(names):
        rt = result.rejection_time(i)
        wr.writerow([name, int(result.stopping_times[i]), repr(float(result.final_pvalues[i])),
                     int(rej[i]), "" if rt is None else rt])
    return buf.getvalue()


def write_results(result: RunResult, names, path) -> None:
    Path(path).write_text(results_table(result, names))


def _jsonable(x):
    if is_dataclass(x):
        d = {f.name: _jsonable(getattr(x, f.name)) for f in fields(x)}
        d["__type__"] = type(x).__name__
        return d
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def library_versions() -> dict:
    import numba
    from . import __version__
    return {"seqperm": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    config: dict
    seed: int
    duration_seconds: float
    records: List[dict]
    inputs: dict = field(default_factory=dict)
    versions: dict = field(default_factory=library_versions)

    def __post_init__(self):
        if self.duration_seconds < 0:
            raise InvalidArgumentError("duration must be nonnegative")

    @classmethod
    def build(cls, config, result: RunResult, names, duration, inputs=None):
        rej = result.rejected_mask
        records = [{"index": i, "name": names[i], "tau": int(result.stopping_times[i]),
                    "p_value": float(result.final_pvalues[i]), "rejected": bool(rej[i]),
                    "rejection_time": result.rejection_time(i)} for i in range(result.M)]
        return cls(_jsonable(config), int(getattr(config, "seed", 0)), float(duration),
                   records, dict(inputs or {}))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


__all__ = [
    "ingest_matrix", "read_labels", "normalize_library_size", "filter_zero_genes",
    "bh_maxp_shortcut_check", "results_table", "write_results", "RunManifest",
    "RESULT_COLUMNS", "library_versions",
]
