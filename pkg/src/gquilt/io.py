"""File formats: data/matrix CSVs, scheme and edge-list JSON (1-based on disk)."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .edges import EdgeSet
from .scheme import IndicatorData, ObservationScheme, PartialCovariance, SchemeError, build_scheme


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def read_data_csv(path, header: bool = False) -> IndicatorData:
    """One row per sample; an empty cell means the variable was not observed."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise SchemeError(f"{path}: no data rows")
    p = len(rows[0])
    x = np.full((len(rows), p), np.nan)
    for r, row in enumerate(rows):
        if len(row) != p:
            raise SchemeError(f"{path}: row {r + 1} has {len(row)} cells, expected {p}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell:
                try:
                    x[r, c] = float(cell)
                except ValueError as exc:
                    raise SchemeError(f"{path}: row {r + 1}, column {c + 1}: not a number ({cell!r})") from exc
    empty = np.nonzero(np.isnan(x).all(axis=0))[0]
    if empty.size:
        raise SchemeError(f"variables {(empty + 1).tolist()} are never observed")
    return IndicatorData.from_nan(x)


def read_matrix_csv(path) -> np.ndarray:
    """Square matrix; empty cells become NaN."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    p = len(rows)
    m = np.full((p, p), np.nan)
    for i, row in enumerate(rows):
        if len(row) != p:
            raise SchemeError(f"{path}: matrix must be square ({p} rows, row {i + 1} has {len(row)} cells)")
        for j, cell in enumerate(row):
            if cell.strip():
                m[i, j] = float(cell)
    return m


def write_matrix_csv(path, m: np.ndarray, mask: Optional[np.ndarray] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(np.asarray(m)):
            w.writerow(["" if (mask is not None and not mask[i, j]) or not np.isfinite(v) else _fmt(v)
                        for j, v in enumerate(row)])


def read_vector_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        vals = [c for r in csv.reader(fh) for c in r if c.strip()]
    return np.asarray([float(v) for v in vals])


def read_scheme_json(path) -> ObservationScheme:
    d = json.loads(Path(path).read_text())
    try:
        p, subsets = int(d["p"]), d["subsets"]
    except (KeyError, TypeError) as exc:
        raise SchemeError(f"{path}: scheme needs keys 'p' and 'subsets'") from exc
    return build_scheme(p, [[int(i) - 1 for i in s] for s in subsets])


def write_scheme_json(path, scheme: ObservationScheme) -> None:
    d = {"p": scheme.p, "subsets": [sorted(i + 1 for i in s) for s in scheme.subsets]}
    Path(path).write_text(json.dumps(d, indent=1) + "\n")


def write_counts_json(path, cov: PartialCovariance) -> None:
    n = cov.scheme.joint_n
    d = {"p": cov.p, "n_ij": None if n is None else n.tolist(),
         "observed": cov.mask.astype(int).tolist()}
    Path(path).write_text(json.dumps(d) + "\n")


def read_edges_json(path) -> EdgeSet:
    d = json.loads(Path(path).read_text())
    try:
        p, edges = int(d["p"]), d["edges"]
    except (KeyError, TypeError) as exc:
        raise SchemeError(f"{path}: edge list needs keys 'p' and 'edges'") from exc
    return EdgeSet.from_pairs(p, ((i - 1, j - 1) for i, j in edges))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def edges_json(edges: EdgeSet) -> dict:
    return {"p": edges.p, "edges": edges.to_list(one_based=True)}


def write_table_csv(path, rows: Sequence[dict]) -> None:
    """Tidy table; float cells use repr so reruns are byte-identical."""
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in (r.get(c, "") for c in cols)])
