"""CSV readers and writers for panels, covariances, weights and paths.

Every writer produces deterministic text: fixed column order, ``repr``-exact
floats and no timestamps, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .core import AllocationVector, CovarianceEstimate, ReturnPanel
from .lars import SolutionPath


class DataFormatError(ValueError):
    """A file could not be parsed; the message names the file and line."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            rows.append((lineno, [c.strip() for c in row]))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return rows


def _floats(path, lineno: int, cells: Sequence[str]) -> list[float]:
    try:
        vals = [float(c) for c in cells]
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not np.all(np.isfinite(vals)):
        raise DataFormatError(f"{path}:{lineno}: non-finite value")
    return vals


# --------------------------------------------------------------------------
# return panels: header ``date,<id_1>,...,<id_p>``


def write_panel(panel: ReturnPanel, path) -> None:
    ids = panel.asset_ids
    index = panel.index or tuple(str(t) for t in range(panel.n_periods))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *ids])
        for label, row in zip(index, panel.returns):
            w.writerow([label, *(_fmt(x) for x in row)])


def read_panel(path, periods_per_year: int = 252) -> ReturnPanel:
    rows = _read_rows(path)
    (_, header), body = rows[0], rows[1:]
    if len(header) < 2 or header[0].lower() != "date":
        raise DataFormatError(f"{path}:{rows[0][0]}: header must start with 'date'")
    p = len(header) - 1
    dates, data = [], []
    for lineno, row in body:
        if len(row) != p + 1:
            raise DataFormatError(f"{path}:{lineno}: expected {p + 1} cells, found {len(row)}")
        dates.append(row[0])
        data.append(_floats(path, lineno, row[1:]))
    if len(data) < 2:
        raise DataFormatError(f"{path}: a panel needs at least 2 periods")
    try:
        return ReturnPanel(np.array(data), tuple(header[1:]), periods_per_year, tuple(dates))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# labeled square matrices: header ``,<id_1>,...``, then ``<id_i>,row``


def write_covariance(sigma: CovarianceEstimate, path) -> None:
    p = sigma.n_assets
    ids = sigma.asset_ids or tuple(f"A{i}" for i in range(p))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *ids])
        for i, label in enumerate(ids):
            w.writerow([label, *(_fmt(x) for x in sigma.matrix[i])])


def read_covariance(path) -> CovarianceEstimate:
    rows = _read_rows(path)
    (hline, header), body = rows[0], rows[1:]
    ids = tuple(header[1:])
    p = len(ids)
    if p == 0 or len(body) != p:
        raise DataFormatError(
            f"{path}:{hline}: matrix must be square ({p} column labels, {len(body)} rows)")
    m = np.empty((p, p))
    for i, (lineno, row) in enumerate(body):
        if len(row) != p + 1:
            raise DataFormatError(f"{path}:{lineno}: expected {p + 1} cells, found {len(row)}")
        if row[0] != ids[i]:
            raise DataFormatError(f"{path}:{lineno}: row label {row[0]!r} != column {ids[i]!r}")
        m[i] = _floats(path, lineno, row[1:])
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-14):
        raise DataFormatError(f"{path}: matrix is not symmetric")
    try:
        return CovarianceEstimate(m, "exogenous", ids)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def read_matrix(path) -> tuple[np.ndarray, np.ndarray]:
    """Equality constraints file: rows ``a_1..a_p,rhs`` with an optional header."""
    rows = _read_rows(path)
    first = rows[0][1]
    try:
        [float(c) for c in first]
    except ValueError:
        rows = rows[1:]
    data = np.array([_floats(path, n, r) for n, r in rows])
    if data.ndim != 2 or data.shape[1] < 2:
        raise DataFormatError(f"{path}: constraint rows need p coefficients and a right-hand side")
    return data[:, :-1], data[:, -1]


# --------------------------------------------------------------------------
# weights


def write_weights(alloc: AllocationVector, path, comments: Iterable[str] = ()) -> None:
    ids = alloc.asset_ids or tuple(f"A{i}" for i in range(alloc.n_assets))
    with open(path, "w", newline="") as fh:
        fh.write(f"# gross_exposure={_fmt(alloc.gross_exposure)}\n")
        fh.write(f"# n_long={alloc.n_long}\n# n_short={alloc.n_short}\n")
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset", "weight"])
        for label, x in zip(ids, alloc.weights):
            w.writerow([label, _fmt(x)])


def read_weights(path) -> AllocationVector:
    rows = _read_rows(path)
    if rows[0][1][:2] == ["asset", "weight"]:
        rows = rows[1:]
    ids, vals = [], []
    for lineno, row in rows:
        if len(row) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'asset,weight'")
        ids.append(row[0])
        vals.extend(_floats(path, lineno, row[1:]))
    try:
        return AllocationVector(np.array(vals), tuple(ids))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# solution paths and generic tables


def write_path(path_obj: SolutionPath, path) -> None:
    """One row per knot: d, implied_c, empirical_variance, then index:weight pairs."""
    labels = path_obj.problem.labels
    with open(path, "w", newline="") as fh:
        fh.write(f"# {path_obj.problem.provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "implied_c", "empirical_variance", "event", "weights"])
        for k in path_obj.knots:
            nz = np.flatnonzero(k.w_star)
            pairs = " ".join(f"{labels[j] if labels else j}:{_fmt(k.w_star[j])}" for j in nz)
            w.writerow([_fmt(k.d), _fmt(k.implied_c), _fmt(k.empirical_variance), k.event, pairs])


def write_table(rows: Sequence[dict], path, columns: Sequence[str] | None = None) -> None:
    cols = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) if isinstance(r[c], (float, np.floating)) else r[c]
                        for c in cols])


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def write_manifest(path, command: str, inputs: dict, parameters: dict,
                   outputs: Sequence[str], seed: int | None = None) -> None:
    """JSON record of a run, without timestamps so reruns compare equal."""
    doc = {
        "tool": "gross-exposure",
        "version": __version__,
        "command": command,
        "seed": seed,
        "inputs": {k: str(v) for k, v in sorted(inputs.items())},
        "parameters": parameters,
        "outputs": sorted(Path(o).name for o in outputs),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
