"""Training-data file contract.

Per-DGP CSV files shared with the downstream trainer:

  queries_{id}.csv          query_id, x_0..x_{d-1}, a
  frontier_points_{id}.csv  query_id, bound_type, gamma_star, theta_star
  dataset_{id}.csv          x_0..x_{d-1}, a, y

Column orders are fixed and checked strictly on load.  Reals are rendered
with 17 significant digits so emit/load round-trips are bit-exact; any
non-finite value is rejected with the offending line number.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prior import Dataset, QueryPoint


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


_BOUND_TYPES = ("lower", "upper")


@dataclass(frozen=True)
class LabelRecord:
    query_id: int
    bound_type: str
    gamma_star: float
    theta_star: float

    def __post_init__(self):
        if self.bound_type not in _BOUND_TYPES:
            raise ValueError(f"bound_type must be one of {_BOUND_TYPES}")
        if not (math.isfinite(self.gamma_star) and math.isfinite(self.theta_star)):
            raise ValueError("label values must be finite")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _open_for_write(path: Path, overwrite: bool):
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite=True to replace it")
    return open(path, "w", newline="")


def queries_path(out_dir, dgp_id: int) -> Path:
    return Path(out_dir) / f"queries_{dgp_id}.csv"


def frontier_path(out_dir, dgp_id: int) -> Path:
    return Path(out_dir) / f"frontier_points_{dgp_id}.csv"


def dataset_path(out_dir, dgp_id: int) -> Path:
    return Path(out_dir) / f"dataset_{dgp_id}.csv"


def emit_queries(out_dir, dgp_id: int, queries, overwrite: bool = False) -> Path:
    """Write queries_{id}.csv; one row per (query_id, x, a)."""
    path = queries_path(out_dir, dgp_id)
    d_x = len(queries[0].x) if queries else 0
    header = ["query_id"] + [f"x_{i}" for i in range(d_x)] + ["a"]
    with _open_for_write(path, overwrite) as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for q in queries:
            wr.writerow([q.query_id] + [_fmt(v) for v in q.x] + [int(q.a)])
    return path


def emit_frontier_points(out_dir, dgp_id: int, records, overwrite: bool = False) -> Path:
    """Write frontier_points_{id}.csv; one row per LabelRecord."""
    path = frontier_path(out_dir, dgp_id)
    with _open_for_write(path, overwrite) as fh:
        wr = csv.writer(fh)
        wr.writerow(["query_id", "bound_type", "gamma_star", "theta_star"])
        for r in records:
            wr.writerow([r.query_id, r.bound_type, _fmt(r.gamma_star),
                         _fmt(r.theta_star)])
    return path


def emit_dataset(out_dir, dgp_id: int, dataset: Dataset, overwrite: bool = False) -> Path:
    """Write dataset_{id}.csv with the observational rows (context for the trainer)."""
    path = dataset_path(out_dir, dgp_id)
    d_x = dataset.x.shape[1]
    header = [f"x_{i}" for i in range(d_x)] + ["a", "y"]
    with _open_for_write(path, overwrite) as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(len(dataset)):
            wr.writerow([_fmt(v) for v in dataset.x[i]]
                        + [int(dataset.a[i]), _fmt(dataset.y[i])])
    return path


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return rows


def _check_header(path, got, expected):
    if got != expected:
        raise SchemaError(f"{path}: header {got} does not match expected {expected}")


def _parse_float(token: str, path, lineno: int, column: str) -> float:
    try:
        v = float(token)
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: bad {column} value {token!r}") from exc
    if not math.isfinite(v):
        raise ParseError(f"{path}:{lineno}: non-finite {column} value {token!r}")
    return v


def load_queries(path) -> list:
    """Parse queries_{id}.csv back into QueryPoints."""
    path = Path(path)
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 3 or header[0] != "query_id" or header[-1] != "a":
        raise SchemaError(f"{path}: header {header} is not a queries header")
    d_x = len(header) - 2
    _check_header(path, header,
                  ["query_id"] + [f"x_{i}" for i in range(d_x)] + ["a"])
    queries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, "
                             f"got {len(row)}")
        try:
            qid = int(row[0])
            a = int(row[-1])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad integer field") from exc
        if a not in (0, 1):
            raise ParseError(f"{path}:{lineno}: treatment arm must be 0 or 1")
        x = np.array([_parse_float(t, path, lineno, f"x_{i}")
                      for i, t in enumerate(row[1:-1])])
        queries.append(QueryPoint(query_id=qid, x=x, a=a))
    return queries


def load_frontier_points(path) -> list:
    """Parse frontier_points_{id}.csv back into LabelRecords."""
    path = Path(path)
    rows = _read_rows(path)
    _check_header(path, rows[0],
                  ["query_id", "bound_type", "gamma_star", "theta_star"])
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            qid = int(row[0])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad query_id") from exc
        if row[1] not in _BOUND_TYPES:
            raise ParseError(f"{path}:{lineno}: bad bound_type {row[1]!r}")
        gamma = _parse_float(row[2], path, lineno, "gamma_star")
        theta = _parse_float(row[3], path, lineno, "theta_star")
        records.append(LabelRecord(query_id=qid, bound_type=row[1],
                                   gamma_star=gamma, theta_star=theta))
    return records


def load_dataset(path, scm_seed: int = -1) -> Dataset:
    """Parse dataset_{id}.csv back into a Dataset."""
    path = Path(path)
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 3 or header[-2:] != ["a", "y"]:
        raise SchemaError(f"{path}: header {header} is not a dataset header")
    d_x = len(header) - 2
    _check_header(path, header, [f"x_{i}" for i in range(d_x)] + ["a", "y"])
    xs, as_, ys = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
        xs.append([_parse_float(t, path, lineno, f"x_{i}")
                   for i, t in enumerate(row[:-2])])
        try:
            a = int(row[-2])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad treatment arm") from exc
        if a not in (0, 1):
            raise ParseError(f"{path}:{lineno}: treatment arm must be 0 or 1")
        as_.append(a)
        ys.append(_parse_float(row[-1], path, lineno, "y"))
    return Dataset(x=np.array(xs), a=np.array(as_), y=np.array(ys),
                   scm_seed=scm_seed)
