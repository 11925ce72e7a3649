"""Readers for the label-file contract and batch assembly.

The trainer touches the upstream engine only through its emitted CSV
files: per DGP id, dataset_{id}.csv (context rows), queries_{id}.csv, and
frontier_points_{id}.csv.  A token sequence is N context rows
(x, a, y, NaN) followed by query rows (x, a, NaN, Γ); the split position
is N.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class DgpRecords:
    dgp_id: int
    x_context: np.ndarray       # (n_obs, d_x)
    a_context: np.ndarray
    y_context: np.ndarray
    query_x: dict               # query_id -> (d_x,) covariates
    query_a: dict               # query_id -> arm
    labels: dict                # query_id -> {"gamma", "lower", "upper"} arrays

    @property
    def d_x(self) -> int:
        return self.x_context.shape[1]

    @property
    def query_ids(self) -> list:
        return sorted(self.labels)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def load_dgp(data_dir, dgp_id: int) -> DgpRecords:
    data_dir = Path(data_dir)
    header, rows = _read_csv(data_dir / f"dataset_{dgp_id}.csv")
    d_x = len(header) - 2
    arr = np.array(rows, dtype=float)
    x_ctx, a_ctx, y_ctx = arr[:, :d_x], arr[:, d_x].astype(int), arr[:, d_x + 1]

    header, rows = _read_csv(data_dir / f"queries_{dgp_id}.csv")
    query_x, query_a = {}, {}
    for row in rows:
        qid = int(row[0])
        query_x[qid] = np.array(row[1:-1], dtype=float)
        query_a[qid] = int(row[-1])

    header, rows = _read_csv(data_dir / f"frontier_points_{dgp_id}.csv")
    if header != ["query_id", "bound_type", "gamma_star", "theta_star"]:
        raise ValueError(f"unexpected frontier header in dgp {dgp_id}: {header}")
    per_query = {}
    for row in rows:
        qid = int(row[0])
        gamma = float(row[2])
        theta = float(row[3])
        if not (math.isfinite(gamma) and math.isfinite(theta)):
            raise ValueError(f"non-finite label for query {qid}")
        slot = per_query.setdefault(qid, {})
        slot.setdefault(gamma, {})[row[1]] = theta
    labels = {}
    for qid, by_gamma in per_query.items():
        gammas = np.array(sorted(by_gamma))
        lower = np.array([by_gamma[g].get("lower", np.nan) for g in gammas])
        upper = np.array([by_gamma[g].get("upper", np.nan) for g in gammas])
        labels[qid] = {"gamma": gammas, "lower": lower, "upper": upper}
    return DgpRecords(dgp_id=dgp_id, x_context=x_ctx, a_context=a_ctx,
                      y_context=y_ctx, query_x=query_x, query_a=query_a,
                      labels=labels)


def discover_dgp_ids(data_dir) -> list:
    ids = []
    for path in Path(data_dir).glob("frontier_points_*.csv"):
        m = re.fullmatch(r"frontier_points_(\d+)\.csv", path.name)
        if m:
            ids.append(int(m.group(1)))
    return sorted(ids)


def build_sequence(x_context, a_context, y_context, query_x, query_a, gammas):
    """Token features for one sequence: context rows then one query group.

    Returns (features, mask) arrays of shape (N + g, d_x + 2 + 2·2): the
    last four columns are (y, y_mask, Γ, Γ_mask); Γ is masked on context
    rows and y on query rows.
    """
    n = x_context.shape[0]
    g = len(gammas)
    d_x = x_context.shape[1]
    feats = np.zeros((n + g, d_x + 5))
    feats[:n, :d_x] = x_context
    feats[:n, d_x] = 2.0 * a_context - 1.0
    feats[:n, d_x + 1] = y_context
    feats[:n, d_x + 2] = 1.0                      # y observed
    feats[n:, :d_x] = query_x
    feats[n:, d_x] = 2.0 * query_a - 1.0
    feats[n:, d_x + 3] = gammas
    feats[n:, d_x + 4] = 1.0                      # Γ observed
    return feats, n


@dataclass
class GroupBatch:
    """One training batch: B sequences with per-query-row labels."""

    features: np.ndarray        # (B, S, d_x + 5)
    split: int                  # context length N
    gammas: np.ndarray          # (B, m'·g) per query row
    lower: np.ndarray           # (B, m'·g), NaN when unsupervised
    upper: np.ndarray
    group_sizes: np.ndarray     # (B, m') rows per group, constant g


class BatchSampler:
    """Draws (DGP, query-group, Γ-subset) batches from a loaded corpus."""

    def __init__(self, records: list, n_context: int, groups_per_dgp: int,
                 gammas_per_group: int, seed: int = 0):
        if not records:
            raise ValueError("no DGP records")
        self.records = records
        self.n_context = n_context
        self.m_groups = groups_per_dgp
        self.g = gammas_per_group
        self.rng = np.random.default_rng(seed)

    def sample(self, dgps_per_step: int) -> GroupBatch:
        feats = []
        gammas = []
        lower = []
        upper = []
        picks = self.rng.choice(len(self.records), size=dgps_per_step,
                                replace=len(self.records) < dgps_per_step)
        for idx in picks:
            rec = self.records[idx]
            n_obs = rec.x_context.shape[0]
            ctx = self.rng.choice(n_obs, size=min(self.n_context, n_obs),
                                  replace=False)
            qids = self.rng.choice(rec.query_ids, size=self.m_groups,
                                   replace=len(rec.query_ids) < self.m_groups)
            qx, qa, gm, lo, hi = [], [], [], [], []
            for qid in qids:
                lab = rec.labels[qid]
                avail = lab["gamma"].size
                take = self.rng.choice(avail, size=min(self.g, avail),
                                       replace=avail < self.g)
                take = np.sort(take)
                gm.append(lab["gamma"][take])
                lo.append(lab["lower"][take])
                hi.append(lab["upper"][take])
                qx.append(np.repeat(rec.query_x[qid][None, :], len(take), axis=0))
                qa.append(np.full(len(take), rec.query_a[qid], dtype=float))
            f, split = build_sequence(rec.x_context[ctx], rec.a_context[ctx],
                                      rec.y_context[ctx],
                                      np.concatenate(qx), np.concatenate(qa),
                                      np.concatenate(gm))
            feats.append(f)
            gammas.append(np.concatenate(gm))
            lower.append(np.concatenate(lo))
            upper.append(np.concatenate(hi))
        return GroupBatch(features=np.stack(feats), split=split,
                          gammas=np.stack(gammas), lower=np.stack(lower),
                          upper=np.stack(upper),
                          group_sizes=np.full((dgps_per_step, self.m_groups),
                                              self.g))
