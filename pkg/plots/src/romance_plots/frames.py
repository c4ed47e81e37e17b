"""Typed readers for the training-harness CSV outputs.

Strictly read-only: files are parsed into plain arrays and never touched
again.  Unknown headers are rejected so schema drift fails loudly instead of
rendering nonsense.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

METRICS_HEADER = ["generation", "protocol", "win_rate", "mean_return", "ci95"]
SWEEP_HEADER = ["budget", "win_rate", "mean_return", "ci95"]


class SchemaError(ValueError):
    pass


@dataclass
class MetricsFrame:
    """Rows from one or more metrics.csv files, one seed per file."""

    generation: np.ndarray
    protocol: np.ndarray
    seed: np.ndarray
    win_rate: np.ndarray
    mean_return: np.ndarray

    @classmethod
    def load(cls, paths):
        gens, protos, seeds, wins, rets = [], [], [], [], []
        for path in paths:
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            seed = _seed_label(path)
            with open(path, newline="") as f:
                reader = csv.reader(f)
                header = next(reader, None)
                if header != METRICS_HEADER:
                    raise SchemaError(f"{path}: unknown metrics schema {header}")
                for row in reader:
                    gens.append(int(row[0]))
                    protos.append(row[1])
                    seeds.append(seed)
                    wins.append(float(row[2]))
                    rets.append(float(row[3]))
        if not gens:
            raise SchemaError("no rows found in the given metrics files")
        return cls(
            np.asarray(gens),
            np.asarray(protos),
            np.asarray(seeds),
            np.asarray(wins),
            np.asarray(rets),
        )

    def curve(self, protocol, column="win_rate"):
        """Per-generation mean and 95% CI half-width across seeds."""
        mask = self.protocol == protocol
        if not mask.any():
            raise SchemaError(f"no rows for protocol {protocol!r}")
        values = getattr(self, column)[mask]
        gens = self.generation[mask]
        out_g, out_mean, out_ci = [], [], []
        for g in sorted(set(gens.tolist())):
            vals = values[gens == g]
            out_g.append(g)
            out_mean.append(float(vals.mean()))
            if len(vals) < 2:
                out_ci.append(0.0)
            else:
                out_ci.append(
                    1.96 * float(vals.std(ddof=1)) / math.sqrt(len(vals))
                )
        return np.asarray(out_g), np.asarray(out_mean), np.asarray(out_ci)


def _seed_label(path):
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return parent or path


def load_distance_matrix(path):
    """Archive pairwise-distance CSV -> validated square symmetric matrix."""
    rows = []
    with open(path, newline="") as f:
        for line in csv.reader(f):
            if line:
                rows.append([float(x) for x in line])
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise SchemaError(f"{path}: distance matrix must be square, got {mat.shape}")
    if np.abs(mat - mat.T).max() > 1e-9:
        raise SchemaError(f"{path}: distance matrix asymmetry exceeds 1e-9")
    return mat


def load_sweep(path):
    budgets, wins, cis = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != SWEEP_HEADER:
            raise SchemaError(f"{path}: unknown sweep schema {header}")
        for row in reader:
            budgets.append(int(row[0]))
            wins.append(float(row[1]))
            cis.append(float(row[3]))
    return np.asarray(budgets), np.asarray(wins), np.asarray(cis)


def load_quality_table(path):
    """label,quality rows (no header) -> dict label -> list of qualities."""
    table = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            if len(row) != 2:
                raise SchemaError(f"{path}: expected label,quality rows")
            table.setdefault(row[0], []).append(float(row[1]))
    if not table:
        raise SchemaError(f"{path}: empty quality table")
    return table
