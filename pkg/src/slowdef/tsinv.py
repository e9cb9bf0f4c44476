"""Least-squares inversion of an interferogram network into a cumulative time series.

Unknowns are the displacement increments between consecutive epochs; each
interferogram (i, j) constrains the sum of the increments it spans. The first
epoch is fixed at zero.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, FormatError, TopologyError
from .raster import PhaseGrid, read_fgr, write_fgr

log = logging.getLogger(__name__)


@dataclass
class InterferogramNetwork:
    epochs: list
    # (i, j, PhaseGrid of unwrapped displacement in meters), i < j
    pairs: list

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise DomainError("epochs must be strictly increasing")
        n = len(self.epochs)
        for i, j, _ in self.pairs:
            if not (0 <= i < j < n):
                raise DomainError(f"pair ({i}, {j}) does not reference epochs 0 <= i < j < {n}")

    def design_matrix(self) -> np.ndarray:
        g = np.zeros((len(self.pairs), len(self.epochs) - 1))
        for row, (i, j, _) in enumerate(self.pairs):
            g[row, i:j] = 1.0
        return g

    def components(self) -> list[list[int]]:
        parent = list(range(len(self.epochs)))

        def find(k):
            while parent[k] != k:
                parent[k] = parent[parent[k]]
                k = parent[k]
            return k

        for i, j, _ in self.pairs:
            parent[find(i)] = find(j)
        groups = {}
        for k in range(len(self.epochs)):
            groups.setdefault(find(k), []).append(k)
        return sorted(groups.values())


@dataclass
class InversionResult:
    epochs: list
    cumulative: list
    max_condition: float = 0.0
    n_rank_deficient: int = 0
    report: dict = field(default_factory=dict)

    def series(self):
        return list(zip(self.epochs, self.cumulative))


def invert(network: InterferogramNetwork) -> InversionResult:
    """Per-pixel unweighted least squares; pixels whose valid pairs leave the
    system rank-deficient are masked and counted."""
    if not network.pairs:
        raise DomainError("network has no interferograms")
    comps = network.components()
    if len(comps) > 1:
        raise TopologyError(f"network is disconnected: components {comps}", comps)
    shape = network.pairs[0][2].shape
    spacing = network.pairs[0][2].pixel_spacing_m
    for _, _, g in network.pairs:
        if g.shape != shape:
            raise DimensionError(f"interferogram shape {g.shape} != {shape}")
    G = network.design_matrix()
    n_pairs, n_inc = G.shape
    npix = shape[0] * shape[1]
    data = np.stack([np.asarray(g.values, dtype=np.float64).ravel() for _, _, g in network.pairs])
    valid = np.stack([g.mask.ravel() for _, _, g in network.pairs])

    increments = np.zeros((n_inc, npix))
    solved = np.zeros(npix, dtype=bool)
    max_cond = 0.0
    # pixels sharing a validity pattern share a design matrix
    patterns, inverse = np.unique(valid.T, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for k, pattern in enumerate(patterns):
        cols = np.flatnonzero(inverse == k)
        rows = np.flatnonzero(pattern)
        if rows.size < n_inc:
            continue
        gs = G[rows]
        if np.linalg.matrix_rank(gs) < n_inc:
            continue
        max_cond = max(max_cond, float(np.linalg.cond(gs)))
        q, r = np.linalg.qr(gs)
        increments[:, cols] = np.linalg.solve(r, q.T @ data[np.ix_(rows, cols)])
        solved[cols] = True
    cumulative = np.vstack([np.zeros((1, npix)), np.cumsum(increments, axis=0)])
    mask = solved.reshape(shape)
    grids = [PhaseGrid(cumulative[k].reshape(shape), mask, spacing) for k in range(n_inc + 1)]
    n_bad = int(npix - solved.sum())
    if n_bad:
        log.info("%d rank-deficient pixels masked", n_bad)
    return InversionResult(list(network.epochs), grids, max_cond, n_bad,
                           {"max_condition": max_cond, "n_rank_deficient": n_bad, "n_pairs": n_pairs,
                            "n_epochs": len(network.epochs)})


def normal_residual(network: InterferogramNetwork, result: InversionResult) -> np.ndarray:
    """|G^T (G m - d)| per pixel, using every pair valid at the pixel."""
    G = network.design_matrix()
    inc = np.diff(np.stack([np.asarray(g.values, np.float64).ravel() for g in result.cumulative]), axis=0)
    data = np.stack([np.asarray(g.values, np.float64).ravel() for _, _, g in network.pairs])
    valid = np.stack([g.mask.ravel() for _, _, g in network.pairs])
    resid = np.where(valid, G @ inc - data, 0.0)
    return np.linalg.norm(G.T @ resid, axis=0).reshape(result.cumulative[0].shape)


def parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise FormatError(f"date: cannot parse {text!r} as ISO 8601") from None


def read_network(manifest) -> InterferogramNetwork:
    """Network manifest CSV with columns date_i, date_j, path (FGR)."""
    manifest = Path(manifest)
    rows = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"date_i", "date_j", "path"} - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"network manifest lacks columns {sorted(missing)}")
        for rec in reader:
            rows.append((parse_date(rec["date_i"]), parse_date(rec["date_j"]),
                         (manifest.parent / rec["path"]).resolve()))
    epochs = sorted({d for a, b, _ in rows for d in (a, b)})
    index = {d: k for k, d in enumerate(epochs)}
    pairs = []
    for a, b, path in rows:
        if a >= b:
            raise FormatError(f"pair {a} -> {b}: date_i must precede date_j")
        pairs.append((index[a], index[b], read_fgr(path)))
    return InterferogramNetwork(epochs, pairs)


def write_series(result: InversionResult, out_dir) -> Path:
    """One FGR per epoch plus ``index.csv`` (date, path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = out_dir / "index.csv"
    with open(index, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "path"])
        for date, grid in result.series():
            name = f"cum_{date.isoformat() if hasattr(date, 'isoformat') else date}.fgr"
            write_fgr(grid, out_dir / name)
            writer.writerow([date.isoformat() if hasattr(date, "isoformat") else date, name])
    return index


def read_stack(index) -> list:
    """Read a (date, path) index CSV into [(date, PhaseGrid)] sorted by date."""
    index = Path(index)
    out = []
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"date", "path"} - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"stack manifest lacks columns {sorted(missing)}")
        for rec in reader:
            out.append((parse_date(rec["date"]), read_fgr((index.parent / rec["path"]).resolve())))
    out.sort(key=lambda t: t[0])
    return out
