"""Post-hoc analyses over per-sample records.

* ``pdf``: histogram of every pairwise text-feature cosine, per method.
* ``trace``: per-sample mean pairwise cosine, per method, in sample order.
* ``groups``: split samples at the median TPT cosine and score each half.
* ``corr``: zero-shot cosine against zero-shot ECE across prompt seeds.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .calibration import DEFAULT_BINS, accuracy, ece
from .errors import EmptyInput, MissingMethod
from .tables import RecordRow

PDF_BINS = 50
MODES = ("pdf", "trace", "groups", "corr")


def _by_method(rows: list[RecordRow], seed: int | None = None) -> dict[str, list[RecordRow]]:
    if not rows:
        raise EmptyInput("no records")
    out = defaultdict(list)
    for r in rows:
        if seed is None or r.seed == seed:
            out[r.method].append(r)
    for recs in out.values():
        recs.sort(key=lambda r: r.sample_index)
    return dict(out)


def _methods_in_order(rows: list[RecordRow]) -> list[str]:
    return list(dict.fromkeys(r.method for r in rows))


def _first_seed(rows: list[RecordRow]) -> int:
    return min(r.seed for r in rows)


def cosine_pdf(rows: list[RecordRow], n_bins: int = PDF_BINS) -> tuple[list[str], list[list]]:
    if not rows:
        raise EmptyInput("no records")
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    methods = _methods_in_order(rows)
    cols = []
    for m in methods:
        vals = np.concatenate([r.record.pairwise_cos for r in rows if r.method == m])
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise EmptyInput(f"no pairwise cosines recorded for {m}")
        hist, _ = np.histogram(np.clip(vals, -1.0, 1.0), bins=edges, density=True)
        cols.append(hist)
    table = [[float(c), *(float(col[i]) for col in cols)] for i, c in enumerate(centers)]
    return ["bin_center", *methods], table


def cosine_trace(rows: list[RecordRow], seed: int | None = None) -> tuple[list[str], list[list]]:
    seed = _first_seed(rows) if seed is None and rows else seed
    groups = _by_method(rows, seed)
    methods = [m for m in _methods_in_order(rows) if m in groups]
    index = sorted({r.sample_index for m in methods for r in groups[m]})
    lookup = {m: {r.sample_index: r.record.mean_pairwise_cos for r in groups[m]} for m in methods}
    table = [[i, *(lookup[m].get(i, math.nan) for m in methods)] for i in index]
    return ["sample_index", *methods], table


def median_split(rows: list[RecordRow], reference: str = "tpt", seed: int | None = None) -> set[int]:
    """Sample indices of the above-median group under the reference method.

    Samples sitting exactly on the median go above when their index is even.
    """
    seed = _first_seed(rows) if seed is None and rows else seed
    groups = _by_method(rows, seed)
    if reference not in groups:
        raise MissingMethod(f"records contain no {reference!r} run")
    ref = groups[reference]
    cos = np.array([r.record.mean_pairwise_cos for r in ref])
    med = float(np.median(cos))
    return {r.sample_index for r, c in zip(ref, cos) if c > med or (c == med and r.sample_index % 2 == 0)}


def group_table(rows: list[RecordRow], m_bins: int = DEFAULT_BINS, reference: str = "tpt",
                seed: int | None = None) -> tuple[list[str], list[list]]:
    seed = _first_seed(rows) if seed is None and rows else seed
    above = median_split(rows, reference, seed)
    groups = _by_method(rows, seed)
    table = []
    for m in _methods_in_order(rows):
        if m not in groups:
            continue
        for name, pick in (("above_median", True), ("below_median", False)):
            recs = [r.record for r in groups[m] if (r.sample_index in above) == pick]
            if recs:
                table.append([m, name, len(recs), accuracy(recs), ece(recs, m_bins)[0]])
            else:
                table.append([m, name, 0, math.nan, math.nan])
    return ["method", "group", "n", "accuracy", "ece"], table


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return math.nan
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    return float(dx @ dy) / denom if denom > 0 else math.nan


def cosine_ece_correlation(rows: list[RecordRow], m_bins: int = DEFAULT_BINS,
                           method: str = "zeroshot") -> tuple[list[str], list[list]]:
    picked = [r for r in rows if r.method == method]
    if not rows:
        raise EmptyInput("no records")
    if not picked:
        raise MissingMethod(f"records contain no {method!r} run")
    seeds = sorted({r.seed for r in picked})
    table = []
    for s in seeds:
        recs = [r.record for r in picked if r.seed == s]
        table.append([s, float(np.mean([r.mean_pairwise_cos for r in recs])), ece(recs, m_bins)[0]])
    r = pearson([t[1] for t in table], [t[2] for t in table])
    table.append(["pearson_r", "NA" if math.isnan(r) else r, ""])
    return ["seed", "mean_pairwise_cos", "ece"], table


def analyze(rows: list[RecordRow], mode: str, m_bins: int = DEFAULT_BINS):
    if mode == "pdf":
        return cosine_pdf(rows)
    if mode == "trace":
        return cosine_trace(rows)
    if mode == "groups":
        return group_table(rows, m_bins)
    if mode == "corr":
        return cosine_ece_correlation(rows, m_bins)
    raise ValueError(f"unknown analysis mode {mode!r}; expected one of {MODES}")
