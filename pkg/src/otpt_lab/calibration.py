"""Calibration metrics (ECE, SCE), reliability bins and temperature scaling."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyInput
from .model import softmax

DEFAULT_BINS = 15


@dataclass(frozen=True)
class BinStats:
    bin_index: int
    lower: float
    upper: float
    count: int
    accuracy: float
    mean_confidence: float


@dataclass(frozen=True)
class CalibrationReport:
    n: int
    accuracy: float
    ece: float
    sce: float
    bins: list[BinStats] = field(default_factory=list)
    method_tag: str = ""
    config_echo: str = ""


def bin_index(p, m_bins: int) -> np.ndarray:
    """Equal-width bin of each probability; p == 1.0 goes to the top bin."""
    p = np.asarray(p, dtype=np.float64)
    return np.clip(np.floor(p * m_bins).astype(np.int64), 0, m_bins - 1)


def _binned_gap(scores: np.ndarray, hits: np.ndarray, m_bins: int, n_total: int):
    idx = bin_index(scores, m_bins)
    total = 0.0
    bins = []
    for m in range(m_bins):
        mask = idx == m
        cnt = int(mask.sum())
        if cnt:
            acc = float(hits[mask].mean())
            conf = float(scores[mask].mean())
            total += cnt / n_total * abs(acc - conf)
        else:
            acc = conf = 0.0
        bins.append(BinStats(m, m / m_bins, (m + 1) / m_bins, cnt, acc, conf))
    return total, bins


def ece(records, m_bins: int = DEFAULT_BINS) -> tuple[float, list[BinStats]]:
    if not records:
        raise EmptyInput("no records")
    if m_bins < 1:
        raise ValueError("m_bins must be >= 1")
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    hits = np.array([r.predicted == r.true_label for r in records], dtype=np.float64)
    return _binned_gap(conf, hits, m_bins, len(records))


def sce(records, m_bins: int = DEFAULT_BINS) -> float:
    if not records:
        raise EmptyInput("no records")
    probs = np.stack([np.asarray(r.probs, dtype=np.float64) for r in records])
    labels = np.array([r.true_label for r in records])
    n, C = probs.shape
    total = 0.0
    for c in range(C):
        gap, _ = _binned_gap(probs[:, c], (labels == c).astype(np.float64), m_bins, n)
        total += gap
    return total / C


def accuracy(records) -> float:
    if not records:
        raise EmptyInput("no records")
    return float(np.mean([r.predicted == r.true_label for r in records]))


def report(records, m_bins: int = DEFAULT_BINS, method_tag: str = "", config_echo: str = "") -> CalibrationReport:
    e, bins = ece(records, m_bins)
    return CalibrationReport(len(records), accuracy(records), e, sce(records, m_bins), bins, method_tag, config_echo)


def default_grid() -> np.ndarray:
    return np.logspace(np.log10(0.01), np.log10(10.0), 200)


def nll(logits: np.ndarray, labels: np.ndarray, tau: float) -> float:
    z = logits / tau
    z = z - z.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logZ - z[np.arange(len(labels)), labels]))


def fit_temperature(records, grid=None) -> float:
    """Grid-search temperature minimizing mean NLL; ties go to the smaller tau."""
    if not records:
        raise EmptyInput("no validation records")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or not np.all(grid > 0):
        raise ValueError("grid must be a non-empty list of positive temperatures")
    logits = np.stack([np.asarray(r.logits, dtype=np.float64) for r in records])
    labels = np.array([r.true_label for r in records])
    best_tau, best = None, np.inf
    for tau in sorted(grid):
        val = nll(logits, labels, tau)
        if val < best:
            best_tau, best = float(tau), val
    return best_tau


def apply_temperature(records, tau: float) -> list:
    if not tau > 0:
        raise ValueError("tau must be positive")
    out = []
    for r in records:
        probs = softmax(np.asarray(r.logits, dtype=np.float64) / tau)
        out.append(replace(r, probs=probs, confidence=float(probs[r.predicted])))
    return out
