"""CSV interchange between ``run``, ``sweep``, ``analyze`` and ``plot``.

Every float is written with 17 significant digits so a read-back is
bit-exact.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, SchemaMismatch
from .tuner import PredictionRecord

RESULT_COLUMNS = ["method", "lambda_ortho", "seed", "accuracy", "ece", "sce", "mean_pairwise_cos"]
RECORD_COLUMNS = ["sample_index", "method", "seed", "true_label", "predicted", "confidence", "mean_pairwise_cos"]
BIN_COLUMNS = ["method", "seed", "bin_index", "lower", "upper", "count", "accuracy", "mean_confidence"]
PARETO_COLUMNS = ["lambda", "accuracy", "ece", "mean_pairwise_cos"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass(frozen=True)
class ResultRow:
    method: str
    lambda_ortho: float
    seed: int
    accuracy: float
    ece: float
    sce: float
    mean_pairwise_cos: float

    def cells(self) -> list[str]:
        return [fmt(getattr(self, c)) for c in RESULT_COLUMNS]


@dataclass(frozen=True)
class RecordRow:
    sample_index: int
    method: str
    seed: int
    record: PredictionRecord


def to_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaMismatch(f"{path} is empty")
    return rows[0], rows[1:]


def results_csv(rows: list[ResultRow]) -> str:
    return to_csv(RESULT_COLUMNS, [r.cells() for r in rows])


def read_results(path) -> list[ResultRow]:
    header, rows = read_csv(path)
    if header != RESULT_COLUMNS:
        raise SchemaMismatch(f"{path}: expected columns {RESULT_COLUMNS}")
    return [ResultRow(r[0], float(r[1]), int(r[2]), float(r[3]), float(r[4]), float(r[5]), float(r[6])) for r in rows]


def record_header(n_classes: int) -> list[str]:
    cos = [f"cos_{i}_{j}" for i in range(n_classes) for j in range(i + 1, n_classes)]
    return RECORD_COLUMNS + [f"p_{c}" for c in range(n_classes)] + cos


def records_csv(rows: list[RecordRow]) -> str:
    C = len(rows[0].record.probs) if rows else 0
    out = []
    for row in rows:
        r = row.record
        cos = r.pairwise_cos if r.pairwise_cos is not None else np.full(C * (C - 1) // 2, np.nan)
        out.append([row.sample_index, row.method, row.seed, r.true_label, r.predicted, r.confidence,
                    r.mean_pairwise_cos, *r.probs, *cos])
    return to_csv(record_header(C), out)


def read_records(path) -> list[RecordRow]:
    header, rows = read_csv(path)
    if header[: len(RECORD_COLUMNS)] != RECORD_COLUMNS:
        raise SchemaMismatch(f"{path}: expected leading columns {RECORD_COLUMNS}")
    C = sum(1 for h in header if h.startswith("p_"))
    if C < 1 or header != record_header(C):
        raise SchemaMismatch(f"{path}: malformed probability/cosine columns")
    out = []
    k = len(RECORD_COLUMNS)
    try:
        for r in rows:
            probs = np.array([float(v) for v in r[k:k + C]])
            cos = np.array([float(v) for v in r[k + C:]])
            rec = PredictionRecord(probs, int(r[4]), float(r[5]), int(r[3]), float(r[6]), pairwise_cos=cos)
            out.append(RecordRow(int(r[0]), r[1], int(r[2]), rec))
    except (ValueError, IndexError) as exc:
        raise SchemaMismatch(f"{path}: bad record row: {exc}") from exc
    return out
