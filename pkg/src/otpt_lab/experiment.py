"""Method x prompt-seed grids over one dataset, plus the lambda sweep."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import calibration
from .errors import InvalidSpec
from .model import init_prompt
from .synthdata import Dataset, validation_split
from .tables import RecordRow, ResultRow
from .tuner import TUNER_METHODS, TunerConfig, run_dataset

ORTHO_METHODS = {"otpt", "otpt_hh", "otpt_ctpt"}


def default_threads() -> int:
    env = os.environ.get("OTPT_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidSpec(f"OTPT_LAB_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


@dataclass
class ExperimentConfig:
    dataset_path: str = ""
    methods: list = field(default_factory=lambda: ["zeroshot", "tpt", "ctpt", "otpt"])
    tuner: TunerConfig = field(default_factory=TunerConfig)
    m_bins: int = calibration.DEFAULT_BINS
    out_dir: str = "results"
    prompt_seeds: list = field(default_factory=lambda: [0])
    parallel: int = 1
    posthoc_ts: bool = False
    val_fraction: float = 0.2

    def validate(self) -> None:
        if not self.methods:
            raise InvalidSpec("at least one method is required")
        for m in self.methods:
            if m not in TUNER_METHODS:
                raise InvalidSpec(f"unknown method {m!r}; expected one of {TUNER_METHODS}")
        if not self.prompt_seeds:
            raise InvalidSpec("at least one prompt seed is required")
        if self.m_bins < 1:
            raise InvalidSpec("m_bins must be >= 1")
        if self.parallel < 1:
            raise InvalidSpec("parallel must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise InvalidSpec("val_fraction must lie in (0, 1)")

    def echo(self) -> str:
        d = asdict(self)
        d.pop("parallel")  # output must not depend on it
        return json.dumps(d, sort_keys=True)


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    records: list[RecordRow]
    reports: dict  # (method, seed) -> CalibrationReport


def effective_lambda(method: str, tuner: TunerConfig) -> float:
    return float(tuner.lambda_ortho) if method in ORTHO_METHODS else 0.0


def _row(method, lam, seed, recs, m_bins):
    rep = calibration.report(recs, m_bins, method)
    cos = float(np.mean([r.mean_pairwise_cos for r in recs]))
    return ResultRow(method, lam, seed, rep.accuracy, rep.ece, rep.sce, cos), rep


def run_experiment(ds: Dataset, cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    rows, records, reports = [], [], {}
    for seed in cfg.prompt_seeds:
        base = init_prompt(seed, ds.spec.n_ctx, ds.spec.d_tok)
        for method in cfg.methods:
            tcfg = replace(cfg.tuner, method=method)
            recs = run_dataset(ds.encoder, ds.classes, base, ds, tcfg, cfg.parallel)
            row, rep = _row(method, effective_lambda(method, tcfg), seed, recs, cfg.m_bins)
            rows.append(row)
            reports[(method, seed)] = rep
            records.extend(RecordRow(i, method, seed, r) for i, r in enumerate(recs))
        if cfg.posthoc_ts:
            row, rep, recs = temperature_scaled_zeroshot(ds, base, cfg, seed)
            rows.append(row)
            reports[(row.method, seed)] = rep
            records.extend(RecordRow(i, row.method, seed, r) for i, r in enumerate(recs))
    return ExperimentResult(rows, records, reports)


def temperature_scaled_zeroshot(ds: Dataset, base, cfg: ExperimentConfig, seed: int):
    """Zero-shot predictions rescaled by a temperature fitted on a held-out labeled split."""
    n_val = max(1, int(round(cfg.val_fraction * ds.spec.n_test)))
    zs = replace(cfg.tuner, method="zeroshot")
    val = run_dataset(ds.encoder, ds.classes, base, validation_split(ds, n_val), zs, cfg.parallel)
    tau = calibration.fit_temperature(val)
    test = run_dataset(ds.encoder, ds.classes, base, ds, zs, cfg.parallel)
    scaled = calibration.apply_temperature(test, tau)
    row, rep = _row("zeroshot+ts", 0.0, seed, scaled, cfg.m_bins)
    return row, replace(rep, config_echo=f"tau={tau!r}"), scaled


def run_sweep(ds: Dataset, cfg: ExperimentConfig, lambdas, method: str = "otpt") -> list[tuple]:
    """One (lambda, accuracy, ece, mean_pairwise_cos) row per lambda, in input order."""
    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise InvalidSpec("lambda list must not be empty")
    if any(not lam >= 0 for lam in lambdas):
        raise InvalidSpec("lambdas must be >= 0")
    seed = cfg.prompt_seeds[0]
    base = init_prompt(seed, ds.spec.n_ctx, ds.spec.d_tok)
    out = []
    for lam in lambdas:
        tcfg = replace(cfg.tuner, method=method, lambda_ortho=lam)
        recs = run_dataset(ds.encoder, ds.classes, base, ds, tcfg, cfg.parallel)
        row, _ = _row(method, lam, seed, recs, cfg.m_bins)
        out.append((lam, row.accuracy, row.ece, row.mean_pairwise_cos))
    return out


def bin_rows(result: ExperimentResult) -> list[list]:
    out = []
    for (method, seed), rep in result.reports.items():
        for b in rep.bins:
            out.append([method, seed, b.bin_index, b.lower, b.upper, b.count, b.accuracy, b.mean_confidence])
    return out
