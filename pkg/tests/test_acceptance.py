"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from otpt_lab.analysis import group_table
from otpt_lab.calibration import apply_temperature, default_grid, ece, report, sce
from otpt_lab.experiment import ExperimentConfig, run_experiment, run_sweep
from otpt_lab.linalg import householder_qr, householder_reflector, l2_normalize_rows
from otpt_lab.objective import METHODS, finite_diff_objective, freeze, grad_objective, ortho_loss, view_features
from otpt_lab.optim import AdamWConfig
from otpt_lab.synthdata import BENCHMARK_SPEC, dumps_dataset, generate_dataset
from otpt_lab.tables import RESULT_COLUMNS, fmt, read_csv
from otpt_lab.tuner import TUNER_METHODS, PredictionRecord, TunerConfig, record_from_logits, run_dataset

from oracles import ece_bruteforce, sce_bruteforce
from regen_goldens import BENCH_METHODS, BENCH_SEEDS
from test_objective import random_problem

GOLDEN = Path(__file__).parent / "golden"
LAMBDAS = [0.0, 2.0, 6.0, 18.0, 54.0]


def verdict(criterion_log, n, ok, detail):
    criterion_log(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def bench():
    ds = generate_dataset(BENCHMARK_SPEC)
    t0 = time.perf_counter()
    res = run_experiment(ds, ExperimentConfig(methods=["zeroshot", "tpt", "otpt", "otpt_hh"], parallel=1))
    elapsed = time.perf_counter() - t0
    rows = {r.method: r for r in res.rows}
    return ds, res, rows, elapsed


def test_criterion_01_metric_oracles(criterion_log):
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    worst_ece = worst_sce = 0.0
    for i in range(100):
        n, C, M = int(r.integers(1, 120)), int(r.integers(2, 8)), int(r.integers(1, 25))
        recs = [record_from_logits(r.normal(scale=r.uniform(0.1, 8), size=C), int(r.integers(0, C)))
                for _ in range(n)]
        worst_ece = max(worst_ece, abs(ece(recs, M)[0] - ece_bruteforce([x.confidence for x in recs],
                                                                        [x.correct for x in recs], M)))
        worst_sce = max(worst_sce, abs(sce(recs, M) - sce_bruteforce([x.probs for x in recs],
                                                                    [x.true_label for x in recs], M)))

    def rec(conf, correct):
        return PredictionRecord(np.array([conf, 1 - conf]), 0, conf, 0 if correct else 1, 0.0)

    hand = ece([rec(0.9, True), rec(0.8, False), rec(0.3, True), rec(0.6, False)], 2)[0]
    elapsed = time.perf_counter() - t0
    ok = worst_ece <= 1e-12 and worst_sce <= 1e-12 and hand == 0.5 and elapsed < 5
    verdict(criterion_log, 1, ok, f"max|ECE-oracle|={worst_ece:.1e} max|SCE-oracle|={worst_sce:.1e} "
                                  f"hand ECE={hand!r} ({elapsed:.2f}s < 5s)")


def test_criterion_02_gradients(criterion_log):
    t0 = time.perf_counter()
    worst, worst_pure = {}, {}
    for method in METHODS:
        w = wp = 0.0
        for seed in range(20):
            params, classes, prompt, X, cfg = random_problem(seed, method)
            V = view_features(params, X)
            frozen = freeze(method, params, classes, prompt.context, V, cfg)
            ga = grad_objective(method, params, classes, prompt, X, cfg, frozen)
            gf = finite_diff_objective(method, params, classes, prompt, X, cfg, 1e-6, frozen)
            d, s = np.abs(ga - gf), np.maximum(np.abs(ga), np.abs(gf))
            w = max(w, float((d / np.maximum(s, 1.0)).max()))
            wp = max(wp, float((d / np.maximum(s, 1e-6)).max()))
        worst[method], worst_pure[method] = w, wp
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-5 and elapsed < 30
    detail = " ".join(f"{m}={worst[m]:.1e}" for m in METHODS)
    verdict(criterion_log, 2, ok, f"max |a-f|/max(1,|a|,|f|): {detail}; with 1e-6 floor: "
                                  f"{max(worst_pure.values()):.1e} ({elapsed:.2f}s < 30s)")


def test_criterion_03_invariants(criterion_log):
    r = np.random.default_rng(33)
    ok_ortho = ok_h = ok_qr = True
    for _ in range(60):
        C = int(r.integers(1, 7))
        D = int(r.integers(C, 12))
        Q, R = householder_qr(r.normal(size=(D, C)))
        ok_ortho &= ortho_loss(Q.T) <= 1e-10
        E = l2_normalize_rows(r.normal(size=(C + 1, D + 1)))
        ok_ortho &= ortho_loss(E) > 1e-10
        v = r.normal(size=D)
        H = householder_reflector(v)
        I = np.eye(D)
        ok_h &= max(np.abs(H @ H.T - I).max(), np.abs(H @ H - I).max(), np.abs(H @ v + v).max()) <= 1e-10
        A = r.normal(size=(D + int(r.integers(0, 4)), C))
        Q, R = householder_qr(A)
        ok_qr &= np.linalg.norm(Q @ R - A) / np.linalg.norm(A) <= 1e-10
    verdict(criterion_log, 3, bool(ok_ortho and ok_h and ok_qr),
            f"60 instances: ortho zero<=>orthonormal={ok_ortho} reflector={ok_h} QR residual={ok_qr}")


def test_criterion_04_reductions(criterion_log, small_ds, base_prompt):
    ds = small_ds
    sub = ds.samples[:12]

    def run(**kw):
        return run_dataset(ds.encoder, ds.classes, base_prompt, sub, TunerConfig(**kw))

    def same(a, b):
        return all(np.array_equal(x.probs, y.probs) and x.mean_pairwise_cos == y.mean_pairwise_cos
                   for x, y in zip(a, b))

    tpt = run(method="tpt")
    a = same(run(method="otpt", lambda_ortho=0.0), tpt)
    b = same(run(method="ctpt", lambda_atfd=0.0), tpt)
    zs = run(method="zeroshot")
    frozen = AdamWConfig(lr=0.0, weight_decay=0.0)
    c = all(same(run(method=m, adamw=frozen), zs) for m in TUNER_METHODS)
    recs = run_experiment(ds, ExperimentConfig(methods=["tpt"], parallel=1)).records
    recs = [x.record for x in recs]
    acc = report(recs).accuracy
    d = all(all(x.predicted == y.predicted == int(np.argmax(y.probs)) for x, y in zip(recs, out))
            and report(out).accuracy == acc
            for out in (apply_temperature(recs, tau) for tau in default_grid()))
    verdict(criterion_log, 4, a and b and c and d,
            f"otpt(0)=tpt:{a} ctpt(0)=tpt:{b} lr=0=zeroshot:{c} temperature keeps argmax/acc:{d}")


def test_criterion_05_method_effect(criterion_log, bench):
    _, res, rows, elapsed = bench
    z, t, o = rows["zeroshot"], rows["tpt"], rows["otpt"]
    n = BENCHMARK_SPEC.n_test
    correct = {m: round(rows[m].accuracy * n) for m in rows}
    a = t.accuracy >= z.accuracy - 0.005 and t.ece > z.ece
    b = o.ece <= 0.8 * t.ece
    c = abs(correct["otpt"] - correct["tpt"]) <= round(0.02 * n)  # inclusive, compared on counts
    d = o.mean_pairwise_cos < t.mean_pairwise_cos
    golden = {r[0]: r for r in read_csv(GOLDEN / "benchmark_results.csv")[1] if r[2] == "0"}
    frozen = all(rows[m].cells() == golden[m] for m in rows)
    ok = a and b and c and d and frozen and elapsed < 60
    verdict(criterion_log, 5, ok,
            f"(a) acc zs={z.accuracy:.3f} tpt={t.accuracy:.3f}, ECE zs={z.ece:.4f} tpt={t.ece:.4f}:{a} "
            f"(b) otpt ECE={o.ece:.4f} <= 0.8*tpt={0.8 * t.ece:.4f}:{b} "
            f"(c) |acc otpt-tpt|={abs(o.accuracy - t.accuracy):.3f}:{c} "
            f"(d) cos otpt={o.mean_pairwise_cos:.6f} < tpt={t.mean_pairwise_cos:.6f}:{d} "
            f"golden:{frozen} ({elapsed:.1f}s < 60s)")


def test_criterion_06_groups(criterion_log, bench):
    _, res, _, _ = bench
    t0 = time.perf_counter()
    header, table = group_table(res.records, 15)
    elapsed = time.perf_counter() - t0
    g = {(row[0], row[1]): row for row in table}
    tpt_hi, tpt_lo = g["tpt", "above_median"][4], g["tpt", "below_median"][4]
    o_hi, o_lo = g["otpt", "above_median"][4], g["otpt", "below_median"][4]
    pattern = tpt_hi > tpt_lo and o_hi < tpt_hi and o_lo < tpt_lo
    gold = {(row[0], row[1]): row for row in read_csv(GOLDEN / "benchmark_groups.csv")[1]}
    match = all(abs(float(gold[k][4]) - g[k][4]) <= 1e-12 and int(gold[k][2]) == g[k][2]
                for k in g) and bool(g)
    ok = pattern and match and elapsed < 60
    verdict(criterion_log, 6, ok,
            f"TPT ECE above={tpt_hi:.4f} > below={tpt_lo:.4f}; O-TPT above={o_hi:.4f} below={o_lo:.4f}; "
            f"golden:{match}")


def test_criterion_07_lambda_sweep(criterion_log, bench):
    ds = bench[0]
    rows = run_sweep(ds, ExperimentConfig(parallel=1), LAMBDAS)
    cos = [r[3] for r in rows]
    mono = all(cos[i + 1] <= cos[i] + 1e-3 for i in range(len(cos) - 1))
    header, gold = read_csv(GOLDEN / "benchmark_pareto.csv")
    frozen = [[float(v) for v in g] for g in gold] == [list(r) for r in rows]
    verdict(criterion_log, 7, mono and frozen,
            "cos by lambda " + ", ".join(f"{lam:g}:{c:.6f}" for lam, c in zip(LAMBDAS, cos)) + f"; golden:{frozen}")


def test_criterion_08_determinism(criterion_log, tmp_path):
    def cli(*args):
        return subprocess.run([sys.executable, "-m", "otpt_lab", *map(str, args)], capture_output=True, text=True)

    ok = cli("gen", "--out", tmp_path / "a.json").returncode == 0
    ok &= cli("gen", "--out", tmp_path / "b.json").returncode == 0
    same_ds = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    same_ds &= (tmp_path / "a.json").read_text() == dumps_dataset(generate_dataset(BENCHMARK_SPEC))
    args = ["run", "--dataset", tmp_path / "a.json", "--methods", BENCH_METHODS, "--prompt-seeds", BENCH_SEEDS]
    ok &= cli(*args, "--parallel", "1", "--out-dir", tmp_path / "t1").returncode == 0
    ok &= cli(*args, "--parallel", "8", "--out-dir", tmp_path / "t8").returncode == 0
    same_csv = all((tmp_path / "t1" / f).read_bytes() == (tmp_path / "t8" / f).read_bytes()
                   for f in ("results.csv", "records.csv", "reliability.csv"))
    golden = (tmp_path / "t1" / "results.csv").read_bytes() == (GOLDEN / "benchmark_results.csv").read_bytes()
    header = (tmp_path / "t1" / "results.csv").read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)
    verdict(criterion_log, 8, bool(ok and same_ds and same_csv and golden and header),
            f"dataset reruns identical:{same_ds} 1 vs 8 threads identical:{same_csv} golden results.csv:{golden}")


def test_criterion_09_householder_parity(criterion_log, bench):
    rows = bench[2]
    t, o, h = rows["tpt"].ece, rows["otpt"].ece, rows["otpt_hh"].ece
    ok = o <= 0.8 * t and h <= 0.8 * t
    verdict(criterion_log, 9, ok, f"ECE tpt={t:.4f} otpt={o:.4f} otpt_hh={h:.4f} (both <= {0.8 * t:.4f})")


def test_criterion_10_seed_stability(criterion_log, bench):
    ds, res, rows, _ = bench
    seeds = [int(s) for s in BENCH_SEEDS.split(",")]
    te, oe = [rows["tpt"].ece], [rows["otpt"].ece]
    for s in seeds[1:]:
        more = run_experiment(ds, ExperimentConfig(methods=["tpt", "otpt"], prompt_seeds=[s], parallel=1)).rows
        te.append(more[0].ece)
        oe.append(more[1].ece)
    st, so = float(np.std(te)), float(np.std(oe))
    gold = read_csv(GOLDEN / "benchmark_results.csv")[1]
    cell = {(g[0], int(g[2])): g[4] for g in gold}
    frozen = all(cell[m, s] == fmt(v) for m, vals in (("tpt", te), ("otpt", oe)) for s, v in zip(seeds, vals))
    verdict(criterion_log, 10, so <= st and frozen,
            f"std ECE over seeds {seeds}: otpt={so:.4f} <= tpt={st:.4f}; golden:{frozen}")
