"""Command-line harness: ``gen``, ``run``, ``sweep``, ``analyze``, ``plot``.

Settings resolve in three layers: built-in defaults, then the JSON file given
by ``--config``, then explicit flags.  Exit codes: 0 success, 2 usage or
validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import analysis, experiment, plots, tables
from .errors import InvalidSpec, IoError, MissingMethod, OtptLabError, SchemaMismatch
from .optim import AdamWConfig
from .synthdata import DatasetSpec, generate_dataset, load_dataset, save_dataset
from .tuner import LAMBDA_IN_DISTRIBUTION, LAMBDA_SHIFT, TunerConfig

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
VALIDATION_ERRORS = (InvalidSpec, MissingMethod, SchemaMismatch)

PRECEDENCE = "Precedence: flags > --config JSON file > built-in defaults."

_SPEC = DatasetSpec()
_TUNER = TunerConfig()
_ADAMW = AdamWConfig()

GEN_DEFAULTS = {
    "classes": _SPEC.n_classes, "d_img": _SPEC.d_img, "d_tok": _SPEC.d_tok, "hidden": _SPEC.hidden,
    "feat_dim": _SPEC.feat_dim, "n_ctx": _SPEC.n_ctx, "n_test": _SPEC.n_test,
    "sigma": _SPEC.class_noise_sigma, "separation": _SPEC.separation, "seed": _SPEC.seed,
    "token_scale": _SPEC.class_token_scale, "out": "dataset.json",
}

RUN_DEFAULTS = {
    "dataset": None, "methods": ["zeroshot", "tpt", "ctpt", "otpt"], "prompt_seeds": [0],
    "preset": "in-distribution", "lambda_ortho": None, "lambda_atfd": _TUNER.lambda_atfd,
    "rho": _TUNER.rho, "n_views": _TUNER.n_views, "noise_sigma": _TUNER.noise_sigma,
    "mask_fraction": _TUNER.mask_fraction, "steps": _TUNER.steps, "lr": _ADAMW.lr,
    "weight_decay": _ADAMW.weight_decay, "tuner_seed": _TUNER.seed, "m_bins": 15, "out_dir": "results",
    "parallel": None, "posthoc_ts": False, "val_fraction": 0.2,
}

SWEEP_DEFAULTS = {**RUN_DEFAULTS, "methods": ["otpt"], "lambdas": [0.0, 2.0, 6.0, 18.0, 54.0], "out": None}

PRESETS = {"in-distribution": LAMBDA_IN_DISTRIBUTION, "shift": LAMBDA_SHIFT}


class UsageError(OtptLabError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidSpec(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, the optional config file and explicitly given flags."""
    conf = load_config(getattr(args, "config", None))
    unknown = sorted(set(conf) - set(defaults))
    if unknown:
        raise InvalidSpec(f"unknown config keys: {unknown}")
    out = dict(defaults)
    out.update(conf)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    for key in ("methods", "prompt_seeds", "lambdas"):
        if isinstance(out.get(key), str):
            out[key] = _csv_list(float if key == "lambdas" else (int if key == "prompt_seeds" else str))(out[key])
    return out


def build_spec(o: dict) -> DatasetSpec:
    try:
        spec = DatasetSpec(n_classes=int(o["classes"]), d_img=int(o["d_img"]), d_tok=int(o["d_tok"]),
                           hidden=int(o["hidden"]), feat_dim=int(o["feat_dim"]), n_ctx=int(o["n_ctx"]),
                           n_test=int(o["n_test"]), class_noise_sigma=float(o["sigma"]),
                           separation=float(o["separation"]), seed=int(o["seed"]),
                           class_token_scale=float(o["token_scale"]))
    except (TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad dataset setting: {exc}") from exc
    spec.validate()
    return spec


def build_experiment(o: dict) -> experiment.ExperimentConfig:
    if o["preset"] not in PRESETS:
        raise InvalidSpec(f"unknown preset {o['preset']!r}; expected one of {sorted(PRESETS)}")
    lam = PRESETS[o["preset"]] if o["lambda_ortho"] is None else o["lambda_ortho"]
    try:
        adamw = AdamWConfig(lr=float(o["lr"]), weight_decay=float(o["weight_decay"]))
        tuner = TunerConfig(lambda_ortho=float(lam), lambda_atfd=float(o["lambda_atfd"]), rho=float(o["rho"]),
                            n_views=int(o["n_views"]), noise_sigma=float(o["noise_sigma"]),
                            mask_fraction=float(o["mask_fraction"]), steps=int(o["steps"]), adamw=adamw,
                            seed=int(o["tuner_seed"]))
        parallel = experiment.default_threads()
        if o["parallel"] is not None:
            parallel = min(int(o["parallel"]), parallel) if _env_cap() else int(o["parallel"])
        cfg = experiment.ExperimentConfig(
            dataset_path=str(o["dataset"]), methods=list(o["methods"]), tuner=tuner, m_bins=int(o["m_bins"]),
            out_dir=str(o["out_dir"]), prompt_seeds=[int(s) for s in o["prompt_seeds"]], parallel=parallel,
            posthoc_ts=bool(o["posthoc_ts"]), val_fraction=float(o["val_fraction"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, OtptLabError):
            raise
        raise InvalidSpec(f"bad run setting: {exc}") from exc
    cfg.validate()
    if not o["dataset"]:
        raise InvalidSpec("--dataset is required")
    return cfg


def _env_cap() -> bool:
    return bool(os.environ.get("OTPT_LAB_THREADS"))


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {p}: {exc}") from exc
    return p


def cmd_gen(args) -> int:
    o = resolve(args, GEN_DEFAULTS)
    spec = build_spec(o)
    ds = generate_dataset(spec)
    out = Path(o["out"])
    if out.parent != Path(""):
        _out_dir(out.parent)
    save_dataset(ds, out)
    print(json.dumps(asdict(spec), sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = build_experiment(resolve(args, RUN_DEFAULTS))
    ds = load_dataset(cfg.dataset_path)
    res = experiment.run_experiment(ds, cfg)
    out = _out_dir(cfg.out_dir)
    tables.write_text(out / "results.csv", tables.results_csv(res.rows))
    tables.write_text(out / "records.csv", tables.records_csv(res.records))
    tables.write_text(out / "reliability.csv", tables.to_csv(tables.BIN_COLUMNS, experiment.bin_rows(res)))
    tables.write_text(out / "config.json", cfg.echo() + "\n")
    for row in res.rows:
        print(f"{row.method:12s} seed={row.seed} acc={row.accuracy:.4f} ece={row.ece:.4f} "
              f"sce={row.sce:.4f} cos={row.mean_pairwise_cos:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    o = resolve(args, SWEEP_DEFAULTS)
    cfg = build_experiment(o)
    if len(cfg.methods) != 1:
        raise InvalidSpec("sweep takes exactly one method")
    ds = load_dataset(cfg.dataset_path)
    rows = experiment.run_sweep(ds, cfg, o["lambdas"], cfg.methods[0])
    path = Path(o["out"]) if o["out"] else _out_dir(cfg.out_dir) / "pareto.csv"
    tables.write_text(path, tables.to_csv(tables.PARETO_COLUMNS, rows))
    for lam, acc, e, cos in rows:
        print(f"lambda={lam:g} acc={acc:.4f} ece={e:.4f} cos={cos:.4f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    rows = tables.read_records(args.records)
    header, table = analysis.analyze(rows, args.mode, args.m_bins)
    out = Path(args.out) if args.out else Path(args.records).with_name(f"analysis_{args.mode}.csv")
    tables.write_text(out, tables.to_csv(header, table))
    print(out)
    return EXIT_OK


def cmd_plot(args) -> int:
    header, rows = tables.read_csv(args.input)
    svg = plots.render(args.kind, header, rows, args.method, args.seed)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".svg")
    tables.write_text(out, svg)
    print(out)
    return EXIT_OK


def _add_tuning_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of settings; keys are the long flag names")
    p.add_argument("--dataset", help="dataset JSON written by `gen`")
    p.add_argument("--methods", type=_csv_list(str), help="comma list, e.g. zeroshot,tpt,otpt")
    p.add_argument("--prompt-seeds", type=_csv_list(int), help="comma list of prompt init seeds (default 0)")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help=f"lambda_ortho preset: in-distribution={LAMBDA_IN_DISTRIBUTION:g}, shift={LAMBDA_SHIFT:g}")
    p.add_argument("--lambda-ortho", type=float, help="overrides --preset")
    p.add_argument("--lambda-atfd", type=float)
    p.add_argument("--rho", type=float, help="fraction of lowest-entropy views kept")
    p.add_argument("--n-views", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--mask-fraction", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--tuner-seed", type=int)
    p.add_argument("--m-bins", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--parallel", type=int,
                   help="worker threads (default: OTPT_LAB_THREADS, else all cores; the env var also caps this)")


def build_parser() -> argparse.ArgumentParser:
    ap = Parser(prog="otpt-lab", description="Orthogonality-regularized test-time prompt tuning lab. " + PRECEDENCE)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset", description=PRECEDENCE)
    g.add_argument("--config")
    g.add_argument("--classes", type=int)
    g.add_argument("--d-img", type=int)
    g.add_argument("--d-tok", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--feat-dim", type=int)
    g.add_argument("--n-ctx", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--sigma", type=float, help="class noise sigma")
    g.add_argument("--separation", type=float, help="min prototype angle as a fraction of pi/2")
    g.add_argument("--seed", type=int)
    g.add_argument("--token-scale", type=float, help="shrink factor for fitted class tokens")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="evaluate methods on a dataset", description=PRECEDENCE)
    _add_tuning_flags(r)
    r.add_argument("--posthoc-ts", action="store_true", default=None,
                   help="add a temperature-scaled zero-shot row")
    r.add_argument("--val-fraction", type=float, help="validation split size for --posthoc-ts")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep lambda_ortho and write pareto.csv", description=PRECEDENCE)
    _add_tuning_flags(s)
    s.add_argument("--lambdas", type=_csv_list(float), help="comma list (default 0,2,6,18,54)")
    s.add_argument("--out", help="output CSV (default OUT_DIR/pareto.csv)")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("analyze", help="post-hoc analyses of records.csv")
    a.add_argument("records")
    a.add_argument("--mode", required=True, choices=analysis.MODES)
    a.add_argument("--m-bins", type=int, default=15)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="render a CSV as SVG")
    p.add_argument("input")
    p.add_argument("--kind", required=True, choices=plots.KINDS)
    p.add_argument("--method", help="reliability: which method to draw (default first)")
    p.add_argument("--seed", type=int, help="reliability: which prompt seed to draw")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OtptLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
