"""Command-line front door.

Subcommands: pretrain, opt-phi, adv, eval, plot, table1, verify-goldens.
Configuration comes from an optional TOML file plus --set key=value
overrides; the effective merged config is written to each run's
manifest.json. Exit codes: 0 success, 2 config error, 3 numeric failure,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    replace_config,
    write_manifest,
)
from .autodiff import TapeError
from .goldens import load_goldens, print_report, verify_goldens, write_report
from .losses import LossError
from .loops import TrainingDiverged, evaluate_w2, run_adversarial, \
    run_phi_optimization, run_pretraining
from .models import ModelError, load_checkpoint
from .optim import OptimError
from .solver import SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4


class MissingArtifact(RuntimeError):
    pass


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings stay strings
    return key.strip(), value


def _load(args) -> ExperimentConfig:
    overrides = dict(_parse_override(s) for s in (args.set or []))
    if getattr(args, "task", None):
        overrides["task"] = args.task
    if getattr(args, "nfe", None):
        overrides["nfe"] = args.nfe
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _load_field(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    out = cfg.output_dir()
    write_manifest(cfg, out)
    params = run_pretraining(cfg, out_dir=out)
    print(f"pretrained -> {out / 'field.ckpt'} ({params.values.size} params)")
    return EXIT_OK


def cmd_opt_phi(args) -> int:
    cfg = _load(args)
    if cfg.coeff_mode != "gamma-mac":
        cfg = replace_config(cfg, coeff_mode="gamma-mac", cond_mode="")
    if args.iters is not None:
        cfg = replace_config(cfg, **{"phi.iters": args.iters})
    field_params, _ = _load_field(args.checkpoint)
    out = cfg.output_dir()
    write_manifest(cfg, out)
    run_phi_optimization(cfg, field_params, out_dir=out)
    print(f"optimized coefficients -> {out / 'coeff.ckpt'}")
    return EXIT_OK


def cmd_adv(args) -> int:
    cfg = _load(args)
    field_params, _ = _load_field(args.checkpoint)
    out = cfg.output_dir()
    write_manifest(cfg, out)
    run_adversarial(cfg, field_params, out_dir=out)
    print(f"adversarial run -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    field_params, _ = _load_field(args.checkpoint)
    coeff_params = None
    if args.coeff:
        coeff_params, _ = _load_field(args.coeff)
    values = []
    for rep in range(args.seeds):
        values.append(
            evaluate_w2(cfg, field_params, coeff_params, eval_seed=cfg.seed + rep)
        )
    mean, std = float(np.mean(values)), float(np.std(values))
    print(f"w2 = {mean:.4f} +- {std:.4f}  (n={cfg.eval.n_points}, seeds={args.seeds})")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .export import export_artifacts

    result = export_artifacts(args.run_dir)
    for item in result["produced"]:
        print(f"wrote {item}")
    for warning in result["warnings"]:
        print(f"warning: {warning}")
    return EXIT_OK


def cmd_table1(args) -> int:
    from .benchmark import aggregate, quick_variant, run_matrix, write_table

    cfg = _load(args)
    if args.quick:
        cfg = quick_variant(cfg)
    out = Path(args.out or cfg.output_dir())
    cache = Path(args.cache or (out / "cache"))
    seeds = tuple(range(args.seeds))

    def progress(done, total, row):
        print(
            f"[{done}/{total}] {row['task']} {row['pairing']}/{row['method']}"
            f" nfe={row['nfe']} seed={row['seed']} w2={row['w2']:.4f}",
            flush=True,
        )

    results = run_matrix(
        cfg, cache, seeds=seeds, jobs=args.jobs, progress=progress
    )
    agg = aggregate(results)
    csv_path, md_path = write_table(agg, out)
    (out / "results.json").write_text(json.dumps(results, indent=2))
    print(f"wrote {csv_path}\nwrote {md_path}")
    print(Path(md_path).read_text())
    return EXIT_OK


def cmd_verify_goldens(args) -> int:
    goldens = load_goldens(args.goldens)
    outputs = json.loads(Path(args.outputs).read_text())
    run_hash = args.hash or outputs.get("manifest_hash", "")
    report = verify_goldens(outputs, goldens, run_hash)
    print_report(report)
    write_report(report, args.report)
    return EXIT_OK if report["n_fail"] == 0 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adacoef",
        description="flow/diffusion transport with adaptive per-dimension "
        "schedules (2-D benchmark harness)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="override a config key (dotted path, JSON value)",
        )
        p.add_argument("--task", default=None)
        p.add_argument("--nfe", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="pre-trained field checkpoint")

    p = sub.add_parser("pretrain", help="train the vector-field model")
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("opt-phi", help="optimize the coefficient network")
    common(p, checkpoint=True)
    p.add_argument("--iters", type=int, default=None,
                   help="shortcut for --set phi.iters=N")
    p.set_defaults(fn=cmd_opt_phi)

    p = sub.add_parser("adv", help="adversarial refinement (experimental)")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_adv)

    p = sub.add_parser("eval", help="evaluate W2 for a checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--coeff", default=None, help="coefficient checkpoint")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="export trajectories/plots for a run dir")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("table1", help="run the full benchmark matrix")
    common(p)
    p.add_argument("--quick", action="store_true", help="reduced iterations")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache", default=None, help="stage cache directory")
    p.set_defaults(fn=cmd_table1)

    p = sub.add_parser("verify-goldens", help="check run outputs against goldens")
    p.add_argument("--goldens", required=True)
    p.add_argument("--outputs", required=True, help="JSON of observed metrics")
    p.add_argument("--report", default="report.json")
    p.add_argument("--hash", default=None)
    p.set_defaults(fn=cmd_verify_goldens)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SolverError, TrainingDiverged, OptimError, LossError, TapeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
