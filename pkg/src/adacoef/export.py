"""Artifact export for a completed (or partial) run directory: trajectory
CSVs, SVG plots, and a WARNINGS file listing whatever could not be
produced. Schemas are documented in docs/formats.md."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .config import config_from_dict
from .loops import build_solver_config, build_task_distributions, _sample_endpoints
from .models import BoundMlp, load_checkpoint
from .seeding import STREAM_EVAL, make_rng
from .solver import solve
from .svgplot import plot_scatter, plot_trajectories

N_EXPORT_SAMPLES = 16


def write_trajectory_csvs(states: np.ndarray, times, out_dir) -> list[Path]:
    """One CSV per sample with columns step, t, x_1..x_d from a stacked
    (N+1, n, d) state array."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    n_steps, n, dims = states.shape
    for j in range(n):
        path = out_dir / f"sample_{j:03d}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "t"] + [f"x_{k + 1}" for k in range(dims)])
            for i in range(n_steps):
                writer.writerow(
                    [i, repr(float(times[i]))]
                    + [repr(float(v)) for v in states[i, j]]
                )
        paths.append(path)
    return paths


def export_artifacts(run_dir) -> dict:
    """Collect/produce the standard artifact set for a run directory.

    Whatever is missing is recorded in WARNINGS; an empty directory yields
    only the WARNINGS file."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    warnings = []
    produced = []

    manifest_path = run_dir / "manifest.json"
    cfg = None
    if manifest_path.exists():
        payload = json.loads(manifest_path.read_text())
        cfg = config_from_dict(payload["config"])
        produced.append(str(manifest_path))
    else:
        warnings.append("manifest.json missing")

    for name in ("metrics.jsonl", "loss_curve.csv", "w2_curve.csv", "table.csv"):
        if (run_dir / name).exists():
            produced.append(str(run_dir / name))

    field_path = run_dir / "field.ckpt"
    coeff_path = run_dir / "coeff.ckpt"
    missing_coeff = (
        cfg is not None
        and cfg.coeff_mode == "gamma-mac"
        and not coeff_path.exists()
    )
    if missing_coeff:
        warnings.append("coeff.ckpt missing; no trajectories exported")
    if cfg is not None and field_path.exists() and not missing_coeff:
        field_params, _ = load_checkpoint(field_path)
        coeff_params = None
        if coeff_path.exists():
            coeff_params, _ = load_checkpoint(coeff_path)
        try:
            states, times, target_pts = _solve_export_batch(
                cfg, field_params, coeff_params
            )
            produced += [
                str(p)
                for p in write_trajectory_csvs(
                    states, times, run_dir / "trajectories"
                )
            ]
            plots = run_dir / "plots"
            produced.append(
                str(
                    plot_trajectories(
                        plots / "trajectories.svg", states, title=cfg.task
                    )
                )
            )
            produced.append(
                str(
                    plot_scatter(
                        plots / "endpoints.svg",
                        [target_pts, states[-1]],
                        labels=["target", "generated"],
                        title=cfg.task,
                    )
                )
            )
        except Exception as exc:  # noqa: BLE001 - partial runs must not crash export
            warnings.append(f"trajectory export failed: {exc}")
    elif cfg is not None and not missing_coeff:
        warnings.append("field.ckpt missing; no trajectories exported")

    if warnings:
        (run_dir / "WARNINGS").write_text("\n".join(warnings) + "\n")
    return {"produced": produced, "warnings": warnings}


def _solve_export_batch(cfg, field_params, coeff_params):
    target, source = build_task_distributions(cfg)
    rng = make_rng(cfg.dataset.seed, STREAM_EVAL, cfg.seed, 99)
    x0, _, x_start = _sample_endpoints(cfg, target, source, rng, N_EXPORT_SAMPLES)
    solver_cfg = build_solver_config(cfg)
    tape = Tape()
    field_bound = BoundMlp(tape, field_params, trainable=False)
    coeff_bound = (
        BoundMlp(tape, coeff_params, trainable=False) if coeff_params else None
    )
    traj = solve(solver_cfg, tape, field_bound, x_start, coeff_bound=coeff_bound)
    return traj.values(), solver_cfg.grid.times, x0
