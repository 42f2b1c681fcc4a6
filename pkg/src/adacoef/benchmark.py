"""The quantitative benchmark matrix: 4 tasks x {plain, adaptive+optimized}
x {random, OT} pairing x NFE {5, 10} x seeds, with per-stage disk caching
keyed by manifest hash so checkpoints are shared across cells and reruns.

Pre-training is NFE-independent (the sampled-coefficient basis size is
pinned to PRETRAIN_M so one checkpoint serves every NFE); the
coefficient-network stage is per-NFE (its basis size follows the grid).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    manifest_hash,
    replace_config,
    write_manifest,
)
from .datasets import TASKS, canonical_task_name
from .loops import evaluate_w2, run_phi_optimization, run_pretraining
from .models import load_checkpoint

PRETRAIN_M = 10  # basis size for sampled-coefficient pre-training

METHODS = ("alpha", "gamma_opt")
PAIRINGS = ("random", "ot")

QUICK_SCALE = dict(train_iters=1500, phi_iters=150, phi_batch=256)


def pretrain_config(
    base: ExperimentConfig, task: str, pairing: str, method: str, seed: int
) -> ExperimentConfig:
    """Pre-training stage config; independent of NFE and eval settings."""
    coeff = "alpha" if method == "alpha" else "gamma-random"
    return replace_config(
        base,
        task=canonical_task_name(task),
        coeff_mode=coeff,
        cond_mode="",
        seed=seed,
        out_dir="",
        nfe=10,  # neutral: pretraining never reads the grid
        **{"train.pairing": pairing, "mac.m": PRETRAIN_M},
    )


def phi_config(pre_cfg: ExperimentConfig, nfe: int) -> ExperimentConfig:
    """Coefficient-optimization stage config on top of a pre-training one."""
    return replace_config(
        pre_cfg, coeff_mode="gamma-mac", nfe=nfe, **{"mac.m": 0}
    )


def eval_config(pre_cfg: ExperimentConfig, method: str, nfe: int) -> ExperimentConfig:
    if method == "alpha":
        return replace_config(pre_cfg, coeff_mode="alpha", nfe=nfe)
    return phi_config(pre_cfg, nfe)


def run_cell(payload: dict) -> dict:
    """One benchmark cell (worker-safe): pretrain -> [phi-opt] -> eval.

    payload: base config dict + task/pairing/method/nfe/seed + cache_dir.
    """
    base = config_from_dict(payload["config"])
    task = payload["task"]
    pairing = payload["pairing"]
    method = payload["method"]
    nfe = payload["nfe"]
    seed = payload["seed"]
    cache = Path(payload["cache_dir"])

    pre_cfg = pretrain_config(base, task, pairing, method, seed)
    pre_dir = cache / "pretrain" / manifest_hash(pre_cfg)
    field_path = pre_dir / "field.ckpt"
    if not field_path.exists():
        write_manifest(pre_cfg, pre_dir)
        run_pretraining(pre_cfg, out_dir=pre_dir)
    field_params, _ = load_checkpoint(field_path)

    coeff_params = None
    if method == "gamma_opt":
        ph_cfg = phi_config(pre_cfg, nfe)
        ph_dir = cache / "phi" / manifest_hash(ph_cfg)
        coeff_path = ph_dir / "coeff.ckpt"
        if not coeff_path.exists():
            write_manifest(ph_cfg, ph_dir)
            run_phi_optimization(ph_cfg, field_params, out_dir=ph_dir)
        coeff_params, _ = load_checkpoint(coeff_path)
        ev_cfg = ph_cfg
    else:
        ev_cfg = eval_config(pre_cfg, method, nfe)

    ev_dir = cache / "eval" / manifest_hash(ev_cfg)
    result_path = ev_dir / "result.json"
    if result_path.exists():
        w2 = json.loads(result_path.read_text())["w2"]
    else:
        w2 = evaluate_w2(ev_cfg, field_params, coeff_params, eval_seed=seed)
        ev_dir.mkdir(parents=True, exist_ok=True)
        result_path.write_text(
            json.dumps({"w2": w2, "n_points": ev_cfg.eval.n_points})
        )
    return {
        "task": canonical_task_name(task),
        "pairing": pairing,
        "method": method,
        "nfe": nfe,
        "seed": seed,
        "w2": float(w2),
    }


def _worker_init():
    # one BLAS thread per worker; the pool provides the parallelism
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def quick_variant(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace_config(
        cfg,
        **{
            "train.iters": QUICK_SCALE["train_iters"],
            "phi.iters": QUICK_SCALE["phi_iters"],
            "phi.batch": QUICK_SCALE["phi_batch"],
        },
    )


def run_matrix(
    base: ExperimentConfig,
    cache_dir,
    tasks=tuple(TASKS),
    pairings=PAIRINGS,
    methods=METHODS,
    nfes=(5, 10),
    seeds=(0, 1, 2),
    jobs: int = 1,
    progress=None,
) -> list[dict]:
    """All requested cells, de-duplicated and cached; returns result rows."""
    payloads = [
        {
            "config": config_to_dict(base),
            "task": task,
            "pairing": pairing,
            "method": method,
            "nfe": nfe,
            "seed": seed,
            "cache_dir": str(cache_dir),
        }
        for task in tasks
        for pairing in pairings
        for method in methods
        for nfe in nfes
        for seed in seeds
    ]
    results = []
    if jobs <= 1:
        for i, payload in enumerate(payloads):
            results.append(run_cell(payload))
            if progress:
                progress(i + 1, len(payloads), results[-1])
        return results
    # group payloads by pretrain hash so one worker owns each checkpoint
    # (avoids two workers training the same stage concurrently)
    groups: dict[str, list[dict]] = {}
    for payload in payloads:
        cfg = pretrain_config(
            config_from_dict(payload["config"]), payload["task"],
            payload["pairing"], payload["method"], payload["seed"],
        )
        groups.setdefault(manifest_hash(cfg), []).append(payload)
    done = 0
    with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init) as pool:
        for chunk in pool.map(_run_group, list(groups.values())):
            for row in chunk:
                results.append(row)
                done += 1
                if progress:
                    progress(done, len(payloads), row)
    return results


def _run_group(payloads: list[dict]) -> list[dict]:
    return [run_cell(p) for p in payloads]


# -- aggregation and table output -------------------------------------------------


def aggregate(results: list[dict]) -> dict:
    """mean/std per (task, pairing, method, nfe), keyed by that tuple."""
    cells: dict[tuple, list[float]] = {}
    for row in results:
        key = (row["task"], row["pairing"], row["method"], row["nfe"])
        cells.setdefault(key, []).append(row["w2"])
    return {
        key: {
            "mean": float(np.mean(vals)),
            "std": float(np.std(vals)),
            "n": len(vals),
        }
        for key, vals in cells.items()
    }


_METHOD_LABEL = {
    ("random", "alpha"): "plain",
    ("random", "gamma_opt"): "adaptive+opt",
    ("ot", "alpha"): "plain-OT",
    ("ot", "gamma_opt"): "adaptive-OT+opt",
}


def table_rows(agg: dict, tasks, nfes) -> list[list]:
    """Long-format rows: one per (pairing, method, nfe), tasks as columns."""
    rows = []
    for pairing in PAIRINGS:
        for method in METHODS:
            for nfe in nfes:
                row = [_METHOD_LABEL[(pairing, method)], nfe]
                for task in tasks:
                    cell = agg.get((canonical_task_name(task), pairing, method, nfe))
                    row.append(
                        f"{cell['mean']:.3f}+-{cell['std']:.3f}" if cell else ""
                    )
                rows.append(row)
    return rows


def write_table(agg: dict, out_dir, tasks=tuple(TASKS), nfes=(5, 10)):
    """table.csv (long format) and table.md (paper-like grid)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = table_rows(agg, tasks, nfes)
    header = ["method", "nfe"] + [canonical_task_name(t) for t in tasks]
    csv_path = out_dir / "table.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(str(h) for h in header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    md_path = out_dir / "table.md"
    with open(md_path, "w") as fh:
        cols = [f"{canonical_task_name(t)} @{n}" for t in tasks for n in nfes]
        fh.write("| method | " + " | ".join(cols) + " |\n")
        fh.write("|---" * (len(cols) + 1) + "|\n")
        for pairing in PAIRINGS:
            for method in METHODS:
                label = _METHOD_LABEL[(pairing, method)]
                cells = []
                for task in tasks:
                    for nfe in nfes:
                        cell = agg.get(
                            (canonical_task_name(task), pairing, method, nfe)
                        )
                        cells.append(
                            f"{cell['mean']:.3f}±{cell['std']:.3f}" if cell else "—"
                        )
                fh.write(f"| {label} | " + " | ".join(cells) + " |\n")
    return csv_path, md_path
