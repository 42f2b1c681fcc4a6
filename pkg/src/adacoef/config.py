"""Experiment configuration: TOML file + flag overrides -> one frozen record
that fully determines a run (manifest). All randomness derives from the
seeds recorded here."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import LpfKernel, SinusoidalBasis
from .datasets import Distribution2D, canonical_task_name, make_task
from .schedules import AlphaSchedule, TimeGrid, make_grid

ENV_OUT_ROOT = "MAC_TRANSPORT_OUT"

COEFF_MODES = ("alpha", "gamma-random", "gamma-mac")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LpfConfig:
    enabled: bool = False
    sigma: float = 1.0
    taps: int = 3


@dataclass(frozen=True)
class MacConfig:
    s: float = 0.1
    m: int = 0  # 0 -> M = nfe
    q: float = 0.0  # 0 -> 1 for ddpm/fm/si, 7 for edm
    lpf: LpfConfig = field(default_factory=LpfConfig)


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 20000
    batch: int = 256
    lr: float = 2e-4
    warmup: int = 100
    decay_power: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ema: float = 0.999
    pairing: str = "random"  # random | ot

    def __post_init__(self):
        if self.pairing not in ("random", "ot"):
            raise ConfigError(f"unknown pairing '{self.pairing}'")


@dataclass(frozen=True)
class PhiConfig:
    iters: int = 2000
    batch: int = 1024
    lr: float = 2e-4
    warmup: int = 100
    decay_power: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ema: float = 0.999


@dataclass(frozen=True)
class AdvConfig:
    iters: int = 2000
    batch: int = 256
    mode: str = "phi"  # phi | theta | both
    lr_field: float = 1e-5
    lr_coeff: float = 1e-4
    lr_critic: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8
    ema: float = 0.999
    d_warmup: int = 100
    vanilla: bool = False

    def __post_init__(self):
        if self.mode not in ("phi", "theta", "both"):
            raise ConfigError(f"unknown adversarial mode '{self.mode}'")


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    scale: float = 1.0
    moons_noise: float = 0.05
    eightg_radius: float = 5.0
    eightg_sigma: float = math.sqrt(0.1)
    gauss_sigma: float = 1.0
    normalize: bool = False


@dataclass(frozen=True)
class EvalConfig:
    n_points: int = 1000
    seeds: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "gauss->8g"
    framework: str = "si"
    coeff_mode: str = "alpha"
    cond_mode: str = ""  # "" -> none for alpha, full for gamma modes
    nfe: int = 10
    grid: str = "uniform"
    fm_sigma_min: float = 0.0
    seed: int = 0
    out_dir: str = ""
    mac: MacConfig = field(default_factory=MacConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    phi: PhiConfig = field(default_factory=PhiConfig)
    adv: AdvConfig = field(default_factory=AdvConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        object.__setattr__(self, "task", canonical_task_name(self.task))
        if self.framework not in ("si", "fm", "ddpm", "edm"):
            raise ConfigError(f"unknown framework '{self.framework}'")
        if self.coeff_mode not in COEFF_MODES:
            raise ConfigError(f"unknown coefficient mode '{self.coeff_mode}'")
        if self.grid not in ("uniform", "edm"):
            raise ConfigError(f"unknown grid '{self.grid}'")
        if self.cond_mode not in ("", "none", "scalar", "full"):
            raise ConfigError(f"unknown cond mode '{self.cond_mode}'")
        if self.nfe < 1:
            raise ConfigError("nfe must be >= 1")

    # -- derived values ------------------------------------------------------

    def resolved_cond_mode(self) -> str:
        if self.cond_mode:
            return self.cond_mode
        return "none" if self.coeff_mode == "alpha" else "full"

    def resolved_q(self) -> float:
        if self.mac.q > 0:
            return self.mac.q
        return 7.0 if self.framework == "edm" else 1.0

    def resolved_m(self) -> int:
        return self.mac.m if self.mac.m > 0 else self.nfe

    def output_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        root = Path(os.environ.get(ENV_OUT_ROOT, "runs"))
        tag = f"{self.task.replace('->', '-to-')}_{self.framework}_{self.coeff_mode}"
        return root / f"{tag}_nfe{self.nfe}_seed{self.seed}"


# -- TOML / dict round trip -----------------------------------------------------


def _to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _to_dict(cfg)


_NESTED = {
    "mac": MacConfig,
    "lpf": LpfConfig,
    "train": TrainConfig,
    "phi": PhiConfig,
    "adv": AdvConfig,
    "dataset": DatasetConfig,
    "eval": EvalConfig,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    def build(cls, payload, prefix=""):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - names
        if unknown:
            raise ConfigError(
                f"unknown config keys: {sorted(prefix + k for k in unknown)}"
            )
        kwargs = {}
        for name, value in payload.items():
            if name in _NESTED and isinstance(value, dict):
                kwargs[name] = build(_NESTED[name], value, prefix + name + ".")
            else:
                kwargs[name] = value
        return cls(**kwargs)

    return build(ExperimentConfig, data)


def replace_config(cfg: ExperimentConfig, **dotted) -> ExperimentConfig:
    """Functional update with dotted keys, e.g. replace_config(c, **{'mac.s': 0})."""
    data = config_to_dict(cfg)
    for key, value in dotted.items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return config_from_dict(data)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML config file; flat 'a.b.c' override keys win over it."""
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' conflicts with scalar key")
        node[parts[-1]] = value
    try:
        return config_from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def manifest_dict(cfg: ExperimentConfig) -> dict:
    """Effective merged config + provenance; a run is a pure function of it."""
    return {
        "config": config_to_dict(cfg),
        "git": _git_describe(),
        "package_version": _package_version(),
    }


def manifest_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_manifest(cfg: ExperimentConfig, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = manifest_dict(cfg)
    payload["manifest_hash"] = manifest_hash(cfg)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).parent,
        )
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _package_version() -> str:
    from . import __version__

    return __version__


# -- domain-object assembly -------------------------------------------------------


def build_schedule(cfg: ExperimentConfig) -> AlphaSchedule:
    kw = {}
    if cfg.framework == "fm":
        kw["sigma_min"] = cfg.fm_sigma_min
    return AlphaSchedule.for_framework(cfg.framework, **kw)


def build_basis(cfg: ExperimentConfig) -> SinusoidalBasis:
    sched = build_schedule(cfg)
    return SinusoidalBasis(
        m_count=cfg.resolved_m(),
        root_exponent=cfg.resolved_q(),
        horizon=sched.horizon,
    )


def build_grid(cfg: ExperimentConfig) -> TimeGrid:
    return make_grid(cfg.grid, cfg.framework, cfg.nfe)


def build_lpf(cfg: ExperimentConfig, dims: int = 2) -> LpfKernel | None:
    """Kernel only when enabled and there are enough dimensions (d >= 3)."""
    if not cfg.mac.lpf.enabled or dims < 3:
        return None
    return LpfKernel.gaussian(cfg.mac.lpf.taps, cfg.mac.lpf.sigma)


def build_task_distributions(cfg: ExperimentConfig):
    d = cfg.dataset
    target, source = make_task(
        cfg.task,
        scale=d.scale,
        sigma=d.gauss_sigma,
        radius=d.eightg_radius,
        component_sigma=d.eightg_sigma,
        noise=d.moons_noise,
        normalize=d.normalize,
    )
    if cfg.framework == "edm" and source.kind != "gaussian":
        raise ConfigError(
            "edm runs need a gaussian source (its start distribution is "
            "scaled white noise); pick a gauss->* task"
        )
    return target, source
