"""Run configuration, validation and run manifests.

A run config is one JSON object with a global ``seed``, an ``out_dir`` and one
block per command.  Missing fields take defaults; unknown fields are rejected.
Every command writes ``manifest.json`` holding the fully resolved config, so
``--config manifest.json`` reruns the command exactly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Optional

from .autodiff import atomic_write
from .trainer import TrainConfig

OUT_DIR_ENV = "JSSLAB_OUT_DIR"
WORKERS_ENV = "JSSLAB_WORKERS"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config: " + "; ".join(problems))


@dataclass
class GenerateBlock:
    n_jobs: int = 5
    n_machines: int = 10
    n_branch: int = 1
    count: int = 50
    branch_probs: list = field(default_factory=lambda: [0.5, 0.5])


@dataclass
class EvaluateBlock:
    policies: list = field(default_factory=lambda: ["SPT"])
    checkpoints: list = field(default_factory=list)
    instances: Optional[str] = None
    runs: int = 50
    reference: str = "auto"
    alpha: float = 0.2


@dataclass
class SolveBlock:
    scenario: Optional[str] = None
    node_budget: int = 5_000_000
    expected: bool = False


@dataclass
class ReplayBlock:
    trace: Optional[str] = None
    instance: Optional[str] = None


@dataclass
class AblateBlock:
    checkpoints: dict = field(default_factory=dict)
    instance_sets: list = field(default_factory=list)
    runs: int = 50


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    generate: GenerateBlock = field(default_factory=GenerateBlock)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvaluateBlock = field(default_factory=EvaluateBlock)
    solve: SolveBlock = field(default_factory=SolveBlock)
    replay: ReplayBlock = field(default_factory=ReplayBlock)
    ablate: AblateBlock = field(default_factory=AblateBlock)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_BLOCKS = {"generate": GenerateBlock, "train": TrainConfig, "evaluate": EvaluateBlock,
           "solve": SolveBlock, "replay": ReplayBlock, "ablate": AblateBlock}
_TOP = {"seed", "out_dir"} | set(_BLOCKS)


def _check_type(name: str, value: Any, default: Any, problems: list[str]) -> None:
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        problems.append(f"field '{name}' expects {type(default).__name__}, got {type(value).__name__}")


def config_from_dict(data: dict) -> RunConfig:
    """Validate and fill defaults; raises ConfigError naming every offending field."""
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])
    problems = [f"unknown field '{k}'" for k in data if k not in _TOP]
    base = RunConfig()
    seed = data.get("seed", base.seed)
    _check_type("seed", seed, 0, problems)
    out_dir = data.get("out_dir", base.out_dir)
    _check_type("out_dir", out_dir, "", problems)
    blocks = {}
    for name, cls in _BLOCKS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            problems.append(f"field '{name}' must be an object")
            continue
        defaults = {f.name: getattr(getattr(base, name), f.name) for f in dataclasses.fields(cls)}
        for k, v in raw.items():
            if k not in defaults:
                problems.append(f"unknown field '{name}.{k}'")
            else:
                _check_type(f"{name}.{k}", v, defaults[k], problems)
        if name == "train" and "seed" not in raw:
            raw = {**raw, "seed": seed}
        blocks[name] = raw
    if problems:
        raise ConfigError(problems)
    try:
        built = {name: cls(**{k: v for k, v in blocks[name].items()}) for name, cls in _BLOCKS.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from None
    return RunConfig(seed=seed, out_dir=out_dir, **built)


def load_config(path) -> RunConfig:
    """Read a config file, or the config embedded in a run manifest."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON in {path}: {exc}"]) from None
    if isinstance(data, dict) and "config_hash" in data and "config" in data:
        data = data["config"]
    return config_from_dict(data)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()


def code_version() -> str:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "0+unknown"
    h = hashlib.sha256()
    src = Path(__file__).resolve().parent
    for p in sorted(src.glob("*.py")) + sorted(src.glob("*.pyx")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{version}+src.{h.hexdigest()[:12]}"


def manifest(command: str, cfg: RunConfig, outputs: list[str]) -> dict:
    return {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "code_version": code_version(),
        "outputs": outputs,
    }


def write_json(path, obj) -> None:
    atomic_write(Path(path), (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


def save_manifest(out_dir, command: str, cfg: RunConfig, outputs: list[str]) -> Path:
    p = Path(out_dir) / "manifest.json"
    write_json(p, manifest(command, cfg, outputs))
    return p


def default_out_dir(cfg_value: Optional[str] = None) -> str:
    return os.environ.get(OUT_DIR_ENV) or cfg_value or "runs"


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{WORKERS_ENV} must be an integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError([f"{WORKERS_ENV} must be >= 1"])
    return n
