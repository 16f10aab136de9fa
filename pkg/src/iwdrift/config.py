"""Line-oriented run configuration.

Format, one assignment per line::

    # comment
    trainer.total_env_steps = 5000000
    rand.B = 0.8, 1.0
    vehicle.drivetrain = rwd

Sections map onto the dataclasses below. Unknown sections or keys are
errors, as are values that do not parse as the field's type. Every field
keeps its documented default when not assigned.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .env import EnvConfig, RandomizationConfig, RewardWeights
from .params import Drivetrain, TireParams, VehicleParams
from .paths import RandomPathConfig
from .ppo import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    path: str = "eight"
    n_trials: int = 6
    laps: float = 1.0
    stochastic: bool = False
    # evaluate without randomization: nominal tires, no disturbance, start at rest at s = 0
    nominal: bool = False
    plots: bool = True
    ablation_trials: int = 100
    # training budget for each ablation row; 0 means trainer.total_env_steps
    ablation_env_steps: int = 0


@dataclass(frozen=True)
class RunConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    tire: TireParams = field(default_factory=TireParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    seed: int = 0
    threads: int = 1

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed), trainer=replace(self.trainer, seed=int(seed)))


# section name -> path of attribute names from RunConfig
SECTIONS = {
    "vehicle": ("vehicle",),
    "tire": ("tire",),
    "env": ("env",),
    "reward": ("env", "weights"),
    "rand": ("env", "rand"),
    "paths": ("env", "path_cfg"),
    "trainer": ("trainer",),
    "eval": ("eval",),
    "run": (),
}
_NESTED = {"weights", "rand", "path_cfg"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, enum.Enum):
        for member in type(default):
            if str(member.value).lower() == text.lower():
                return member
        raise ValueError(f"expected one of {[m.value for m in type(default)]}")
    if isinstance(default, int):
        return int(text.replace("_", ""))
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p for p in text.strip("[]()").split(",") if p.strip()]
        if len(parts) != len(default):
            raise ValueError(f"expected {len(default)} comma-separated values")
        return tuple(float(p) for p in parts)
    if isinstance(default, str):
        return text
    raise ValueError(f"unsupported field type {type(default).__name__}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _get(cfg, path):
    obj = cfg
    for name in path:
        obj = getattr(obj, name)
    return obj


def _set(cfg, path, value):
    if not path:
        return value
    head, rest = path[0], path[1:]
    return replace(cfg, **{head: _set(getattr(cfg, head), rest, value)})


def _leaf_fields(obj):
    return [f for f in fields(obj) if f.name not in _NESTED]


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = base or RunConfig()
    updates: dict[tuple, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        lhs, rhs = (p.strip() for p in line.split("=", 1))
        if lhs.count(".") != 1:
            raise ConfigError(f"{where}: key must look like section.key, got {lhs!r}")
        section, key = lhs.split(".")
        if section not in SECTIONS:
            raise ConfigError(f"{where}: unknown section {section!r}")
        path = SECTIONS[section]
        target = _get(cfg, path) if path else cfg
        names = {f.name for f in _leaf_fields(target)} if path else {"seed", "threads"}
        if key not in names:
            raise ConfigError(f"{where}: unknown key {lhs!r}")
        try:
            value = _parse_value(rhs, getattr(target, key))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {lhs}: {exc}") from None
        updates.setdefault(path, {})[key] = value
    # apply deepest sections first so parent replacement keeps nested updates
    for path in sorted(updates, key=len, reverse=True):
        try:
            if path:
                cfg = _set(cfg, path, replace(_get(cfg, path), **updates[path]))
            else:
                cfg = replace(cfg, **updates[path])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: invalid {'.'.join(path) or 'run'} settings: {exc}") from None
    return cfg.with_seed(cfg.seed) if () in updates and "seed" in updates[()] else cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, source=str(p))


def dump_config(cfg: RunConfig) -> str:
    """Serialize every field; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for section, path in SECTIONS.items():
        if not path:
            lines += [f"run.seed = {cfg.seed}", f"run.threads = {cfg.threads}"]
            continue
        obj = _get(cfg, path)
        for f in _leaf_fields(obj):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def config_dict(cfg: RunConfig) -> dict:
    def conv(v):
        if isinstance(v, enum.Enum):
            return v.value
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


__all__ = ["ConfigError", "EvalOptions", "RunConfig", "parse_config", "load_config", "dump_config",
           "config_dict", "Drivetrain", "RandomizationConfig", "RewardWeights", "RandomPathConfig"]
