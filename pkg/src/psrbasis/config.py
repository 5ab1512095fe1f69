"""Flat ``key = value`` experiment configuration files.

Lines starting with ``#`` are comments; values are ints, floats, booleans
(``true``/``false``), comma-separated lists, or bare strings. Unknown keys
and invalid values are reported with their line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

STRATEGIES = ("initial", "entropy", "bound")
PRESET_NAMES = ("paper-fixed-basis", "paper-vary-basis", "directional-two-state",
                "directional-random-pomdp", "smoke")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "two-state-noisy"
    env_seed: int = 0
    train_length: int = 200_000
    probe_length: int = 5000
    rollouts: int = 100
    basis_sizes: tuple = (100,)
    strategies: tuple = ("initial", "entropy", "bound")
    rounds: int = 10
    iter_num: int = 10
    block_size: int = 20
    entropy_threshold: object = "paper"     # float, or "paper" for the size schedule
    cluster_epsilon: object = "auto"        # float, or "auto" for 3 standard errors
    bound_margin: float = 1e-3
    candidate_max_len: int = 3
    min_support: int = 10
    history_max_len: int = 2
    history_max_count: int = 50
    model_rank: object = "auto"             # int, or "auto" = number of latent states
    eval_length: int = 20_000
    horizons: tuple = (1, 4)
    exact_truth: bool = True
    trials: int = 10
    seed: int = 0
    workers: int = 1
    output_dir: str = "results"
    name: str = field(default="experiment")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_POSITIVE_INTS = ("train_length", "probe_length", "rollouts", "rounds", "iter_num",
                  "block_size", "candidate_max_len", "min_support", "history_max_count",
                  "eval_length", "trials", "workers")


def _parse_scalar(text: str):
    low = text.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _coerce(key: str, raw: str, default):
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        kind = type(default[0]) if default else str
        return tuple(kind(x) for x in items)
    if isinstance(default, bool):
        v = _parse_scalar(raw)
        if not isinstance(v, bool):
            raise ValueError(f"expected true/false, got {raw!r}")
        return v
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, str) and key not in ("entropy_threshold", "cluster_epsilon", "model_rank"):
        return raw
    return _parse_scalar(raw)


def _validate(cfg: ExperimentConfig, where) -> None:
    def fail(key, msg):
        raise ConfigError(f"{where(key)}: {key}: {msg}")

    for key in _POSITIVE_INTS:
        if getattr(cfg, key) < 1:
            fail(key, "must be a positive integer")
    if cfg.history_max_len < 0:
        fail("history_max_len", "must be >= 0")
    if any(k < 2 for k in cfg.basis_sizes):
        fail("basis_sizes", "every basis size must be >= 2")
    if any(cfg.block_size >= k for k in cfg.basis_sizes):
        fail("block_size", "must be smaller than every basis size")
    bad = [s for s in cfg.strategies if s not in STRATEGIES]
    if bad:
        fail("strategies", f"unknown strategy {bad[0]!r}; choose from {', '.join(STRATEGIES)}")
    et = cfg.entropy_threshold
    if not (et == "paper" or (isinstance(et, (int, float)) and not isinstance(et, bool) and et > 0)):
        fail("entropy_threshold", "must be a positive number or 'paper'")
    ce = cfg.cluster_epsilon
    if not (ce == "auto" or (isinstance(ce, (int, float)) and not isinstance(ce, bool) and ce >= 0)):
        fail("cluster_epsilon", "must be a non-negative number or 'auto'")
    mr = cfg.model_rank
    if not (mr == "auto" or (isinstance(mr, int) and not isinstance(mr, bool) and mr >= 1)):
        fail("model_rank", "must be a positive integer or 'auto'")
    if cfg.bound_margin <= 0:
        fail("bound_margin", "must be > 0")
    if any(h < 1 for h in cfg.horizons):
        fail("horizons", "horizons must be >= 1")
    if cfg.eval_length < max(cfg.horizons) + 1:
        fail("eval_length", "must exceed the largest horizon")
    from .env import UnknownEnvironment, make_builtin
    try:
        make_builtin(cfg.env, cfg.env_seed)
    except UnknownEnvironment as exc:
        fail("env", str(exc))


def parse_config(text: str, source: str = "<config>",
                 overrides: dict | None = None) -> ExperimentConfig:
    defaults = ExperimentConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(ExperimentConfig)}
    values: dict = {}
    line_of: dict = {}
    items = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (x.strip() for x in stripped.split("=", 1))
        items.append((key, raw, f"{source}:{lineno}"))
    for key, raw in (overrides or {}).items():
        items.append((key, str(raw), "override"))
    for key, raw, where in items:
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw, known[key])
        except ValueError as exc:
            raise ConfigError(f"{where}: {key}: {exc}") from None
        line_of[key] = where
    cfg = ExperimentConfig(**values)
    _validate(cfg, lambda k: line_of.get(k, source))
    return cfg


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists() and str(path) in PRESET_NAMES:
        return load_preset(str(path), overrides)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), overrides)


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    return resources.files("psrbasis").joinpath("presets", f"{name}.cfg").read_text()


def load_preset(name: str, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(preset_text(name), f"preset:{name}", overrides)
