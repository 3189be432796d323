"""Declarative run configuration: dotted key=value tree, defaults, hashing.

Config files are plain text, one ``section.key = value`` per line with ``#``
comments. Flag overrides win over file values. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import ConfigError

CONDITION_VARIANTS = ("null", "text_simple", "text_caption", "coop", "orca",
                      "task_only", "visual_only")

# key -> (default, type); list types validated element-wise
DEFAULTS: dict[str, tuple] = {
    "backbone.backend_id": ("toy", str),
    "backbone.checkpoint_path": ("", str),
    "backbone.timestep": (0, int),
    "backbone.taps": (["down_1", "down_2", "down_3", "mid"], list),
    "condition.variant": ("orca", str),
    "condition.l_t": (4, int),
    "condition.l_v": (16, int),
    "condition.caption_key": ("", str),
    "compress.dim": (48, int),
    "policy.hidden_sizes": ([256, 256], list),
    "policy.lr": (1e-4, float),
    "policy.epochs": (100, int),
    "policy.batch_size": (32, int),
    "policy.loss.kind": ("mse", str),
    "policy.obs.stack": (1, int),
    "env.env_id": ("point_reach", str),
    "env.demos": (-1, int),  # -1 -> per-env default (5/5/2)
    "env.demo_seed": (0, int),
    "eval.episodes": (25, int),
    "eval.every": (10, int),
    "run.seed": (0, int),
    "run.out_dir": ("runs", str),
}

# accepted spelling that maps onto another canonical key
ALIASES = {"compress.taps": "backbone.taps"}


def parse_value(text: str):
    """Parse a scalar or list literal from its key=value spelling."""
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [parse_value(p) for p in inner.split(",")] if inner else []
    if "," in text:
        return [parse_value(p) for p in text.split(",")]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text.strip("\"'")


def _coerce(key: str, value):
    default, typ = DEFAULTS[key]
    if typ is list:
        if isinstance(value, (str, int, float)):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        elem = type(default[0]) if default else str
        try:
            return [elem(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot convert {value!r} to list of {elem.__name__}")
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if not isinstance(value, typ):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}")
    return value


class RunConfig:
    """Validated, fully defaulted configuration for one run."""

    def __init__(self, overrides: dict | None = None):
        merged = {k: (list(v) if isinstance(v, list) else v)
                  for k, (v, _) in DEFAULTS.items()}
        overrides = dict(overrides or {})
        for alias, target in ALIASES.items():
            if alias in overrides:
                value = overrides.pop(alias)
                if target in overrides and overrides[target] != value:
                    raise ConfigError(
                        f"{alias} and {target} given with conflicting values")
                overrides[target] = value
        unknown = sorted(set(overrides) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, value in overrides.items():
            merged[key] = _coerce(key, value)
        self._values = merged
        self._validate()

    def _validate(self):
        if self["condition.variant"] not in CONDITION_VARIANTS:
            raise ConfigError(
                f"condition.variant must be one of {CONDITION_VARIANTS}")
        if self["compress.dim"] <= 0:
            raise ConfigError("compress.dim must be positive")
        if self["policy.epochs"] < 1 or self["policy.batch_size"] < 1:
            raise ConfigError("policy.epochs and policy.batch_size must be >= 1")
        if self["policy.loss.kind"] not in ("mse", "l1"):
            raise ConfigError("policy.loss.kind must be mse or l1")
        if self["policy.obs.stack"] < 1:
            raise ConfigError("policy.obs.stack must be >= 1")
        if self["eval.every"] < 1:
            raise ConfigError("eval.every must be >= 1")

    def __getitem__(self, key: str):
        if key not in self._values:
            raise KeyError(key)
        value = self._values[key]
        return list(value) if isinstance(value, list) else value

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, list) else v)
                for k, v in self._values.items()}

    @property
    def taps(self) -> tuple[str, ...]:
        return tuple(self["backbone.taps"])

    @property
    def out_dir(self) -> Path:
        return Path(os.environ.get("ORCA_OUT") or self["run.out_dir"])

    def to_text(self) -> str:
        """Canonical key=value serialization (sorted keys)."""
        lines = []
        for key in sorted(self._values):
            value = self._values[key]
            if isinstance(value, list):
                rendered = "[" + ", ".join(str(v) for v in value) + "]"
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        merged = self.as_dict()
        merged.update(overrides)
        return RunConfig(merged)


def read_config_file(path: Path | str) -> dict:
    """Parse a key=value tree file into a dotted-key dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = parse_value(value)
    return out


def load_config(path: Path | str | None = None, overrides: dict | None = None) -> RunConfig:
    """File values merged with flag overrides (flag wins)."""
    values = read_config_file(path) if path else {}
    values.update(overrides or {})
    return RunConfig(values)


def describe_defaults() -> str:
    """One line per config key with its default, for --help output."""
    lines = ["config keys (override with --<key> <value> or --set <key>=<value>):"]
    for key in sorted(DEFAULTS):
        default, _ = DEFAULTS[key]
        lines.append(f"  {key:24s} default: {default!r}")
    lines.append("  compress.taps            alias for backbone.taps")
    lines.append("  env var ORCA_OUT         overrides run.out_dir")
    return "\n".join(lines)


def write_manifest(out_dir: Path | str, config: RunConfig, **extra) -> Path:
    """JSON run manifest embedding the config, its hash and any extras."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"config": config.as_dict(), "config_hash": config.config_hash(), **extra}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path
