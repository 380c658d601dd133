"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Malformed or unknown configuration entries."""


def coerce(raw: str, like: Any, key: str = "?") -> Any:
    """Parse ``raw`` to the type of the default value ``like``."""
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            try:
                return int(raw)
            except ValueError:
                f = float(raw)  # allow "1e5"
                if not f.is_integer():
                    raise
                return int(f)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        out[k] = v.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "runs"

    @classmethod
    def resolve(
        cls,
        experiment: str,
        defaults: Mapping[str, Any],
        overrides: Mapping[str, str],
        seed: int = 0,
        out_dir: str = "runs",
    ) -> "ExperimentConfig":
        """Merge string overrides into typed defaults; unknown keys are rejected."""
        params = dict(defaults)
        unknown = sorted(set(overrides) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown keys for {experiment}: {', '.join(unknown)}")
        for k, v in overrides.items():
            params[k] = coerce(v, defaults[k], k)
        return cls(experiment, params, int(seed), str(out_dir))

    def manifest(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "params": dict(sorted(self.params.items())),
        }
