"""Experiment manifests.

A manifest is plain text with ``[section]`` headers and ``key = value`` lines;
``#`` starts a comment. Lists are comma-separated. Unknown sections or keys are
rejected with the line they appear on.

    [system]
    drifts = 0, 0
    sigmas = 1, 1
    initial = 0, 0

    [simulation]
    T = 1
    dt = 0.001

    [mc]
    seed = 7
    n_paths = 20000
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import ConfigError, SpecError
from .infinite import InfiniteSpec, linear_initial, validate_infinite
from .model import SystemSpec, validate_spec


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(s: str) -> int:
    return int(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(p.strip()) for p in s.split(",") if p.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "system": {
        "drifts": _floats, "sigmas": _floats, "sigmas2": _floats, "initial": _floats,
        "infinite": _bool, "M": _int, "gamma1": _float, "gamma2": _float,
        "initial_slope": _float, "initial_offset": _float,
    },
    "simulation": {
        "T": _float, "dt": _float, "scheme": str, "epsilon": _float,
        "decimation": _int, "safety_margin": _float,
    },
    "mc": {
        "n_paths": _int, "seed": _int, "epsilons": _floats, "checks": _names,
        "occupation_epsilon": _float,
    },
    "output": {
        "trajectory": str, "active_set": str, "report": str, "curve": str, "results": str,
    },
}


@dataclass
class ExperimentConfig:
    source: str
    values: dict[str, dict[str, object]] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def require(self, section: str, key: str):
        if key not in self.values.get(section, {}):
            raise ConfigError(f"missing required key [{section}] {key}", key=key)
        return self.values[section][key]

    def line_of(self, section: str, key: str) -> int | None:
        return self.lines.get((section, key))

    def fail(self, section: str, key: str, message: str) -> ConfigError:
        return ConfigError(f"[{section}] {key}: {message}", key=key, line=self.line_of(section, key))

    # -- typed views -----------------------------------------------------------

    @property
    def infinite(self) -> bool:
        return bool(self.get("system", "infinite", False))

    def variances(self) -> tuple[float, ...]:
        s, s2 = self.get("system", "sigmas"), self.get("system", "sigmas2")
        if (s is None) == (s2 is None):
            raise ConfigError("[system] needs exactly one of sigmas, sigmas2", key="sigmas")
        if s2 is not None:
            return tuple(s2)
        return tuple(v * v for v in s)

    def sigmas(self) -> tuple[float, ...]:
        s, s2 = self.get("system", "sigmas"), self.get("system", "sigmas2")
        if (s is None) == (s2 is None):
            raise ConfigError("[system] needs exactly one of sigmas, sigmas2", key="sigmas")
        if s is not None:
            return tuple(s)
        if any(v <= 0 for v in s2):
            raise self.fail("system", "sigmas2", "variances must be positive")
        return tuple(math.sqrt(v) for v in s2)

    def system(self) -> SystemSpec:
        if self.infinite:
            raise ConfigError("[system] infinite = true; a finite system was expected", key="infinite")
        spec = SystemSpec(
            drifts=self.require("system", "drifts"),
            sigmas=self.sigmas(),
            initial=self.require("system", "initial"),
        )
        try:
            validate_spec(spec, allow_ties=True)
        except SpecError as exc:
            raise ConfigError(f"[system] {exc}", key="system") from exc
        return spec

    def infinite_system(self) -> InfiniteSpec:
        m = self.require("system", "M")
        spec = InfiniteSpec(
            M=m,
            head_drifts=tuple(self.require("system", "drifts")),
            head_sigmas=self.sigmas(),
            gamma1=self.require("system", "gamma1"),
            gamma2=self.require("system", "gamma2"),
            initial_fn=linear_initial(self.require("system", "initial_slope"),
                                      self.get("system", "initial_offset", 0.0)),
        )
        try:
            validate_infinite(spec, max(m, 1))
        except (SpecError, ValueError) as exc:
            raise ConfigError(f"[system] {exc}", key="system") from exc
        return spec

    def seed(self) -> int:
        seed = self.require("mc", "seed")
        if not 0 <= seed < 1 << 64:
            raise self.fail("mc", "seed", "seed must be in [0, 2**64)")
        return seed

    def epsilons(self) -> tuple[float, ...]:
        eps = self.require("mc", "epsilons")
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise self.fail("mc", "epsilons", "must be positive and strictly decreasing")
        return eps


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig(source=source)
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", key=section, line=lineno)
            cfg.values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", key=key, line=lineno)
        conv = SCHEMA[section].get(key)
        if conv is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]", key=key, line=lineno)
        if key in cfg.values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", key=key, line=lineno)
        try:
            cfg.values[section][key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})", key=key, line=lineno) from None
        cfg.lines[(section, key)] = lineno
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))
