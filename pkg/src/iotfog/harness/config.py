"""Scenario configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from iotfog.fognet import Topology

DEFAULT_SEED_PANEL = tuple(range(1, 21))


class ConfigError(ValueError):
    """Invalid or unparseable scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    sizes: tuple[int, ...] = (10, 50, 100)
    fog_fraction: float = 0.1
    min_fog: int = 4
    target_indices: tuple[int, ...] = (1, 3, 5, 8, 10)
    seed: int = 7
    tx_load: int = 20
    topology: Topology = Topology.FOG_STAR
    base_latency_ms: float = 5.0
    jitter_ms: float = 1.0
    tx_slot_ms: float = 1.0
    ttl: int | None = None
    retries: int = 2
    wave_timeout_ms: float | None = None
    view_timeout_ms: float | None = None
    commit_bound_ms: float = 60_000.0

    def fog_count(self, size: int) -> int:
        return min(size, max(self.min_fog, int(self.fog_fraction * size + 0.5)))

    def validate(self) -> None:
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ConfigError("sizes must be a non-empty list of positive integers")
        if len(set(self.sizes)) != len(self.sizes):
            raise ConfigError("sizes must be distinct")
        if not 0 < self.fog_fraction <= 1:
            raise ConfigError("fog_fraction must be in (0, 1]")
        if self.min_fog < 4:
            raise ConfigError("min_fog must be at least 4 so one faulty peer is tolerated")
        if not self.target_indices:
            raise ConfigError("target_indices must not be empty")
        for size in self.sizes:
            if self.fog_count(size) < 4:
                raise ConfigError(f"size {size} yields fewer than 4 fog peers")
            if self.fog_count(size) >= size:
                raise ConfigError(f"size {size} leaves no IoT devices to measure")
            bad = [t for t in self.target_indices if not 1 <= t <= size]
            if bad:
                raise ConfigError(f"target indices {bad} outside 1..{size}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.tx_load < 1:
            raise ConfigError("tx_load must be positive")
        if self.base_latency_ms <= 0 or self.jitter_ms < 0 or self.tx_slot_ms < 0:
            raise ConfigError("latencies must be positive and jitter/slot non-negative")
        if self.retries < 1:
            raise ConfigError("retries must be at least 1")
        if self.ttl is not None and not 0 <= self.ttl <= 255:
            raise ConfigError("ttl must be in 0..255")
        for name in ("wave_timeout_ms", "view_timeout_ms"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive")


def _parse_value(name: str, raw: str, default: object) -> object:
    raw = raw.strip()
    try:
        if name in ("sizes", "target_indices"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if name == "topology":
            return Topology(raw.lower())
        if name in ("ttl", "wave_timeout_ms", "view_timeout_ms"):
            if raw.lower() in ("", "auto", "none"):
                return None
            return int(raw) if name == "ttl" else float(raw)
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    raise ConfigError(f"unsupported key {name}")


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    base = base or ScenarioConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(ScenarioConfig)}
    updates: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _parse_value(key, value, defaults[key])
    cfg = dataclasses.replace(base, **updates)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in fields(ScenarioConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, Topology):
            value = value.value
        elif value is None:
            value = "auto"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
