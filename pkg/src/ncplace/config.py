"""Experiment configuration: ``key = value`` lines, lists comma-separated."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from .selection import STRATEGIES

TOPOLOGY_KINDS = ("placement", "estimator", "generate", "files")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One sweep: where topologies come from, what to place and how to simulate it.

    ``topology`` is ``placement`` or ``estimator`` (the built-in corpora),
    ``generate`` (one graph from the generator fields) or ``files``.
    ``seeds`` seed the random-placement baseline; ``sim_seed`` is the master
    seed shared by every simulated cell.
    """
    topology: str = "placement"
    topology_files: list[str] = field(default_factory=list)
    count: int = 10
    corpus_seed: int = 0
    n_nodes: int = 40
    n_sources: int = 1
    n_clients: int = 3
    parents: int = 4
    loss: float = 0.05
    topo_seed: int = 0
    G: int = 32
    packet_size: int = 512
    budgets: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    radii: list[int] = field(default_factory=lambda: [1, 2, 3])
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    runs: int = 100
    sim_seed: int = 0
    workers: int = 1
    output: str = "results"

    def validate(self) -> "ExperimentConfig":
        if self.topology not in TOPOLOGY_KINDS:
            raise ConfigError(f"topology must be one of {TOPOLOGY_KINDS}, got {self.topology!r}")
        if self.topology == "files" and not self.topology_files:
            raise ConfigError("topology = files needs topology_files")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if "local" in self.strategies and not self.radii:
            raise ConfigError("local strategy needs at least one radius")
        if "random" in self.strategies and not self.seeds:
            raise ConfigError("random strategy needs explicit seeds")
        if any(r < 1 for r in self.radii):
            raise ConfigError("radii must be >= 1")
        if any(a < 0 for a in self.budgets):
            raise ConfigError("budgets must be >= 0")
        for name in ("count", "G", "packet_size", "runs", "workers", "n_nodes", "parents"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.loss < 1.0:
            raise ConfigError("loss must lie in [0, 1)")
        return self

    def with_overrides(self, **values) -> "ExperimentConfig":
        """Copy with the non-None ``values`` applied."""
        changes = {k: v for k, v in values.items() if v is not None}
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes).validate()

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"


_HINTS = get_type_hints(ExperimentConfig)


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    if hint == list[int]:
        return [int(x) for x in raw.split(",") if x.strip()]
    if hint == list[str]:
        return [x.strip() for x in raw.split(",") if x.strip()]
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    return raw


def loads(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(**values).validate()


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())
