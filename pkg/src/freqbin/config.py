"""YAML experiment configuration with a fixed key schema.

Every block is a dataclass; unknown keys, wrong types and out-of-range values
are reported with their dotted field path.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .metrics import TARGET_PATTERNS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridBlock:
    dimension: int | None = None  # derived from the target when omitted
    spacing_ghz: float = 15.0
    guard_bins: int = 12


@dataclass(frozen=True)
class SourceBlock:
    target: str = "Phi1"
    pattern: list | None = None  # explicit ring sign pattern overriding the target
    rings_off: list = field(default_factory=list)  # rings detuned after programming
    indistinguishability: float | str = 1.0  # number, or "jsa" to integrate the ring JSAs
    q_signal: float = 5.7e4
    q_idler: float = 7.8e4
    detunings_ghz: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class MeasurementBlock:
    rate_hz: float = 1.0e4
    integration_s: float = 1.0
    loss: list | None = None
    seed: int | None = None
    z_leakage: float = 0.0
    noiseless: bool = False


@dataclass(frozen=True)
class TomographyBlock:
    particles: int = 60
    iterations: int = 2000
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int | None = None
    cost_threshold: float = 5.0


@dataclass(frozen=True)
class MetricsBlock:
    cglmp: str = "optimized"
    resamples: int = 200
    seed: int | None = None


@dataclass(frozen=True)
class FringeBlock:
    pair: list = field(default_factory=lambda: [0, 1])
    points: int = 36
    half_spacing: bool = False
    spacings_ghz: list = field(default_factory=lambda: [15.0])


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int | None = None
    grid: GridBlock = field(default_factory=GridBlock)
    source: SourceBlock = field(default_factory=SourceBlock)
    measurement: MeasurementBlock = field(default_factory=MeasurementBlock)
    tomography: TomographyBlock = field(default_factory=TomographyBlock)
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    fringe: FringeBlock = field(default_factory=FringeBlock)

    def seed_for(self, block: str) -> int:
        """Block seed, falling back to the top-level seed; stochastic steps need one."""
        value = getattr(getattr(self, block), "seed", None)
        if value is None:
            value = self.seed
        if value is None:
            raise ConfigError(f"{block}.seed: a seed is required for this stochastic step (set it or the top-level seed)")
        return int(value)

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Override every seed (the CLI ``--seed`` flag)."""
        return dataclasses.replace(
            self,
            seed=seed,
            measurement=dataclasses.replace(self.measurement, seed=seed),
            tomography=dataclasses.replace(self.tomography, seed=seed),
            metrics=dataclasses.replace(self.metrics, seed=seed),
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_type(value, hint, where):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        for a in args:
            try:
                return _check_type(value, a, where)
            except ConfigError:
                continue
        raise ConfigError(f"{where}: value {value!r} does not match any allowed type")
    if hint is type(None):
        if value is None:
            return None
        raise ConfigError(f"{where}: expected null")
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if hint is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    if hint is list:
        if isinstance(value, list):
            return value
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    raise ConfigError(f"{where}: unsupported schema type {hint}")


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where + '.' if where else ''}{unknown[0]}: unknown key (allowed: {', '.join(sorted(names))})")
    kwargs = {}
    for name, value in data.items():
        path = f"{where}.{name}" if where else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, path)
        else:
            kwargs[name] = _check_type(value, hint, path)
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    g, s, m, t, mt, fr = cfg.grid, cfg.source, cfg.measurement, cfg.tomography, cfg.metrics, cfg.fringe
    if s.pattern is None and s.target not in TARGET_PATTERNS:
        raise ConfigError(f"source.target: unknown target {s.target!r}; choose from {', '.join(TARGET_PATTERNS)}")
    if s.pattern is not None:
        if len(s.pattern) != 4 or any(v not in (-1, 0, 1) for v in s.pattern) or not any(s.pattern):
            raise ConfigError("source.pattern: need four entries from {-1, 0, 1} with at least one ring on")
    if any(not isinstance(r, int) or not 0 <= r <= 3 for r in s.rings_off):
        raise ConfigError("source.rings_off: ring indices must be integers 0..3")
    if isinstance(s.indistinguishability, str):
        if s.indistinguishability != "jsa":
            raise ConfigError("source.indistinguishability: give a number in [0, 1] or 'jsa'")
    elif not 0 <= s.indistinguishability <= 1:
        raise ConfigError("source.indistinguishability: must lie in [0, 1]")
    if len(s.detunings_ghz) != 4:
        raise ConfigError("source.detunings_ghz: need one detuning per ring (4 values)")
    if s.q_signal <= 0 or s.q_idler <= 0:
        raise ConfigError("source.q_signal/q_idler: quality factors must be positive")
    if g.dimension is not None and g.dimension not in (2, 3, 4):
        raise ConfigError("grid.dimension: supported dimensions are 2, 3, 4")
    if g.spacing_ghz <= 0:
        raise ConfigError("grid.spacing_ghz: must be positive")
    if g.guard_bins < 12:
        raise ConfigError("grid.guard_bins: need at least 12 guard bins")
    if m.rate_hz <= 0 or m.integration_s <= 0:
        raise ConfigError("measurement.rate_hz/integration_s: must be positive")
    if not 0 <= m.z_leakage <= 1:
        raise ConfigError("measurement.z_leakage: must lie in [0, 1]")
    if t.particles < 2 or t.iterations < 1:
        raise ConfigError("tomography: need at least 2 particles and 1 iteration")
    if mt.cglmp not in ("canonical", "optimized"):
        raise ConfigError("metrics.cglmp: choose 'canonical' or 'optimized'")
    if mt.resamples < 0:
        raise ConfigError("metrics.resamples: must be non-negative")
    if len(fr.pair) != 2 or fr.pair[0] == fr.pair[1]:
        raise ConfigError("fringe.pair: need two distinct bin indices")
    if fr.points < 1 or any(not sp > 0 for sp in fr.spacings_ghz):
        raise ConfigError("fringe.points/spacings_ghz: must be positive")
    return cfg


def parse_config(data) -> ExperimentConfig:
    return _validate(_build(ExperimentConfig, data, ""))


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config({})
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(data)
