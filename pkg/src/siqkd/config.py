"""YAML scenario files: strict parsing, defaults, serialisation.

Every section maps one-to-one onto a parameter dataclass; unknown keys are
rejected so a typo can never silently fall back to a default. See
``configs/README.md`` for the schema.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .channel import ChannelParams, DetectorParams
from .circuits import CarverParams, TimebinParams
from .modulators import CdmParams, TopmParams
from .pipeline import Scenario
from .protocol import ProtocolConfig, QkdProtocol


class ConfigError(Exception):
    """Base class; the CLI maps every subclass to exit code 2."""


class ConfigFileError(ConfigError):
    pass


class ConfigSchemaError(ConfigError):
    pass


class ConfigInvariantError(ConfigError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"start must be >= 0, got {self.start}")
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.stop < self.start:
            raise ValueError(f"stop must be >= start, got {self.stop} < {self.start}")

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        try:
            a, b, c = (float(x) for x in text.split(":"))
        except ValueError:
            raise ValueError(f"sweep must look like start:stop:step, got {text!r}") from None
        return cls(a, b, c)

    def distances(self) -> list[float]:
        n = int(round((self.stop - self.start) / self.step))
        pts = [self.start + i * self.step for i in range(n + 1)]
        return [round(d, 12) for d in pts if d <= self.stop + 1e-9]


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    name: str = "scenario"
    formats: tuple[str, ...] = ("csv",)

    def __post_init__(self):
        object.__setattr__(self, "formats", tuple(self.formats))
        bad = set(self.formats) - {"csv", "svg"}
        if bad:
            raise ValueError(f"formats must be drawn from csv, svg; got {sorted(bad)}")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = field(default_factory=Scenario)
    seed: int = 0
    num_symbols: int = 1_000_000
    sweep: SweepSpec | None = None
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.num_symbols < 0:
            raise ValueError(f"num_symbols must be >= 0, got {self.num_symbols}")


SECTIONS = {
    "protocol": ProtocolConfig,
    "channel": ChannelParams,
    "detector": DetectorParams,
    "topm": TopmParams,
    "cdm": CdmParams,
    "carver": CarverParams,
    "timebin": TimebinParams,
}
TOP_LEVEL = {"seed", "num_symbols", "sweep", "output", *SECTIONS}


def _coerce(value, default, where: str):
    """Type-check ``value`` against the kind of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigSchemaError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, enum.Enum):
        return value
    if isinstance(default, (int, float)) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms such as 1.72e9 as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigSchemaError(f"{where}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigSchemaError(f"{where}: expected a number, got {value!r}")
        return int(value) if isinstance(default, int) and isinstance(value, int) else float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigSchemaError(f"{where}: expected a list, got {value!r}")
        return tuple(_coerce(v, default[0], where) if default else v for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigSchemaError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, section: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigSchemaError(f"{section}: expected a mapping, got {type(data).__name__}")
    data = dict(data)
    if cls is ProtocolConfig and "name" in data:
        data["protocol"] = data.pop("name")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigSchemaError(f"{section}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls() if cls is not SweepSpec else None
    for key, value in data.items():
        default = getattr(defaults, key) if defaults is not None else 0.0
        kwargs[key] = _coerce(value, default, f"{section}.{key}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigInvariantError(f"{section}: {exc}") from None


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigSchemaError("config root must be a mapping")
    unknown = sorted(set(data) - TOP_LEVEL)
    if unknown:
        raise ConfigSchemaError(f"unknown top-level key(s) {', '.join(unknown)}")
    parts = {name: _build(cls, data.get(name), name) for name, cls in SECTIONS.items()}
    scenario = Scenario(**parts)
    sweep = data.get("sweep")
    if sweep is not None:
        sweep = SweepSpec.parse(sweep) if isinstance(sweep, str) else _build(SweepSpec, sweep, "sweep")
    output = _build(OutputSpec, data.get("output"), "output")
    top = {}
    for key in ("seed", "num_symbols"):
        if key in data:
            v = data[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigSchemaError(f"{key}: expected an integer, got {v!r}")
            top[key] = v
    try:
        return ScenarioConfig(scenario=scenario, sweep=sweep, output=output, **top)
    except ValueError as exc:
        raise ConfigInvariantError(str(exc)) from None


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigFileError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigSchemaError(f"{path}: not valid YAML: {exc}") from None
    return config_from_dict(data or {})


def _plain(obj):
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, enum.Enum):
            v = v.value
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def config_to_dict(cfg: ScenarioConfig) -> dict:
    sc = cfg.scenario
    proto = _plain(sc.protocol)
    proto = {"name": proto.pop("protocol"), **proto}
    data = {"seed": cfg.seed, "num_symbols": cfg.num_symbols, "protocol": proto}
    for name in list(SECTIONS)[1:]:
        data[name] = _plain(getattr(sc, name))
    data["sweep"] = _plain(cfg.sweep) if cfg.sweep else None
    data["output"] = _plain(cfg.output)
    return data


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def with_overrides(
    cfg: ScenarioConfig,
    protocol: str | None = None,
    distance_km: float | None = None,
    sweep: str | None = None,
    seed: int | None = None,
    symbols: int | None = None,
    out: str | None = None,
    formats: str | None = None,
) -> ScenarioConfig:
    """Apply CLI flag overrides, re-validating everything they touch."""
    try:
        sc = cfg.scenario
        if protocol is not None:
            sc = replace(sc, protocol=replace(sc.protocol, protocol=QkdProtocol.parse(protocol)))
        if distance_km is not None:
            sc = sc.at_distance(distance_km)
        new = replace(cfg, scenario=sc)
        if sweep is not None:
            new = replace(new, sweep=SweepSpec.parse(sweep))
        if seed is not None:
            new = replace(new, seed=seed)
        if symbols is not None:
            new = replace(new, num_symbols=symbols)
        if out is not None:
            new = replace(new, output=replace(new.output, dir=out))
        if formats is not None:
            fmts = tuple(f.strip() for f in formats.split(",") if f.strip())
            new = replace(new, output=replace(new.output, formats=fmts))
        return new
    except ValueError as exc:
        raise ConfigInvariantError(str(exc)) from None
