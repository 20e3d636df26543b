"""Run configuration read from an INI-style file.

Sections::

    [data]      path, reference_only
    [model]     preset or variant/covariance/hierarchical_scale_variances/wishart_convention
    [priors]    PriorConfig fields
    [sampler]   SamplerConfig fields
    [outputs]   directory, tables, curves, figures, grid_size, thresholds
    [compare]   specs = V1, V2, MetaRegression  (presets)
    [compare:NAME]  one ModelSpec per section, same keys as [model]

``thresholds`` lists extra summary points as ``TEST:value`` pairs separated by
commas. Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .inference.sampler import SamplerConfig
from .model import ModelSpec

__all__ = ["OutputConfig", "RunConfig", "ConfigError", "load_run_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OutputConfig:
    directory: Path = Path("out")
    tables: bool = True
    curves: bool = True
    figures: bool = True
    grid_size: int = 100
    thresholds: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    data_path: Path
    spec: ModelSpec
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    reference_only: bool = False
    compare: tuple = ()

    def with_overrides(self, *, seed: int | None = None, out: str | Path | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sampler=replace(cfg.sampler, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, outputs=replace(cfg.outputs, directory=Path(out)))
        return cfg

    def to_text(self) -> str:
        """Canonical text form; its hash identifies the run."""
        cp = configparser.ConfigParser()
        cp.read_string(self.spec.to_config())
        # the data enter the run through their fingerprint, not their location
        cp["data"] = {"reference_only": str(self.reference_only).lower()}
        cp["sampler"] = {k: (",".join(v) if isinstance(v, list) else str(v))
                         for k, v in self.sampler.to_dict().items()}
        o = self.outputs
        cp["outputs"] = {"tables": str(o.tables).lower(), "curves": str(o.curves).lower(),
                         "figures": str(o.figures).lower(), "grid_size": str(o.grid_size),
                         "thresholds": ",".join(f"{t}:{v!r}" for t, v in o.thresholds)}
        for label, spec in self.compare:
            sub = configparser.ConfigParser()
            sub.read_string(spec.to_config())
            cp[f"compare:{label}"] = dict(sub["model"])
            cp[f"compare:{label}:priors"] = dict(sub["priors"])
        lines = []
        for name in sorted(cp.sections()):
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in sorted(cp[name].items()))
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _bool(sec, key, default):
    return sec.getboolean(key, fallback=default)


def _sampler(sec) -> SamplerConfig:
    kw = {}
    for f in fields(SamplerConfig):
        if f.name not in sec:
            continue
        raw = sec[f.name].strip()
        if f.name == "frozen":
            kw[f.name] = tuple(x.strip() for x in raw.split(",") if x.strip())
        elif f.name == "use_likelihood":
            kw[f.name] = sec.getboolean(f.name)
        elif f.type == "float":
            kw[f.name] = float(raw)
        else:
            kw[f.name] = int(raw)
    try:
        return SamplerConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[sampler]: {exc}") from exc


def _thresholds(raw: str) -> tuple:
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        test, _, value = item.rpartition(":")
        if not test:
            raise ConfigError(f"[outputs] thresholds: expected TEST:value, got {item!r}")
        out.append((test.strip(), float(value)))
    return tuple(out)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    if not cp.has_section("data") or "path" not in cp["data"]:
        raise ConfigError(f"{path}: [data] path is required")
    data_path = (base / cp["data"]["path"]).resolve()
    try:
        spec = ModelSpec.from_config(cp) if cp.has_section("model") else ModelSpec.preset("MetaRegression")
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid model section: {exc}") from exc
    sampler = _sampler(cp["sampler"]) if cp.has_section("sampler") else SamplerConfig()
    o = cp["outputs"] if cp.has_section("outputs") else {}
    outputs = OutputConfig(
        directory=(base / o.get("directory", "out")).resolve(),
        tables=_bool(o, "tables", True) if o else True,
        curves=_bool(o, "curves", True) if o else True,
        figures=_bool(o, "figures", True) if o else True,
        grid_size=int(o.get("grid_size", 100)) if o else 100,
        thresholds=_thresholds(o.get("thresholds", "")) if o else (),
    )
    compare = []
    if cp.has_section("compare"):
        for name in cp["compare"].get("specs", "").split(","):
            name = name.strip()
            if name:
                try:
                    compare.append((name, ModelSpec.preset(name)))
                except KeyError as exc:
                    raise ConfigError(f"unknown preset {name!r} in [compare]") from exc
    for section in cp.sections():
        if section.startswith("compare:") and not section.endswith(":priors"):
            label = section.split(":", 1)[1]
            try:
                compare.append((label, ModelSpec.from_config(cp, section, f"{section}:priors")))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
    reference_only = cp["data"].getboolean("reference_only", fallback=False)
    return RunConfig(data_path, spec, sampler, outputs, reference_only, tuple(compare))
