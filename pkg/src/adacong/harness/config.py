"""Experiment configuration: one versioned JSON document per experiment.

Example::

    {
      "version": 1,
      "experiment": "kd",
      "baselines": ["scratch", "kd", "adacong"],
      "seeds": [1, 2, 3, 4, 5],
      "params": {"gamma": 10.0, "alpha": 0.1}
    }

``params`` may set any field of the experiment's run configuration
(:class:`KDConfig`, :class:`SSLConfig` or :class:`GridConfig`) except the
one selected by ``baselines``. Unknown keys anywhere are rejected, and
diagnostics carry the line of the offending key.
"""

from __future__ import annotations

import dataclasses
import json
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..gridworld.control import Mode
from ..gridworld.runner import GridConfig
from ..pipelines.kd import KD_BASELINES, KDConfig
from ..pipelines.ssl import SSLConfig

SCHEMA_VERSION = 1
TOP_LEVEL_KEYS = ("version", "experiment", "baselines", "seeds", "params", "output", "final_window")

SSL_BASELINES = ("adacong", "unweighted")


@dataclass(frozen=True)
class ExperimentSpec:
    run_config: type
    baseline_field: str
    baselines: tuple[str, ...]
    summary_metric: str
    summary_split: str


EXPERIMENTS = {
    "kd": ExperimentSpec(KDConfig, "baseline", KD_BASELINES, "accuracy", "test"),
    "ssl": ExperimentSpec(SSLConfig, "weighted", SSL_BASELINES, "accuracy", "test"),
    "gridworld": ExperimentSpec(GridConfig, "mode", tuple(m.value for m in Mode), "reward", "train"),
}


class ConfigError(ValueError):
    """Invalid configuration; ``diagnostics`` is a list of ``(line, message)``."""

    def __init__(self, diagnostics: list[tuple[int | None, str]], source: str = "<config>"):
        self.diagnostics = diagnostics
        self.source = source
        super().__init__("\n".join(self.format_lines()))

    def format_lines(self) -> list[str]:
        return [f"{self.source}:{line if line is not None else '?'}: {msg}" for line, msg in self.diagnostics]


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    baselines: tuple[str, ...]
    seeds: tuple[int, ...]
    params: dict = field(default_factory=dict)
    output: str | None = None
    final_window: int = 100  # episodes averaged for the gridworld summary
    version: int = SCHEMA_VERSION

    @property
    def spec(self) -> ExperimentSpec:
        return EXPERIMENTS[self.experiment]

    def to_dict(self) -> dict:
        d = {"version": self.version, "experiment": self.experiment, "baselines": list(self.baselines),
             "seeds": list(self.seeds), "params": dict(self.params), "final_window": self.final_window}
        if self.output is not None:
            d["output"] = self.output
        return d

    def run_config(self, baseline: str):
        """The pipeline config for one baseline."""
        spec = self.spec
        value: Any = baseline
        if self.experiment == "ssl":
            value = baseline == "adacong"
        return spec.run_config(**{**self.params, spec.baseline_field: value})

    def with_params(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, params={**self.params, **changes})
        validate(cfg)
        return cfg

    def with_seeds(self, seeds) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, seeds=tuple(int(s) for s in seeds))
        validate(cfg)
        return cfg


def _line_of(text: str, key: str, after: int = 0) -> int | None:
    m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, after)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _field_types(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if not f.name.startswith("_")}


def _type_ok(value, hint) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        return any(_type_ok(value, h) for h in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    return True


def parse(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a JSON config string.

    Raises:
        ConfigError: with one diagnostic per problem found.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(exc.lineno, f"invalid JSON: {exc.msg} (column {exc.colno})")], source) from None
    if not isinstance(raw, dict):
        raise ConfigError([(1, "top level must be a JSON object")], source)

    diags: list[tuple[int | None, str]] = []
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            diags.append((_line_of(text, key), f"unknown key '{key}' (allowed: {', '.join(TOP_LEVEL_KEYS)})"))
    version = raw.get("version")
    if version != SCHEMA_VERSION:
        diags.append((_line_of(text, "version") or 1, f"'version' must be {SCHEMA_VERSION}, got {version!r}"))
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        diags.append((_line_of(text, "experiment") or 1,
                       f"'experiment' must be one of {sorted(EXPERIMENTS)}, got {experiment!r}"))
        raise ConfigError(diags, source)
    spec = EXPERIMENTS[experiment]

    baselines = raw.get("baselines", list(spec.baselines))
    if not isinstance(baselines, list) or not baselines:
        diags.append((_line_of(text, "baselines"), "'baselines' must be a non-empty list"))
        baselines = []
    for b in baselines:
        if b not in spec.baselines:
            diags.append((_line_of(text, "baselines"), f"unknown baseline {b!r} for {experiment}; "
                                                        f"choose from {', '.join(spec.baselines)}"))
    if len(set(map(str, baselines))) != len(baselines):
        diags.append((_line_of(text, "baselines"), "baselines must be distinct"))

    seeds = raw.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0
                                                           for s in seeds):
        diags.append((_line_of(text, "seeds") or 1, "'seeds' must be a non-empty list of non-negative integers"))
        seeds = []
    elif len(set(seeds)) != len(seeds):
        diags.append((_line_of(text, "seeds"), "seeds must be distinct"))

    params = raw.get("params", {})
    if not isinstance(params, dict):
        diags.append((_line_of(text, "params"), "'params' must be an object"))
        params = {}
    types = _field_types(spec.run_config)
    params_at = text.find('"params"')
    for key, value in params.items():
        line = _line_of(text, key, max(params_at, 0))
        if key == spec.baseline_field:
            diags.append((line, f"'{key}' is chosen by 'baselines', not 'params'"))
        elif key not in types:
            diags.append((line, f"unknown parameter '{key}' for {experiment}"))
        elif not _type_ok(value, types[key]):
            diags.append((line, f"parameter '{key}' has the wrong type ({type(value).__name__})"))

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        diags.append((_line_of(text, "output"), "'output' must be a string path"))
    final_window = raw.get("final_window", 100)
    if not isinstance(final_window, int) or isinstance(final_window, bool) or final_window < 1:
        diags.append((_line_of(text, "final_window"), "'final_window' must be a positive integer"))
    if diags:
        raise ConfigError(diags, source)

    cfg = ExperimentConfig(experiment, tuple(baselines), tuple(seeds), dict(params), output, final_window)
    validate(cfg, text, source)
    return cfg


def validate(cfg: ExperimentConfig, text: str = "", source: str = "<config>") -> None:
    """Range checks, delegated to the run configs' own constructors."""
    diags = []
    if len(set(cfg.seeds)) != len(cfg.seeds):
        diags.append((_line_of(text, "seeds"), "seeds must be distinct"))
    for b in cfg.baselines:
        try:
            cfg.run_config(b)
        except (TypeError, ValueError) as exc:
            culprit = next((k for k in cfg.params if k in str(exc)), None)
            line = _line_of(text, culprit, max(text.find('"params"'), 0)) if culprit else _line_of(text, "params")
            diags.append((line, f"baseline {b!r}: {exc}"))
            break
    if diags:
        raise ConfigError(diags, source)


def load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([(None, f"cannot read config: {exc.strerror}")], str(path)) from None
    return parse(text, str(path))
