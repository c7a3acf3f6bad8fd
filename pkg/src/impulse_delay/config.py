"""Run configuration: JSON or TOML documents, overridable from the command line."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SOLVERS = {"forex": "threshold", "labor": "band"}


@dataclass
class RunConfig:
    model: str = "forex"
    params: dict = field(default_factory=dict)
    solver: str | None = None
    solver_options: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    output: str | None = None

    def __post_init__(self):
        if self.model not in SOLVERS:
            raise ConfigurationError(f"unknown model {self.model!r}; choose from {sorted(SOLVERS)}")
        expected = SOLVERS[self.model]
        if self.solver is None:
            self.solver = expected
        elif self.solver != expected:
            raise ConfigurationError(f"model {self.model!r} is solved with the {expected} solver, not {self.solver!r}")
        for key, val in self.solver_options.items():
            if key.endswith("tol") and not float(val) > 0:
                raise ConfigurationError(f"tolerance {key} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown configuration keys: {sorted(extra)}")
        return cls(**d)


def read_document(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (if any) and apply non-None overrides on top.

    Overrides use dotted keys for nested sections, e.g. ``params.c``.
    """
    doc = read_document(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        node = doc
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = val
    return RunConfig.from_dict(doc)
