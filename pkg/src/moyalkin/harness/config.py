"""Experiment configuration files.

A config is a TOML file with top-level ``kind``, ``seed`` and ``out`` and three
tables, ``[physics]``, ``[bath]`` and ``[numerics]``::

    kind = "classical-limit"
    seed = 0

    [physics]
    lam = 0.3
    hbar = [0.4, 0.2, 0.1]

    [bath]
    id = "ohmic"

    [numerics]
    n_grid = 128

Every key not given takes the per-kind default below; the merged values are
what the manifest records.  Unknown keys are errors.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ..errors import ConfigError
from .baths import BATH_DEFAULTS

KINDS = (
    "bath-corr",
    "stability",
    "evolve-lindblad",
    "evolve-fp",
    "wigner",
    "classical-limit",
    "ordering-sweep",
    "gme-compare",
    "chain-oracle",
    "secular-check",
)

_SWEEP_NUMERICS = {
    "n_grid": 256,
    "half_width": 8.0,
    "order": 4,
    "safety": 0.9,
    "periods": 3.0,
    "mean_q": 1.5,
    "mean_p": 0.0,
    "variance": 0.4,
}

DEFAULTS = {
    "bath-corr": {
        "physics": {"beta": 1.0, "omega0": 1.0, "hbar": 1.0},
        "bath": {"id": "gauss2"},
        "numerics": {"s_max": 10.0, "n_s": 101, "w_max": 3.0, "n_w": 30},
    },
    "stability": {
        "physics": {"beta": 1.0, "omega0": 1.0, "lam": 0.0},
        "bath": {"id": "gauss2"},
        "numerics": {},
    },
    "evolve-lindblad": {
        "physics": {"beta": 1.0, "omega0": 1.0, "hbar": 1.0, "lam": 1.0},
        "bath": {"id": "flat"},
        "numerics": {"dim": 60, "generator": "oscillator", "initial": "fock", "n0": 3, "alpha": 1.0,
                     "t_max": 10.0, "dt": 0.0, "every": 10},
    },
    "evolve-fp": {
        "physics": {"beta": 1.0, "omega0": 1.0, "lam": 0.3, "hbar": 0.0, "a": 0.0},
        "bath": {"id": "gauss2"},
        "numerics": {"variant": "CLASSICAL", "n_grid": 128, "half_width": 7.0, "order": 4, "safety": 0.9,
                     "t_max": 6.0, "n_records": 6, "mean_q": 1.5, "mean_p": 0.0, "var_q": 0.4, "var_p": 0.4,
                     "cov_qp": 0.0, "moment_tol": 1e-4, "save_field": False},
    },
    "wigner": {
        "physics": {"beta": 0.5, "omega0": 1.3, "hbar": 0.5, "a": [-1.0, 0.0, 1.0]},
        "bath": {},
        "numerics": {"dim": 160, "state": "thermal", "n0": 0, "q_half": 12.0, "p_half": 16.0,
                     "n_q": 68, "n_p": 70, "save_field": False},
    },
    "classical-limit": {
        "physics": {"beta": 1.0, "omega0": 1.0, "lam": 0.3, "hbar": [0.4, 0.2, 0.1, 0.05], "a": [1.0]},
        "bath": {"id": "ohmic"},
        "numerics": {**_SWEEP_NUMERICS, "fock_check": True, "fock_hbar_min": 0.4, "fock_tail": 1e-12,
                     "fock_grid": 128},
    },
    "ordering-sweep": {
        "physics": {"beta": 1.0, "omega0": 1.0, "lam": 0.3, "hbar": [0.4, 0.2, 0.1], "a": [-1.0, 0.0, 1.0]},
        "bath": {"id": "ohmic"},
        "numerics": {**_SWEEP_NUMERICS, "grid_check_hbar": 0.4, "distinct_factor": 10.0},
    },
    "gme-compare": {
        "physics": {"beta": 1.0, "omega0": 1.0, "lam": 0.3, "lam_negativity": 0.5},
        "bath": {"id": "gauss2"},
        "numerics": {"n_grid": 256, "half_width": 7.0, "order": 6, "ratio_min": 1e4,
                     "neg_n_grid": 128, "neg_half_width": 2.0, "neg_t_max": 0.5, "neg_safety": 0.5,
                     "neg_sd_minor": 0.07, "neg_sd_major": 0.2, "neg_threshold": 1e-4, "pos_threshold": 1e-8},
    },
    "chain-oracle": {
        "physics": {"beta": 1.0, "omega0": 1.2, "lam": 0.1, "q0": 0.0, "p0": 5.0},
        "bath": {"id": "chain"},
        "numerics": {"n_modes": 512, "n_samples": 10000, "dt": 0.05, "n_lags": 25, "lag_fraction": 0.9,
                     "z_max": 3.0, "relax_samples": 2000, "relax_dt": 0.01, "relax_every": 100,
                     "fit_fraction": 0.97, "rate_tol": 0.1},
    },
    "secular-check": {
        "physics": {"beta": 1.0, "omega0": 1.0, "hbar": 1.0, "lam": 0.3},
        "bath": {"id": "ohmic"},
        "numerics": {"dim": 20, "tol": 1e-12},
    },
}

# keys that must be > 0 wherever they appear; lists are checked elementwise
_POSITIVE = {
    "beta", "omega0", "s_max", "n_s", "w_max", "n_w", "dim", "t_max", "every", "n_grid", "half_width", "order",
    "safety", "periods", "variance", "var_q", "var_p", "n_records", "moment_tol", "q_half", "p_half", "n_q", "n_p",
    "fock_hbar_min", "fock_tail", "fock_grid", "grid_check_hbar", "distinct_factor", "ratio_min", "neg_n_grid",
    "neg_half_width", "neg_t_max", "neg_safety", "neg_sd_minor", "neg_sd_major", "n_modes", "n_samples", "n_lags",
    "lag_fraction", "z_max", "relax_samples", "relax_dt", "relax_every", "fit_fraction", "rate_tol", "tol",
}
_NONNEGATIVE = {"lam", "hbar", "dt", "lam_negativity", "n0", "neg_threshold", "pos_threshold", "seed"}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    physics: dict = field(default_factory=dict)
    bath: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    out: Optional[Path] = None
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None, kind: Optional[str] = None) -> "ExperimentConfig":
        """Merge ``data`` over the defaults of its kind and validate."""
        data = copy.deepcopy(dict(data))
        file_kind = data.pop("kind", None)
        if kind and file_kind and kind != file_kind:
            raise ConfigError(f"config is for kind {file_kind!r}, not {kind!r}")
        kind = kind or file_kind
        if kind not in DEFAULTS:
            raise ConfigError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        seed = data.pop("seed", 0)
        out = data.pop("out", None)
        sections = {}
        for name in ("physics", "bath", "numerics"):
            given = data.pop(name, {})
            if not isinstance(given, dict):
                raise ConfigError(f"[{name}] must be a table")
            sections[name] = _merge(name, DEFAULTS[kind][name], given, kind)
        if data:
            raise ConfigError(f"unknown top-level keys {sorted(data)}")
        cfg = cls(kind, seed, sections["physics"], sections["bath"], sections["numerics"],
                  Path(out) if out is not None else None, base)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path, kind: Optional[str] = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        cfg = cls.from_dict(data, base_dir=path.parent, kind=kind)
        if cfg.out is not None and not cfg.out.is_absolute():
            cfg.out = path.parent / cfg.out
        return cfg

    @classmethod
    def defaults(cls, kind: str) -> "ExperimentConfig":
        return cls.from_dict({}, kind=kind)

    def resolve(self, relative) -> Path:
        """Path of a file referenced by the config, relative to the config's directory."""
        p = Path(relative)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        for section in (self.physics, self.bath, self.numerics):
            for key, value in section.items():
                _check_range(key, value)
        for key in ("hbar", "a"):
            if isinstance(self.physics.get(key), list) and not self.physics[key]:
                raise ConfigError(f"{key} list is empty")
        if self.kind in ("classical-limit", "ordering-sweep"):
            h = _as_list(self.physics["hbar"])
            if any(x <= 0 for x in h):
                raise ConfigError("sweep hbar values must be positive (hbar = 0 is always added)")
            if any(b >= a for a, b in zip(h, h[1:])):
                raise ConfigError(f"hbar list must be strictly decreasing, got {h}")
        table = self.bath.get("table")
        if table is not None and not self.resolve(table).is_file():
            raise ConfigError(f"bath table {table} does not exist")
        return self

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "physics": self.physics, "bath": self.bath,
             "numerics": self.numerics}
        if self.out is not None:
            d["out"] = str(self.out)
        return copy.deepcopy(d)


def _merge(name, defaults, given, kind):
    merged = copy.deepcopy(defaults)
    if name == "bath":
        if "id" not in defaults:
            if given:
                raise ConfigError(f"kind {kind!r} takes no bath")
            return merged
        bath_id = given.get("id", defaults["id"])
        if "table" in given and "id" not in given:
            bath_id = "table"
        if bath_id not in BATH_DEFAULTS:
            raise ConfigError(f"unknown bath id {bath_id!r}; choose from {', '.join(BATH_DEFAULTS)}")
        merged = {"id": bath_id, **copy.deepcopy(BATH_DEFAULTS[bath_id])}
    for key, value in given.items():
        if key not in merged:
            raise ConfigError(f"unknown key {key!r} in [{name}] for kind {kind!r}")
        merged[key] = _coerce(key, merged[key], value)
    if name == "bath" and merged.get("id") == "table" and not merged.get("table"):
        raise ConfigError("bath id 'table' needs a table path")
    return merged


def _coerce(key, default, value):
    """Match the type of the default; ints may stand in for floats."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, list) or isinstance(value, list):
        items = value if isinstance(value, list) else [value]
        return [_coerce(key, 0.0, v) for v in items] if isinstance(default, list) else _fail_list(key)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def _fail_list(key):
    raise ConfigError(f"{key} takes a single value, not a list")


def _check_range(key, value):
    for v in _as_list(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            continue
        if not math.isfinite(v):
            raise ConfigError(f"{key} must be finite, got {v}")
        if key in _POSITIVE and not v > 0:
            raise ConfigError(f"{key} must be positive, got {v}")
        if key in _NONNEGATIVE and v < 0:
            raise ConfigError(f"{key} must be nonnegative, got {v}")


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]
