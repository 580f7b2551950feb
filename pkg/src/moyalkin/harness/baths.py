"""Named bath definitions usable from config files."""

from __future__ import annotations

import math

from ..bath import BathSpec, chain_coupling, gaussian_coupling, load_table, window_coupling
from ..errors import ConfigError

# per-id parameters and their defaults
BATH_DEFAULTS = {
    # quantum: eps(w) = sqrt(w) exp(-w/cutoff) on (0, w_max)
    "ohmic": {"cutoff": 4.0, "w_max": 40.0},
    # quantum: constant eps with pi eps^2 = gamma_sq on (0, w_max)
    "flat": {"gamma_sq": 1.0, "w_max": 4.0},
    # classical: u(w) = scale w^2 exp(-w^2)
    "gauss2": {"scale": 1.0},
    # classical: u = scale on lo < |w| < hi
    "window": {"lo": 0.5, "hi": 2.0, "scale": 1.0},
    # classical: single-site coupling of the periodic nearest-neighbour chain
    "chain": {"h0": 2.5, "h1": -1.0, "eps": 1.0},
    # two-column table; "classical" tables are mirrored to an even coupling
    "table": {"table": "", "kind": "classical"},
}

QUANTUM_IDS = ("ohmic", "flat")


def bath_kind(bath: dict) -> str:
    if bath["id"] == "table":
        return bath["kind"]
    return "quantum" if bath["id"] in QUANTUM_IDS else "classical"


def make_bath(bath: dict, beta: float, resolve=None) -> BathSpec:
    """Build a :class:`BathSpec` from a merged ``[bath]`` table.

    ``resolve`` maps a table path from the config to a filesystem path.
    """
    bid = bath["id"]
    if bid == "ohmic":
        cut, w_max = bath["cutoff"], bath["w_max"]
        return BathSpec(lambda w: math.sqrt(w) * math.exp(-w / cut), beta=beta, domain=(0.0, w_max),
                        kind="quantum", label="ohmic")
    if bid == "flat":
        level = math.sqrt(bath["gamma_sq"] / math.pi)
        return BathSpec(lambda w: level, beta=beta, domain=(0.0, bath["w_max"]), kind="quantum", label="flat")
    if bid == "gauss2":
        return BathSpec(gaussian_coupling(bath["scale"]), beta=beta, label="gauss2")
    if bid == "window":
        lo, hi = bath["lo"], bath["hi"]
        if not 0 <= lo < hi:
            raise ConfigError("window bath needs 0 <= lo < hi")
        return BathSpec(window_coupling(lo, hi, bath["scale"]), beta=beta, domain=(-hi, hi),
                        points=(-lo, lo) if lo > 0 else (), label="window")
    if bid == "chain":
        u, (lo, hi) = chain_coupling(bath["h0"], bath["h1"], bath["eps"])
        return BathSpec(u, beta=beta, domain=(-hi, hi), points=(-lo, lo), label="chain")
    if bid == "table":
        path = resolve(bath["table"]) if resolve else bath["table"]
        kind = bath["kind"]
        if kind not in ("classical", "quantum"):
            raise ConfigError(f"table bath kind must be 'classical' or 'quantum', got {kind!r}")
        tab = load_table(path, even=kind == "classical")
        if kind == "classical":
            return BathSpec(tab, beta=beta, domain=(tab.lo, tab.hi), label=str(bath["table"]))
        if tab.lo < 0:
            raise ConfigError("quantum table frequencies must be nonnegative")
        return BathSpec(tab, beta=beta, domain=(tab.lo, tab.hi), kind="quantum", label=str(bath["table"]))
    raise ConfigError(f"unknown bath id {bid!r}")
