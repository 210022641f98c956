"""Closed registry of named functions for experiment configs.

Configs reference functions by name only; nothing in a config is executed as
code.  Unknown names raise ConfigError with close-match suggestions.
"""
from __future__ import annotations

import difflib

from .chains import StoppingPolicy
from .netctl import GranularSuccessPolicy
from .rates import RateFunction


class ConfigError(ValueError):
    pass


def _unknown(kind: str, name: str, known) -> ConfigError:
    hint = difflib.get_close_matches(name, list(known), n=2)
    extra = f"; did you mean {', '.join(hint)}?" if hint else ""
    return ConfigError(f"unknown {kind} {name!r}{extra} (known: {sorted(known)})")


_FINITE_SCALARS = {
    "one": lambda p: (lambda x: 1.0),
    "const": lambda p: (lambda x, v=float(p["value"]): v),
    "power": lambda p: (lambda x, b=float(p["base"]): b ** float(x)),
    "poly": lambda p: (lambda x, e=float(p["exponent"]), s=float(p.get("shift", 1.0)):
                       (float(x) + s) ** e),
    "indicator_plus_one": lambda p: (lambda x, m=set(p["members"]): 1.0 + (1.0 if x in m else 0.0)),
    "table": lambda p: (lambda x, v=[float(t) for t in p["values"]]: v[int(x)]),
}

_NETCTL_SCALARS = {
    "one": lambda p: (lambda s: 1.0),
    "const": lambda p: (lambda s, v=float(p["value"]): v),
    "delta_sq": lambda p: (lambda s: s.Delta ** 2),
    "delta_power": lambda p: (lambda s, e=float(p["exponent"]): s.Delta ** e),
    "x_sq": lambda p: (lambda s: s.x ** 2),
    "abs_x_plus_one": lambda p: (lambda s: abs(s.x) + 1.0),
}


def scalar_fn(block: dict, model_kind: str):
    """Named state function; the table depends on the model's state space."""
    table = _NETCTL_SCALARS if model_kind == "netctl" else _FINITE_SCALARS
    name = block.get("name")
    if name not in table:
        raise _unknown("function", str(name), table)
    return table[name](block)


def set_fn(block: dict, model_kind: str):
    """Named set membership predicate."""
    kind = block.get("kind")
    if model_kind == "netctl":
        known = ("delta_leq", "abs_x_leq", "all", "none")
        if kind == "delta_leq":
            v = float(block["value"])
            return lambda s: s.Delta <= v
        if kind == "abs_x_leq":
            v = float(block["value"])
            return lambda s: abs(s.x) <= v
    else:
        known = ("members", "all", "none")
        if kind == "members":
            members = set(int(v) for v in block["values"])
            return lambda x: int(x) in members
    if kind == "all":
        return lambda x: True
    if kind == "none":
        return lambda x: False
    raise _unknown("set kind", str(kind), known)


def set_members(block: dict, n_states: int):
    """Explicit index list for finite-chain sets."""
    member = set_fn(block, "finite")
    return [i for i in range(n_states) if member(i)]


def renewal_fn(block: dict):
    name = block.get("name")
    if name == "geometric":
        p = float(block["p"])
        if not 0 < p <= 1:
            raise ConfigError(f"geometric renewal needs p in (0, 1], got {p}")
        return lambda rng: int(rng.geometric(p))
    if name == "fixed":
        v = int(block["value"])
        if v < 1:
            raise ConfigError("fixed renewal must be >= 1")
        return lambda rng: v
    if name == "uniform":
        lo, hi = int(block["low"]), int(block["high"])
        if lo < 1 or hi < lo:
            raise ConfigError("uniform renewal needs 1 <= low <= high")
        return lambda rng: int(rng.integers(lo, hi + 1))
    raise _unknown("renewal", str(name), ("geometric", "fixed", "uniform"))


def n_of_state_fn(block: dict, model_kind: str):
    f = scalar_fn(block, model_kind)
    return lambda x: int(f(x))


def policy_from(block: dict, model_kind: str):
    kind = block.get("kind")
    if kind == "deterministic":
        return StoppingPolicy.deterministic(n_of_state_fn(block["n"], model_kind))
    if kind == "independent":
        return StoppingPolicy.independent(renewal_fn(block["dist"]))
    if kind == "event":
        return StoppingPolicy.event_triggered(set_fn(block["set"], model_kind))
    if kind == "granular_success":
        if model_kind != "netctl":
            raise ConfigError("granular_success policy applies to the netctl model only")
        return GranularSuccessPolicy()
    raise _unknown("policy kind", str(kind),
                   ("deterministic", "independent", "event", "granular_success"))


def rate_from(block: dict) -> RateFunction:
    try:
        return RateFunction.from_config(block)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad rate block: {e}") from e
