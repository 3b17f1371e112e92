"""Dotted parameter paths into a deck: ``material.<name>.<field>``,
``reaction.<name>.<field>``, ``species.<name>.<field>``,
``equilibrium.<name>.<field>`` and ``solver.<field>``.
"""

from __future__ import annotations

import dataclasses

from ..errors import TargetNotFound
from .model import SimulationDeck


def split_path(path: str) -> tuple[str, str | None, str]:
    parts = path.split(".")
    if len(parts) == 2 and parts[0] == "solver":
        return "solver", None, parts[1]
    if len(parts) == 3 and parts[0] in ("material", "reaction", "species", "equilibrium"):
        return parts[0], parts[1], parts[2]
    raise TargetNotFound(f"bad target path {path!r}")


def _records(deck: SimulationDeck, group: str):
    if group == "material":
        return deck.materials
    if group == "reaction":
        return deck.reactions
    if group == "species":
        return deck.species.entries
    return deck.equilibria


def _numeric_field(obj, name: str, path: str) -> float:
    names = {f.name for f in dataclasses.fields(obj)}
    val = getattr(obj, name, None) if name in names else None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise TargetNotFound(f"{path!r} is not a numeric parameter")
    return float(val)


def get_parameter(deck: SimulationDeck, path: str) -> float:
    """Current value of a target such as ``material.sand.k`` or ``solver.temperature``."""
    group, name, attr = split_path(path)
    if group == "solver":
        return _numeric_field(deck.solver, attr, path)
    for rec in _records(deck, group):
        if rec.name == name:
            return _numeric_field(rec, attr, path)
    raise TargetNotFound(f"{path!r}: no {group} named {name!r}")


def set_parameter(deck: SimulationDeck, path: str, value: float) -> SimulationDeck:
    group, name, attr = split_path(path)
    get_parameter(deck, path)  # validates the path
    if group == "solver":
        cur = getattr(deck.solver, attr)
        v = int(round(value)) if isinstance(cur, int) else float(value)
        return dataclasses.replace(deck, solver=dataclasses.replace(deck.solver, **{attr: v}))
    recs = tuple(dataclasses.replace(r, **{attr: float(value)}) if r.name == name else r
                 for r in _records(deck, group))
    if group == "material":
        return dataclasses.replace(deck, materials=recs)
    if group == "reaction":
        return dataclasses.replace(deck, reactions=recs)
    if group == "species":
        return dataclasses.replace(deck, species=dataclasses.replace(deck.species, entries=recs))
    return dataclasses.replace(deck, equilibria=recs)
