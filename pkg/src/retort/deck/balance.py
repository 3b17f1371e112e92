"""Stoichiometric mass-balance check for kinetic reactions."""

from __future__ import annotations

import math

from .model import ReactionSpec, SpeciesRegistry

BALANCE_TOL = 1e-6


def validate_reaction_balance(spec: ReactionSpec, registry: SpeciesRegistry, tol: float = BALANCE_TOL) -> list[str]:
    """Warnings for a molar-mass-weighted imbalance above ``tol`` (relative).

    Species with zero molar mass are virtual tracers and do not count.
    Species missing from the registry are reported, never raised.
    """
    warnings = []
    terms = []
    for name, x in spec.stoichiometry:
        if name not in registry:
            warnings.append(f"reaction {spec.name!r}: species {name!r} is not declared")
            continue
        sp = registry.get(name)
        if sp.is_tracer:
            continue
        # mass per unit of reaction progress, in kg
        terms.append(x * sp.molar_mass if sp.unit == "mol/L" else x * sp.unit_mass)
    if not terms:
        return warnings
    scale = math.fsum(abs(t) for t in terms)
    net = math.fsum(terms)
    if scale > 0 and abs(net) > tol * scale:
        warnings.append(
            f"reaction {spec.name!r}: stoichiometry is not mass balanced "
            f"(net {net:+.6g} kg per unit progress, {abs(net) / scale:.3g} relative)"
        )
    return warnings
