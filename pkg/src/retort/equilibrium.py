"""Mass-action speciation of secondary species.

Each equilibrium is written with its solved species on the left::

    K_eq = X_k^x_k * prod_j X_j^x_j

so ``log X_k = (log K_eq - sum_j x_j log X_j) / x_k``.  Primaries are never
modified; GAS columns hold partial pressures.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .deck.model import EquilibriumSpec, SpeciesRegistry
from .errors import SingularEquilibrium

log = logging.getLogger(__name__)


def _log_q(values, spec: EquilibriumSpec, index) -> np.ndarray:
    """sum_j x_j log10 X_j over the primaries; -inf/+inf when a primary is zero."""
    total = np.zeros(values.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        for name, x in spec.primaries:
            total = total + x * np.log10(values[:, index(name)])
    return total


def solve_equilibria(conc, specs, registry: SpeciesRegistry, temperature: float = 298.15,
                     strict: bool = False):
    """Set every solved species from its primaries.

    ``conc`` is (n_elem, n_species) or a single row.  Returns ``(new, flags)``
    where ``flags`` lists ``(element, equilibrium, primary)`` for elements
    whose secondary was set to zero because a primary was exactly zero.
    With ``strict`` the first such case raises :class:`SingularEquilibrium`.
    """
    arr = np.array(conc, dtype=float)
    one_row = arr.ndim == 1
    values = np.atleast_2d(arr)
    index = registry.index
    flags = []
    for spec in specs:
        logk = spec.log10_k_at(temperature)
        k = index(spec.solved)
        zero = np.zeros(values.shape[0], dtype=bool)
        for name, _ in spec.primaries:
            z = values[:, index(name)] == 0.0
            for e in np.flatnonzero(z & ~zero):
                flags.append((int(e), spec.name, name))
                if strict:
                    raise SingularEquilibrium(
                        f"equilibrium {spec.name!r}: primary {name!r} is zero in element {e}"
                    )
            zero |= z
        lq = _log_q(values, spec, index)
        with np.errstate(over="ignore", invalid="ignore"):
            solved = np.power(10.0, (logk - lq) / spec.x_k)
        values[:, k] = np.where(zero | ~np.isfinite(solved), 0.0, solved)
    if flags:
        log.warning("%d singular equilibrium evaluation(s); secondaries set to zero", len(flags))
    out = values[0] if one_row else values
    return out, flags


def equilibrium_residual(values, spec: EquilibriumSpec, registry: SpeciesRegistry,
                         temperature: float = 298.15) -> float:
    """log10(Q / K_eq) for one element (``values`` is one row)."""
    row = np.atleast_2d(np.asarray(values, dtype=float))
    xk = row[0, registry.index(spec.solved)]
    with np.errstate(divide="ignore"):
        lq = spec.x_k * math.log10(xk) if xk > 0 else -math.inf * spec.x_k
    return float(lq + _log_q(row, spec, registry.index)[0] - spec.log10_k_at(temperature))
