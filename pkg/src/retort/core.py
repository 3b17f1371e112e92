"""Discretised domain, evolving state and conserved-quantity accounting.

Concentration convention, used everywhere: every species value is stored in
its declared unit per litre of liquid (mol/L or mg/L).  With ``w`` the mass of
one unit (kg/mol for mol/L, 1e-6 kg/mg for mg/L) the liquid-phase mass
fraction is ``X = c * 1000 * w / rho_L``, i.e. ``c = X * rho_L / molar mass``
per litre.  GAS columns hold partial pressures instead.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AuditFailure

LIQUID, GAS, BIO, MINERAL = "L", "G", "B", "M"


@dataclass(frozen=True)
class ElementSpec:
    volume: float
    area: float
    z: float
    material: str
    atmosphere: bool = False


@dataclass(frozen=True)
class GridSpec:
    """Vertical chain of elements, index 0 at the top."""

    elements: tuple[ElementSpec, ...]

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([e.volume for e in self.elements])

    @property
    def areas(self) -> np.ndarray:
        return np.array([e.area for e in self.elements])

    @property
    def z(self) -> np.ndarray:
        return np.array([e.z for e in self.elements])

    @property
    def thickness(self) -> np.ndarray:
        return self.volumes / self.areas

    @property
    def atmosphere(self) -> np.ndarray:
        return np.array([e.atmosphere for e in self.elements], dtype=bool)

    def interface_areas(self) -> np.ndarray:
        a = self.areas
        return np.minimum(a[:-1], a[1:])

    def interface_distances(self) -> np.ndarray:
        return np.abs(np.diff(self.z))

    def problems(self) -> list[str]:
        out = []
        if not self.elements:
            out.append("grid has no elements")
        for i, e in enumerate(self.elements):
            if not (e.volume > 0 and math.isfinite(e.volume)):
                out.append(f"element {i}: volume must be > 0")
            if not (e.area > 0 and math.isfinite(e.area)):
                out.append(f"element {i}: area must be > 0")
            if not math.isfinite(e.z):
                out.append(f"element {i}: z must be finite")
        dz = np.diff(self.z) if len(self.elements) > 1 else np.array([])
        if len(dz) and not (np.all(dz < 0) or np.all(dz > 0)):
            out.append("element elevations must be strictly monotone along the chain")
        return out


@dataclass
class GridState:
    """Per-element phase state plus per-(element, species) values.

    ``head`` is the liquid pressure head (m, gauge); ``P_L = rho_L * g * head``.
    ``conc`` has shape (n_elements, n_species) in declared units.
    """

    s_l: np.ndarray
    s_b: np.ndarray
    head: np.ndarray
    temperature: float
    conc: np.ndarray
    species: tuple[str, ...]
    rho_l: float = 1000.0
    rho_g: float = 1.2
    mu_l: float = 1.0e-3
    gravity: float = 9.81
    time: float = 0.0

    @property
    def s_g(self) -> np.ndarray:
        return 1.0 - self.s_l - self.s_b

    @property
    def p_l(self) -> np.ndarray:
        return self.rho_l * self.gravity * self.head

    def copy(self) -> "GridState":
        return copy.deepcopy(self)

    def column(self, name: str) -> np.ndarray:
        return self.conc[:, self.species.index(name)]

    def mass_fraction(self, weights: np.ndarray) -> np.ndarray:
        """Liquid mass fractions X from concentrations, given per-species unit masses."""
        return self.conc * 1000.0 * np.asarray(weights)[None, :] / self.rho_l

    def check_partition(self, tol: float = 1e-12) -> None:
        s_g = self.s_g
        bad = (
            (self.s_l < -tol) | (self.s_b < -tol) | (s_g < -tol)
            | (self.s_l > 1 + tol) | (self.s_b > 1 + tol)
        )
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise AssertionError(
                f"saturation partition violated in element {i}: "
                f"S_L={self.s_l[i]!r} S_G={s_g[i]!r} S_B={self.s_b[i]!r}"
            )


def total_phase_mass(state: GridState, grid: GridSpec, phase: str, porosity, rho_m=None) -> float:
    """Mass (kg) of one phase summed over the non-atmosphere elements.

    ``porosity`` and ``rho_m`` are per-element arrays (or scalars).
    """
    v = grid.volumes
    phi = np.broadcast_to(np.asarray(porosity, dtype=float), v.shape)
    keep = ~grid.atmosphere
    if phase == LIQUID:
        m = phi * state.s_l * state.rho_l * v
    elif phase == GAS:
        m = phi * state.s_g * state.rho_g * v
    elif phase == BIO:
        rho_b = state.rho_l if rho_m is None else rho_m
        m = phi * state.s_b * np.broadcast_to(np.asarray(rho_b, dtype=float), v.shape) * v
    elif phase == MINERAL:
        if rho_m is None:
            raise ValueError("mineral mass needs rho_m")
        m = (1.0 - phi) * np.broadcast_to(np.asarray(rho_m, dtype=float), v.shape) * v
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return float(np.sum(m[keep]))


@dataclass
class LedgerEntry:
    stored0: float
    stored: float
    influx: float = 0.0
    outflux: float = 0.0
    production: float = 0.0
    destruction: float = 0.0
    # mass added or removed by clipping (negative kinetics, exchange limits)
    adjustment: float = 0.0

    def closure_error(self) -> float:
        expected = self.stored0 + self.influx - self.outflux + self.production - self.destruction + self.adjustment
        return self.stored - expected

    def scale(self) -> float:
        return max(
            abs(self.stored0), abs(self.stored), self.influx, self.outflux,
            self.production, self.destruction, abs(self.adjustment),
        )

    def relative_error(self) -> float:
        s = self.scale()
        return abs(self.closure_error()) / s if s > 0 else 0.0


@dataclass
class MassLedger:
    """Running account per conserved quantity ("water" plus each species)."""

    entries: dict[str, LedgerEntry] = field(default_factory=dict)
    tracers: frozenset[str] = frozenset()
    # element holding the largest stored mass change, for diagnostics
    worst_element: dict[str, int] = field(default_factory=dict)

    @classmethod
    def start(cls, stored: dict[str, float], tracers=()) -> "MassLedger":
        return cls({k: LedgerEntry(v, v) for k, v in stored.items()}, frozenset(tracers))

    def record_storage(self, stored: dict[str, float]) -> None:
        for k, v in stored.items():
            self.entries[k].stored = v

    def add(self, name: str, influx=0.0, outflux=0.0, production=0.0, destruction=0.0, adjustment=0.0):
        e = self.entries[name]
        e.influx += influx
        e.outflux += outflux
        e.production += production
        e.destruction += destruction
        e.adjustment += adjustment

    def add_net_reaction(self, name: str, delta: float) -> None:
        if delta >= 0:
            self.add(name, production=delta)
        else:
            self.add(name, destruction=-delta)


@dataclass(frozen=True)
class AuditReport:
    errors: dict[str, float]
    tol_rel: float
    failing: tuple[str, ...]
    worst: str | None
    worst_element: int | None

    @property
    def passed(self) -> bool:
        return not self.failing

    @property
    def worst_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def audit_ledger(ledger: MassLedger, tol_rel: float, tracer_tol: float = 1e-8, raise_on_fail: bool = True) -> AuditReport:
    """Per-quantity relative closure check.

    Tracer species are held to ``min(tol_rel, tracer_tol)``.
    """
    errors = {k: e.relative_error() for k, e in ledger.entries.items()}
    failing = []
    for k, err in errors.items():
        tol = min(tol_rel, tracer_tol) if k in ledger.tracers else tol_rel
        if not err <= tol:
            failing.append(k)
    pool = failing or list(errors)
    worst = max(pool, key=errors.get) if pool else None
    report = AuditReport(errors, tol_rel, tuple(failing), worst, ledger.worst_element.get(worst))
    if failing and raise_on_fail:
        raise AuditFailure(
            f"mass audit failed: {worst!r} relative closure error "
            f"{errors[worst]:.3e} exceeds tolerance (element {report.worst_element})",
            report,
        )
    return report
