"""Typed, immutable description of one simulation as read from a deck."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from ..core import GridSpec
from ..hydraulics import MaterialRecord

SPECIES_KINDS = ("PRI", "BIO", "SEC", "MIN", "GAS")
DEFAULT_PHASE = {"PRI": "L", "BIO": "B", "SEC": "L", "MIN": "M", "GAS": "G"}
CONC_UNITS = ("mol/L", "mg/L")
DAY = 86400.0


@dataclass(frozen=True)
class Species:
    name: str
    kind: str
    phase: str
    unit: str = "mol/L"
    molar_mass: float = 0.0
    diffusivity: float = 0.0
    # BIO-only properties
    eps: float = 0.0
    f_l: float = 0.0
    rho: float | None = None
    t_lb: float | None = None
    t_ub: float | None = None
    sl_lb: float | None = None
    sl_ub: float | None = None
    attractants: tuple[tuple[str, float], ...] = ()
    repellents: tuple[tuple[str, float], ...] = ()

    @property
    def is_tracer(self) -> bool:
        return self.molar_mass == 0.0

    @property
    def unit_mass(self) -> float:
        """kg carried by one declared unit (mol or mg); virtual 1 kg/mol for tracers."""
        if self.unit == "mg/L":
            return 1e-6
        return self.molar_mass if self.molar_mass > 0 else 1.0

    @property
    def occupies_volume(self) -> bool:
        return self.kind == "BIO" and self.rho is not None


@dataclass(frozen=True)
class SpeciesRegistry:
    entries: tuple[Species, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.entries)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def get(self, name: str) -> Species:
        return self.entries[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.entries)

    def of_kind(self, *kinds: str) -> tuple[Species, ...]:
        return tuple(s for s in self.entries if s.kind in kinds)


@dataclass(frozen=True)
class ReactionSpec:
    name: str
    stoichiometry: tuple[tuple[str, float], ...]
    rate: float
    norder: tuple[tuple[str, float], ...] = ()
    mmm: tuple[tuple[str, float], ...] = ()
    competition: tuple[tuple[str, float], ...] = ()
    inhibition: tuple[tuple[str, float], ...] = ()
    bio: str | None = None
    line: int = field(default=0, compare=False, repr=False)

    def species(self) -> set[str]:
        names = {s for s, _ in self.stoichiometry}
        for terms in (self.norder, self.mmm, self.competition, self.inhibition):
            names.update(s for s, _ in terms)
        if self.bio:
            names.add(self.bio)
        return names


@dataclass(frozen=True)
class EquilibriumSpec:
    name: str
    solved: str
    x_k: float
    primaries: tuple[tuple[str, float], ...]
    log10_keq: float
    # optional two-point van 't Hoff data ((T1, logK1), (T2, logK2))
    vanthoff: tuple[tuple[float, float], ...] = ()
    line: int = field(default=0, compare=False, repr=False)

    def log10_k_at(self, temperature: float) -> float:
        if not self.vanthoff:
            return self.log10_keq
        (t1, k1), (t2, k2) = self.vanthoff
        # log K linear in 1/T
        slope = (k2 - k1) / (1.0 / t2 - 1.0 / t1)
        return k1 + slope * (1.0 / temperature - 1.0 / t1)


@dataclass(frozen=True)
class Schedule:
    """Rate timing: a constant (optionally windowed) or a column of an auxiliary file.

    ``times`` are seconds; values are already converted to the boundary's
    internal rate unit.  Linear interpolation, constant extrapolation.
    """

    value: float | None = None
    start: float = 0.0
    end: float | None = None
    file: str | None = None
    column: int = 1
    times: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def breakpoints(self) -> list[float]:
        if self.file is not None:
            return list(self.times)
        pts = [self.start]
        if self.end is not None:
            pts.append(self.end)
        return pts

    def at(self, t: float) -> float:
        if self.file is None:
            inside = t >= self.start and (self.end is None or t < self.end)
            return self.value if inside else 0.0
        return float(np.interp(t, self.times, self.values))

    def mean(self, t0: float, t1: float) -> float:
        """Average rate over [t0, t1] (exact for the piecewise-linear series)."""
        if t1 <= t0:
            return self.at(t0)
        if self.file is None:
            lo = max(t0, self.start)
            hi = t1 if self.end is None else min(t1, self.end)
            return self.value * max(hi - lo, 0.0) / (t1 - t0)
        ts, vs = self.times, self.values
        knots = [t0] + [t for t in ts if t0 < t < t1] + [t1]
        total = 0.0
        for a, b in zip(knots[:-1], knots[1:]):
            total += 0.5 * (self.at(a) + self.at(b)) * (b - a)
        return total / (t1 - t0)

    def next_break(self, t: float) -> float | None:
        pts = sorted(set(self.breakpoints()))
        i = bisect.bisect_right(pts, t)
        return pts[i] if i < len(pts) else None


@dataclass(frozen=True)
class BoundarySchedule:
    """One boundary condition.

    kinds: ``source`` (liquid, m3/s; negative = withdrawal), ``species``
    (kg/s of one species), ``uptake`` (root water uptake, m3/s extracted,
    split over ``fractions``), ``drainage`` (unit-gradient free drainage),
    ``head`` (fixed pressure head in m at the element's outer face).
    """

    kind: str
    element: int | None = None
    species: str | None = None
    schedule: Schedule | None = None
    unit: str = ""
    fractions: tuple[tuple[int, float], ...] = ()
    head: float | None = None
    line: int = field(default=0, compare=False, repr=False)

    @property
    def label(self) -> str:
        where = f"e{self.element}" if self.element is not None else "roots"
        tag = f"{self.kind}_{self.species}" if self.species else self.kind
        return f"{tag}_{where}"


@dataclass(frozen=True)
class InitialRecord:
    selector: str  # all | range | element
    lo: int = 0
    hi: int = 0
    values: tuple[tuple[str, float], ...] = ()
    line: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class InitialState:
    records: tuple[InitialRecord, ...] = ()
    water_table: float | None = None  # elevation (m) of the hydrostatic water table


@dataclass(frozen=True)
class SolverSettings:
    t_end: float = DAY
    dt_init: float = 1.0
    dt_min: float = 1e-6
    dt_max: float = 3600.0
    picard_max: int = 30
    picard_tol_p: float = 1e-2  # Pa
    picard_tol_s: float = 1e-8
    temperature: float = 293.15
    rho_l: float = 1000.0
    rho_g: float = 1.2
    mu_l: float = 1.0e-3
    gravity: float = 9.81
    specific_storage: float = 1e-9  # 1/Pa
    audit_tol: float = 1e-6
    tracer_tol: float = 1e-8
    kin_rtol: float = 1e-8
    kin_atol: float = 1e-30
    max_substeps: int = 100000
    flow: bool = True
    transport: bool = True
    chemotaxis: bool = True
    kinetics: bool = True
    equilibrium: bool = True
    inhibition: str = "standard"  # or "typeset": X/(X+K)

    def problems(self) -> list[str]:
        out = []
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            out.append("need 0 < dt_min <= dt_init <= dt_max")
        if not self.t_end > 0:
            out.append("t_end must be > 0")
        for name in ("picard_tol_p", "picard_tol_s", "audit_tol", "tracer_tol", "kin_rtol",
                     "rho_l", "rho_g", "mu_l", "gravity", "temperature"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        if self.specific_storage < 0:
            out.append("specific_storage must be >= 0")
        if self.kin_atol < 0:
            out.append("kin_atol must be >= 0")
        if self.picard_max < 1:
            out.append("picard_max must be >= 1")
        if self.max_substeps < 1:
            out.append("max_substeps must be >= 1")
        if self.inhibition not in ("standard", "typeset"):
            out.append("inhibition must be 'standard' or 'typeset'")
        return out


@dataclass(frozen=True)
class OutputSpec:
    every: float | None = None
    every_step: bool = False
    times: tuple[float, ...] = ()
    probes: tuple[tuple[str, int], ...] = ()
    directory: str = "out"

    def report_times(self, t_end: float) -> list[float]:
        if self.every_step:
            return []
        if self.times:
            return [t for t in self.times if t <= t_end]
        if self.every:
            n = int(t_end // self.every)
            out = [i * self.every for i in range(n + 1)]
            if out[-1] < t_end:
                out.append(t_end)
            return out
        return [0.0, t_end]


@dataclass(frozen=True)
class SweepSpec:
    mode: str  # gaussian | grid
    targets: tuple[str, ...]
    n: int = 1
    rel_std: float = 0.0
    seed: int = 0
    values: tuple[float, ...] = ()
    summary: tuple[str, ...] = ()


@dataclass(frozen=True)
class SimulationDeck:
    grid: GridSpec
    materials: tuple[MaterialRecord, ...]
    species: SpeciesRegistry
    reactions: tuple[ReactionSpec, ...] = ()
    equilibria: tuple[EquilibriumSpec, ...] = ()
    initial: InitialState = InitialState()
    boundaries: tuple[BoundarySchedule, ...] = ()
    solver: SolverSettings = SolverSettings()
    outputs: OutputSpec = OutputSpec()
    sweep: SweepSpec | None = None
    base_dir: str = field(default=".", compare=False, repr=False)

    def material(self, name: str) -> MaterialRecord:
        for m in self.materials:
            if m.name == name:
                return m
        raise KeyError(name)

    def element_materials(self) -> list[MaterialRecord]:
        return [self.material(e.material) for e in self.grid.elements]
