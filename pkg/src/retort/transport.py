"""Species transport between elements.

The state advanced here is the amount of each species per element
(``M = c * V_L * 1000`` in mol or mg), so the interface fluxes telescope and
closed-domain totals are conserved to round-off.  Liquid volume varies
linearly over the step, consistent with the flow solver's constant fluxes.

Spatial scheme: first-order upwind advection, two-point diffusion with
``D_eff = theta * D``.  BIO species move at ``eps * q`` plus a chemotactic
drift.  Time: SSP-RK3 sub-steps with a Courant limit of 0.9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CFLUnderflow

COURANT = 0.9


@dataclass(frozen=True)
class TransportGeometry:
    """Active elements of a chain, locally indexed from 0."""

    n: int
    up: np.ndarray
    dn: np.ndarray
    area: np.ndarray  # interface area (m2)
    dist: np.ndarray  # centre distance (m)

    @classmethod
    def chain(cls, areas, z):
        areas = np.asarray(areas, dtype=float)
        z = np.asarray(z, dtype=float)
        n = len(z)
        up = np.arange(n - 1)
        return cls(n, up, up + 1, np.minimum(areas[:-1], areas[1:]), np.abs(np.diff(z)))


@dataclass(frozen=True)
class ChemotaxisSpec:
    """Attractant / repellent columns (indices into a liquid mass-fraction array)."""

    attractants: tuple[tuple[int, float], ...] = ()
    repellents: tuple[tuple[int, float], ...] = ()


@dataclass
class TransportResult:
    conc: np.ndarray
    outflow: np.ndarray  # amount leaving through boundaries per species (mol or mg)
    inflow: np.ndarray  # amount entering through species sources
    substeps: int


def _interface_theta(geom, theta):
    a, b = theta[geom.up], theta[geom.dn]
    s = a + b
    return np.where(s > 0, 2.0 * a * b / np.where(s > 0, s, 1.0), 0.0)


def _advance(M0, V0, V1, dt, u, G, qout, src, max_substeps, geom):
    """Integrate dM/dt over ``dt`` with M = c * V (c per litre, V in m3).

    Fluxes in this scaled amount are the true ones divided by 1000.

    ``u`` (n_int, ns): volumetric carrier flow across interfaces, up->dn positive.
    ``G`` (n_int, ns): diffusive conductance (m3/s).  ``qout`` (n, ns): boundary
    outflow carrier (m3/s).  ``src`` (n, ns): amount per second injected.
    """
    n, ns = M0.shape
    if n == 0 or ns == 0:
        return M0.copy(), np.zeros(ns), 0
    up, dn = geom.up, geom.dn
    up_pos = np.maximum(u, 0.0)
    dn_pos = np.maximum(-u, 0.0)
    rate = qout + np.zeros((n, ns))
    np.add.at(rate, up, up_pos + G)
    np.add.at(rate, dn, dn_pos + G)
    vmin = np.minimum(V0, V1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(rate > 0, rate / vmin[:, None], 0.0)
    amax = float(np.max(a)) if a.size else 0.0
    if not math.isfinite(amax):
        raise CFLUnderflow("transport through an element with no liquid", 0, 0.0)
    nsub = max(1, math.ceil(dt * amax / COURANT)) if amax > 0 else 1
    if nsub > max_substeps:
        raise CFLUnderflow(f"transport needs {nsub} sub-steps (cap {max_substeps})", 0, 0.0)
    h = dt / nsub

    def rhs(M, t):
        V = V0 + (V1 - V0) * (t / dt)
        c = M / V[:, None]  # per litre
        F = up_pos * c[up] - dn_pos * c[dn] + G * (c[up] - c[dn])
        d = src - qout * c
        np.subtract.at(d, up, F)
        np.add.at(d, dn, F)
        return d, qout * c

    M = M0.astype(float).copy()
    out = np.zeros(ns)
    for k in range(nsub):
        t = k * h
        d1, o1 = rhs(M, t)
        M1 = M + h * d1
        d2, o2 = rhs(M1, t + h)
        M2 = 0.75 * M + 0.25 * (M1 + h * d2)
        d3, o3 = rhs(M2, t + 0.5 * h)
        M = M / 3.0 + 2.0 / 3.0 * (M2 + h * d3)
        out += h * (o1 + o2 + 4.0 * o3).sum(axis=0) / 6.0
    return M, out, nsub


def _sources_in(src, dt):
    return src.sum(axis=0) * dt


def step_solute_transport(conc, geom: TransportGeometry, V0, V1, theta, q_int, q_out, dt,
                          diffusivity, src=None, max_substeps=100000) -> TransportResult:
    """Advance dissolved species.

    conc: (n, ns) amount per litre of liquid.  V0, V1: liquid volume (m3) at
    the start and end of the step.  theta: volumetric water content per
    element.  q_int: interface flow (m3/s), q_out: boundary outflow (m3/s).
    diffusivity: (ns,) m2/s.  src: (n, ns) injected amount per second.
    """
    conc = np.asarray(conc, dtype=float)
    n, ns = conc.shape
    V0 = np.asarray(V0, dtype=float)
    V1 = np.asarray(V1, dtype=float)
    D = np.asarray(diffusivity, dtype=float)
    th = _interface_theta(geom, np.asarray(theta, dtype=float))
    u = np.repeat(np.asarray(q_int, dtype=float)[:, None], ns, axis=1)
    G = (th * geom.area / geom.dist)[:, None] * D[None, :]
    qo = np.repeat(np.asarray(q_out, dtype=float)[:, None], ns, axis=1)
    src = np.zeros((n, ns)) if src is None else np.asarray(src, dtype=float)
    M0 = conc * V0[:, None]
    M, out, nsub = _advance(M0, V0, V1, dt, u, G, qo, src / 1000.0, max_substeps, geom)
    new = M / V1[:, None]
    return TransportResult(new, out * 1000.0, _sources_in(src, dt), nsub)


def chemotactic_drift(xl, chemo: ChemotaxisSpec, geom: TransportGeometry):
    """Drift velocity (m/s) across each interface, up->dn positive.

    ``xl`` is the liquid mass-fraction array (n, n_liquid).  Attractants pull
    towards higher values, repellents push towards lower values.
    """
    v = np.zeros(len(geom.up))
    for col, d in chemo.attractants:
        v = v + d * (xl[geom.dn, col] - xl[geom.up, col]) / geom.dist
    for col, d in chemo.repellents:
        v = v - d * (xl[geom.dn, col] - xl[geom.up, col]) / geom.dist
    return v


def step_bio_transport(conc, geom: TransportGeometry, V0, V1, theta, q_int, q_out, dt,
                       eps, diffusivity, chemo: list[ChemotaxisSpec] | None = None, xl=None,
                       src=None, max_substeps=100000) -> TransportResult:
    """Advance BIO species: advection at ``eps*q``, diffusion, chemotaxis.

    conc: (n, nb).  eps, diffusivity: (nb,).  chemo: one ChemotaxisSpec per
    BIO column; ``xl`` the liquid mass fractions the specs index into.
    """
    conc = np.asarray(conc, dtype=float)
    n, nb = conc.shape
    V0 = np.asarray(V0, dtype=float)
    V1 = np.asarray(V1, dtype=float)
    eps = np.asarray(eps, dtype=float)
    D = np.asarray(diffusivity, dtype=float)
    th = _interface_theta(geom, np.asarray(theta, dtype=float))
    u = np.asarray(q_int, dtype=float)[:, None] * eps[None, :]
    if chemo is not None and xl is not None:
        for s, spec in enumerate(chemo):
            if spec.attractants or spec.repellents:
                u[:, s] += chemotactic_drift(xl, spec, geom) * th * geom.area
    G = (th * geom.area / geom.dist)[:, None] * D[None, :]
    qo = np.asarray(q_out, dtype=float)[:, None] * eps[None, :]
    src = np.zeros((n, nb)) if src is None else np.asarray(src, dtype=float)
    M0 = conc * V0[:, None]
    M, out, nsub = _advance(M0, V0, V1, dt, u, G, qo, src / 1000.0, max_substeps, geom)
    new = M / V1[:, None]
    return TransportResult(new, out * 1000.0, _sources_in(src, dt), nsub)
