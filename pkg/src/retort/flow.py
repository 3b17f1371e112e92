"""Variably saturated liquid flow on a vertical chain of elements.

Unknown is the pressure head ``h`` (m).  Liquid storage of an element is

    W(h) = phi V (1 - S_B) S_rel(h) + V Ss rho g max(h - h_e, 0)

where ``S_rel`` is the saturation of the biomass-free pore space and ``h_e``
the entry head of the material.  The second term lets a saturated element
hold water under pressure, which is how a perched water table forms.

Each step is backward Euler solved by modified Picard iteration on the
mixed form.  After convergence the storage is updated directly from the
fluxes and inverted back to ``h``, so the water ledger closes to round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .core import GridSpec, GridState
from .deck.model import DAY, BoundarySchedule, SolverSettings
from .errors import ConvergenceFailure, InputError
from .hydraulics import (
    MaterialRecord, clogged_permeability, head_from_saturation, relative_permeability_se,
    saturation_from_head, saturation_slope,
)

log = logging.getLogger(__name__)

SE_FLOOR = 1e-3  # water below this effective saturation is not extractable by sinks
GROWTH_AFTER = 3
GROWTH_FACTOR = 1.2


class FlowContext:
    """Per-run constants: element properties grouped by material."""

    def __init__(self, grid: GridSpec, mats: list[MaterialRecord], settings: SolverSettings):
        self.grid = grid
        self.mats = list(mats)
        self.settings = settings
        self.V = grid.volumes
        self.A = grid.areas
        self.z = grid.z
        self.dz = grid.thickness
        self.phi = np.array([m.phi for m in mats])
        self.k = np.array([m.k for m in mats])
        self.slr = np.array([m.slr for m in mats])
        self.h_e = np.array([m.entry_head for m in mats])
        self.active = ~grid.atmosphere
        idx = np.flatnonzero(self.active)
        if len(idx) and np.any(np.diff(idx) != 1):
            raise InputError("atmosphere elements must sit at the ends of the chain")
        self.idx = idx
        self.groups: dict[str, tuple[MaterialRecord, np.ndarray]] = {}
        for i, m in enumerate(mats):
            if m.name in self.groups:
                self.groups[m.name][1].append(i)
            else:
                self.groups[m.name] = (m, [i])
        self.groups = {k: (m, np.array(ix)) for k, (m, ix) in self.groups.items()}
        self.rho = settings.rho_l
        self.g = settings.gravity
        self.mu = settings.mu_l
        self.ss = settings.specific_storage
        # interfaces between consecutive active elements
        self.up = idx[:-1]
        self.dn = idx[1:]
        self.A_int = np.minimum(self.A[self.up], self.A[self.dn])
        self.d_int = np.abs(self.z[self.up] - self.z[self.dn])

    # -- constitutive maps, vectorised over all elements ----------------------

    def _by_material(self, fn, h):
        out = np.empty_like(h, dtype=float)
        for mat, ix in self.groups.values():
            out[ix] = fn(h[ix], mat)
        return out

    def s_rel(self, h):
        return self._by_material(saturation_from_head, h)

    def s_rel_slope(self, h):
        return self._by_material(saturation_slope, h)

    def kr_of_srel(self, s_rel):
        out = np.empty_like(s_rel, dtype=float)
        for mat, ix in self.groups.values():
            se = np.clip((s_rel[ix] - mat.slr) / (1.0 - mat.slr), 0.0, 1.0)
            out[ix] = relative_permeability_se(se, mat)
        return out

    def head_of_srel(self, s_rel):
        out = np.empty_like(s_rel, dtype=float)
        for mat, ix in self.groups.values():
            sat = s_rel[ix] >= 1.0
            out[ix] = np.where(sat, mat.entry_head, head_from_saturation(np.minimum(s_rel[ix], 1.0), mat))
        return out

    def w_sat(self, s_b):
        return self.phi * self.V * (1.0 - s_b)

    def storage(self, h, s_b):
        """Liquid volume W (m3) and dW/dh (m2)."""
        ws = self.w_sat(s_b)
        elastic = self.V * self.ss * self.rho * self.g
        over = h > self.h_e
        W = ws * self.s_rel(h) + elastic * np.where(over, h - self.h_e, 0.0)
        C = ws * self.s_rel_slope(h) + np.where(over, elastic, 0.0)
        return W, C

    def head_from_storage(self, W, s_b):
        """Invert :meth:`storage`; returns (h, ok)."""
        ws = self.w_sat(s_b)
        elastic = self.V * self.ss * self.rho * self.g
        s_rel = W / ws
        se = (s_rel - self.slr) / (1.0 - self.slr)
        ok = bool(np.all(se[self.active] > 1e-12))
        over = W > ws
        if np.any(over & self.active & (elastic <= 0.0) & (W > ws * (1 + 1e-12))):
            ok = False
        with np.errstate(divide="ignore", invalid="ignore"):
            h_sat = self.h_e + np.where(elastic > 0, (W - ws) / elastic, 0.0)
        h_uns = self.head_of_srel(np.clip(s_rel, self.slr + 1e-300, 1.0))
        return np.where(over, h_sat, h_uns), ok

    def conductivity(self, s_b):
        """Clogged saturated hydraulic conductivity per element (m/s)."""
        return clogged_permeability(self.k, s_b) * self.rho * self.g / self.mu

    def interface_conductivity(self, s_b):
        K = self.conductivity(s_b)
        a, b = self.up, self.dn
        wa, wb = 0.5 * self.dz[a], 0.5 * self.dz[b]
        with np.errstate(divide="ignore"):
            res = np.where(K[a] > 0, wa / np.where(K[a] > 0, K[a], 1.0), np.inf) + \
                  np.where(K[b] > 0, wb / np.where(K[b] > 0, K[b], 1.0), np.inf)
        return np.where(np.isfinite(res), (wa + wb) / res, 0.0)

    def outer_face(self, i: int) -> tuple[float, float]:
        """Elevation of the face of element ``i`` away from its previous neighbour
        (the top face of element 0), and the distance to it."""
        half = 0.5 * self.dz[i]
        if len(self.z) == 1:
            return self.z[i] + half, half
        nb = 1 if i == 0 else i - 1
        sign = np.sign(self.z[i] - self.z[nb]) or 1.0
        return self.z[i] + sign * half, half


def initial_heads(ctx: FlowContext, s_l, s_b, head=None):
    """Pressure heads consistent with the given saturations (or pass-through)."""
    if head is not None:
        return np.asarray(head, dtype=float)
    return ctx.head_of_srel(np.asarray(s_l) / (1.0 - np.asarray(s_b)))


def liquid_volume(ctx: FlowContext, state: GridState) -> np.ndarray:
    W, _ = ctx.storage(state.head, state.s_b)
    return np.where(ctx.active, W, 0.0)


# -- Darcy fluxes ------------------------------------------------------------


def darcy_velocity(k_int, kr, mu, p_i, p_j, z_i, z_j, rho, g, distance):
    """Signed Darcy velocity from i to j (m/s)."""
    phi_i = p_i + rho * g * z_i
    phi_j = p_j + rho * g * z_j
    return -k_int * kr / mu * (phi_j - phi_i) / distance


def darcy_flux(i: int, j: int, state: GridState, grid: GridSpec, mats) -> float:
    """Darcy velocity between adjacent elements ``i`` and ``j`` (m/s, i->j positive).

    Interface permeability is the thickness-weighted harmonic mean of the
    clogged permeabilities; relative permeability comes from the element
    with the higher potential.
    """
    if abs(i - j) != 1:
        raise ValueError("elements are not adjacent")
    ki = clogged_permeability(mats[i].k, state.s_b[i])
    kj = clogged_permeability(mats[j].k, state.s_b[j])
    di, dj = 0.5 * grid.thickness[i], 0.5 * grid.thickness[j]
    k_int = (di + dj) / (di / ki + dj / kj) if ki > 0 and kj > 0 else 0.0
    rho, g = state.rho_l, state.gravity
    p = state.p_l
    z = grid.z
    up = i if p[i] + rho * g * z[i] >= p[j] + rho * g * z[j] else j
    mat = mats[up]
    s_rel = saturation_from_head(state.head[up], mat)
    se = np.clip((s_rel - mat.slr) / (1.0 - mat.slr), 0.0, 1.0)
    kr = float(relative_permeability_se(se, mat))
    return float(darcy_velocity(k_int, kr, state.mu_l, p[i], p[j], z[i], z[j], rho, g, abs(z[i] - z[j])))


# -- step ----------------------------------------------------------------------


@dataclass
class FlowResult:
    dt: float
    iterations: int
    # volumetric flow (m3/s) across each active interface, upper -> lower positive
    q_interface: np.ndarray
    # per element boundary inflow / outflow (m3/s, both >= 0)
    q_in: np.ndarray
    q_out: np.ndarray
    # water volume (m3) per boundary label over the step, positive into the domain
    by_boundary: dict[str, float] = field(default_factory=dict)
    clipped: float = 0.0


def _schedule_scale(b: BoundarySchedule, area: float) -> float:
    return {"m3/s": 1.0, "kg/s": 1.0 / 1000.0, "m/s": area, "mm/d": area * 1e-3 / DAY}.get(b.unit, 1.0)


def boundary_rate(b: BoundarySchedule, t0: float, t1: float, area: float, rho_l: float) -> float:
    """Mean liquid rate (m3/s) of a source/uptake boundary over [t0, t1]."""
    scale = _schedule_scale(b, area)
    if b.unit == "kg/s":
        scale = 1.0 / rho_l
    return b.schedule.mean(t0, t1) * scale


def _explicit_sources(ctx, boundaries, state, dt, W0):
    """Fixed-over-step source terms (m3/s per element), sinks capped by available water."""
    n = len(ctx.V)
    src = np.zeros(n)
    labels: dict[str, np.ndarray] = {}
    t0, t1 = state.time, state.time + dt
    demand = np.zeros(n)
    for b in boundaries:
        if b.kind == "source":
            rate = boundary_rate(b, t0, t1, ctx.A[b.element], ctx.rho)
            vec = np.zeros(n)
            vec[b.element] = rate
        elif b.kind == "uptake":
            area = ctx.A[b.fractions[0][0]] if b.fractions else 1.0
            rate = boundary_rate(b, t0, t1, area, ctx.rho)
            vec = np.zeros(n)
            for e, f in b.fractions:
                vec[e] -= abs(rate) * f
        else:
            continue
        vec[~ctx.active] = 0.0
        labels[b.label] = labels.get(b.label, 0.0) + vec
        demand += np.minimum(vec, 0.0)
        src += np.maximum(vec, 0.0)
    # cap withdrawals by what is above the extraction floor
    ws = ctx.w_sat(state.s_b)
    floor = ws * (ctx.slr + (1.0 - ctx.slr) * SE_FLOOR)
    avail = np.maximum(W0 - floor, 0.0) * 0.9 / dt
    scale = np.ones(n)
    want = -demand
    np.divide(avail, want, out=scale, where=want > avail)
    scale = np.minimum(scale, 1.0)
    clipped = float(np.sum(want * (1.0 - scale)) * dt)
    if clipped > 0:
        log.warning("sink demand clipped by %.3e m3 (not enough extractable water)", clipped)
    for lab, vec in labels.items():
        labels[lab] = np.where(vec < 0, vec * scale, vec)
    net = src + demand * scale
    return net, labels, clipped


def _solve_step(ctx: FlowContext, state: GridState, boundaries, dt: float):
    s = ctx.settings
    act = ctx.idx
    s_b = state.s_b
    h_n = state.head.copy()
    W_n, _ = ctx.storage(h_n, s_b)
    src, labels, clipped = _explicit_sources(ctx, boundaries, state, dt, W_n)
    K_int = ctx.interface_conductivity(s_b)
    K_el = ctx.conductivity(s_b)
    drains = [b for b in boundaries if b.kind == "drainage" and ctx.active[b.element]]
    heads = [b for b in boundaries if b.kind == "head" and ctx.active[b.element]]

    h_m = h_n.copy()
    nA = len(act)
    up_l = ctx.up - act[0] if nA else ctx.up
    dn_l = ctx.dn - act[0] if nA else ctx.dn
    for it in range(1, s.picard_max + 1):
        W_m, C_m = ctx.storage(h_m, s_b)
        srel_m = ctx.s_rel(h_m)
        kr = ctx.kr_of_srel(srel_m)
        H = h_m + ctx.z
        kr_up = np.where(H[ctx.up] >= H[ctx.dn], kr[ctx.up], kr[ctx.dn])
        T = ctx.A_int * K_int * kr_up / ctx.d_int
        q_int = T * (H[ctx.up] - H[ctx.dn])

        diag = np.maximum(C_m[act], 1e-30 * ctx.V[act])
        lower = np.zeros(nA)
        upper = np.zeros(nA)
        R = -(W_m[act] - W_n[act]) + dt * src[act]
        np.add.at(R, up_l, -dt * q_int)
        np.add.at(R, dn_l, dt * q_int)
        np.add.at(diag, up_l, dt * T)
        np.add.at(diag, dn_l, dt * T)
        upper[up_l] = -dt * T   # coupling of row up to column dn
        lower[dn_l] = -dt * T   # coupling of row dn to column up

        bnd_terms = []
        for b in drains:
            i = b.element
            li = i - act[0]
            mat = ctx.mats[i]
            q = ctx.A[i] * K_el[i] * kr[i]
            dkr = _dkr_dh(ctx, i, h_m[i], srel_m[i], mat)
            dq = ctx.A[i] * K_el[i] * dkr
            R[li] -= dt * q
            diag[li] += dt * dq
            bnd_terms.append(("drain", b, q, dq))
        for b in heads:
            i = b.element
            li = i - act[0]
            z_face, dist = ctx.outer_face(i)
            H_b = b.head + z_face
            if H_b > H[i]:
                kr_b = float(ctx.kr_of_srel(ctx._by_material(saturation_from_head, np.full(len(ctx.V), b.head)))[i])
            else:
                kr_b = kr[i]
            Tb = ctx.A[i] * K_el[i] * kr_b / dist
            R[li] += dt * Tb * (H_b - H[i])
            diag[li] += dt * Tb
            bnd_terms.append(("head", b, Tb, H_b))

        ab = np.zeros((3, nA))
        ab[0, 1:] = upper[:-1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        try:
            delta = solve_banded((1, 1), ab, R)
        except (ValueError, np.linalg.LinAlgError):
            return None
        if not np.all(np.isfinite(delta)):
            return None
        h_new = h_m.copy()
        h_new[act] += delta
        dS = np.max(np.abs(ctx.s_rel(h_new)[act] - srel_m[act])) if nA else 0.0
        dP = np.max(np.abs(delta)) * ctx.rho * ctx.g if nA else 0.0
        h_prev = h_m
        h_m = h_new
        if dP < s.picard_tol_p and dS < s.picard_tol_s:
            break
    else:
        return None

    # conservative finish: fluxes from the last linear system, storage from the fluxes
    H = h_m + ctx.z
    q_int = T * (H[ctx.up] - H[ctx.dn])
    n = len(ctx.V)
    net = src.copy()
    np.add.at(net, ctx.up, -q_int)
    np.add.at(net, ctx.dn, q_int)
    by_boundary = {lab: float(np.sum(vec) * dt) for lab, vec in labels.items()}
    q_in = np.zeros(n)
    q_out = np.zeros(n)
    for vec in labels.values():
        q_in += np.maximum(vec, 0.0)
        q_out += np.maximum(-vec, 0.0)
    for kind, b, a1, a2 in bnd_terms:
        i = b.element
        q = -(a1 + a2 * (h_m[i] - h_prev[i])) if kind == "drain" else a1 * (a2 - H[i])
        net[i] += q
        if q >= 0:
            q_in[i] += q
        else:
            q_out[i] -= q
        by_boundary[b.label] = by_boundary.get(b.label, 0.0) + q * dt
    W_new = W_n + dt * net
    h_fin, ok = ctx.head_from_storage(W_new, s_b)
    if not ok or not np.all(np.isfinite(h_fin[ctx.active])):
        return None
    h_fin = np.where(ctx.active, h_fin, state.head)
    return h_fin, FlowResult(dt, it, q_int, q_in, q_out, by_boundary, clipped)


def _dkr_dh(ctx, i, h, s_rel, mat) -> float:
    """d k_r / d h by a one-sided difference (used only in the drainage Jacobian)."""
    eps = 1e-6 * max(1.0, abs(h))
    s2 = saturation_from_head(h - eps, mat)
    se1 = np.clip((s_rel - mat.slr) / (1.0 - mat.slr), 0.0, 1.0)
    se2 = np.clip((s2 - mat.slr) / (1.0 - mat.slr), 0.0, 1.0)
    return float((relative_permeability_se(se1, mat) - relative_permeability_se(se2, mat)) / eps)


def step_liquid(state: GridState, ctx: FlowContext, boundaries, dt_target: float, step: int = 0):
    """Advance liquid flow by up to ``dt_target``; halves dt until Picard converges.

    Returns ``(new_state, dt_achieved, FlowResult)``.
    """
    s = ctx.settings
    dt = dt_target
    while True:
        out = _solve_step(ctx, state, boundaries, dt)
        if out is not None:
            h, res = out
            new = state.copy()
            new.head = h
            srel = ctx.s_rel(h)
            new.s_l = np.where(ctx.active, (1.0 - state.s_b) * np.minimum(srel, 1.0), state.s_l)
            return new, dt, res
        if dt / 2.0 < s.dt_min:
            raise ConvergenceFailure(
                f"flow did not converge with dt={dt:.3e} s (dt_min={s.dt_min:.3e} s)", step, state.time
            )
        dt /= 2.0
        log.debug("flow step retry with dt=%.3e s", dt)


class StepController:
    """Grow dt by 1.2 after three clean steps, clip to [dt_min, dt_max]."""

    def __init__(self, settings: SolverSettings):
        self.s = settings
        self.dt = settings.dt_init
        self.clean = 0

    def propose(self) -> float:
        return self.dt

    def accept(self, requested: float, achieved: float, truncated: bool) -> None:
        if achieved < requested:
            self.dt = max(achieved, self.s.dt_min)
            self.clean = 0
            return
        if truncated:
            return
        self.clean += 1
        if self.clean >= GROWTH_AFTER:
            self.dt = min(self.dt * GROWTH_FACTOR, self.s.dt_max)
            self.clean = 0


# -- liquid / biomass exchange -------------------------------------------------


@dataclass
class ExchangeResult:
    s_l: np.ndarray
    s_b: np.ndarray
    water_delta: np.ndarray  # change of liquid volume per element (m3)
    clipped: float  # requested biomass saturation change that could not be applied


def apply_bio_exchange(s_l, s_b, ds_b_by_species, f_l, pore_volume=None):
    """Move pore space between liquid, gas and biomass.

    ``ds_b_by_species`` has shape (n_elem, n_bio): biomass saturation change
    per BIO species.  Growth takes ``f_L`` of the new volume from the liquid
    and the rest from the gas; decay gives it back.  Requests that would
    drive S_L or S_G negative are scaled down and reported as clipped.
    """
    s_l = np.asarray(s_l, dtype=float)
    s_b = np.asarray(s_b, dtype=float)
    ds = np.atleast_2d(np.asarray(ds_b_by_species, dtype=float))
    if ds.shape[0] != s_l.shape[0]:
        ds = ds.reshape(s_l.shape[0], -1)
    f_l = np.asarray(f_l, dtype=float)
    d_sl = -(ds * f_l[None, :]).sum(axis=1)
    d_sg = -(ds * (1.0 - f_l)[None, :]).sum(axis=1)
    d_sb = ds.sum(axis=1)
    s_g = 1.0 - s_l - s_b
    scale = np.ones_like(s_l)
    for avail, d in ((s_l, d_sl), (s_g, d_sg), (s_b, d_sb)):
        need = d < 0
        lim = np.ones_like(s_l)
        np.divide(np.maximum(avail, 0.0), -d, out=lim, where=need & (-d > avail))
        scale = np.minimum(scale, lim)
    clipped = float(np.sum(np.abs(d_sb) * (1.0 - scale)))
    if clipped > 0:
        log.warning("biomass exchange clipped by %.3e in saturation units", clipped)
    new_sl = s_l + scale * d_sl
    new_sb = s_b + scale * d_sb
    new_sg = s_g + scale * d_sg
    # round-off guard: keep the partition exact
    new_sl = np.clip(new_sl, 0.0, 1.0)
    new_sb = np.clip(new_sb, 0.0, 1.0)
    new_sl = np.where(new_sg < 0, 1.0 - new_sb, new_sl)
    wd = (new_sl - s_l) * (1.0 if pore_volume is None else np.asarray(pore_volume))
    return ExchangeResult(new_sl, new_sb, wd, clipped)


def refresh_heads(ctx: FlowContext, state: GridState, old_s_b) -> None:
    """Recompute heads after S_L/S_B changed outside the flow solver.

    The elastic part of storage in saturated elements is preserved.
    """
    ws_old = ctx.w_sat(np.asarray(old_s_b))
    W_old, _ = ctx.storage(state.head, old_s_b)
    elastic = np.maximum(W_old - ws_old, 0.0)
    W = ctx.phi * ctx.V * state.s_l + elastic
    h, _ = ctx.head_from_storage(W, state.s_b)
    state.head = np.where(ctx.active, h, state.head)
