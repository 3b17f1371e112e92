"""Kinetic reaction networks with microbial response gating.

Rate law for one reaction::

    R = r f_B prod X^n  prod X/(X + K (1 + sum X_c/K_c))  prod K_i/(X_i + K_i)

and every species changes as ``dX/dt = sum_reactions x * R``.  The gate
``f_B`` of a reaction with a BIO actor is the minimum of the biomass-space,
temperature and liquid-saturation responses, clamped to [0, 1].

All elements are integrated together with one embedded Dormand-Prince 5(4)
step sequence, trimmed so the accumulated time equals the outer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import expit

from .deck.model import ReactionSpec, Species, SpeciesRegistry
from .errors import StiffnessFailure

NEG_TOL = 1e-12
STANDARD, TYPESET = "standard", "typeset"


# -- scalar forms ----------------------------------------------------------------


def reaction_velocity(spec: ReactionSpec, conc: Mapping[str, float], f_b: float = 1.0,
                      inhibition: str = STANDARD) -> float:
    """Velocity R of one reaction at the given concentrations."""
    r = spec.rate * f_b
    for name, n in spec.norder:
        r *= conc[name] ** n
    crowd = 1.0 + sum(conc[name] / k for name, k in spec.competition)
    for name, k in spec.mmm:
        x = conc[name]
        den = x + k * crowd
        r *= x / den if den > 0 else 0.0
    for name, k in spec.inhibition:
        x = conc[name]
        r *= k / (x + k) if inhibition == STANDARD else x / (x + k)
    return r


def temperature_response(t, t_lb, t_ub):
    """f(T): product of two logistic switches (temperatures in K)."""
    return expit(np.asarray(t, dtype=float) - t_lb) * expit(t_ub - np.asarray(t, dtype=float))


def saturation_response(s_l, sl_lb, sl_ub):
    """f(S_L) divided by its maximum, reached at sqrt(sl_lb * sl_ub)."""
    s_l = np.asarray(s_l, dtype=float)
    star = math.sqrt(sl_lb * sl_ub)
    peak = star / (sl_lb + star) * sl_ub / (sl_ub + star)
    return s_l / (sl_lb + s_l) * sl_ub / (sl_ub + s_l) / peak


def _ratio_or_zero(num, den):
    """num/den with 0/0 -> 0 and x/0 -> inf (x > 0)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    q = np.full(np.broadcast(num, den).shape, np.inf)
    np.divide(num, den, out=q, where=den > 0)
    return np.where(num == 0.0, 0.0, np.where(den > 0, q, np.inf))


def space_response(s_l, s_g, s_b, f_l, slr=0.0, sgr=0.0):
    """f(S_B): room left for biomass in the pore space, liquid and gas."""
    a = 1.0 - (np.asarray(s_b) - slr) / (1.0 - slr - sgr)
    b = 1.0 - f_l * _ratio_or_zero(s_b, s_l)
    c = 1.0 - (1.0 - f_l) * _ratio_or_zero(s_b, s_g)
    return np.minimum(np.minimum(a, b), c)


def microbial_gate(s_l, s_g, s_b, temperature, actor: Species, slr=0.0, sgr=0.0):
    """f_B for a reaction catalysed by ``actor``; responses without parameters are 1."""
    f = space_response(s_l, s_g, s_b, actor.f_l, slr, sgr)
    if actor.t_lb is not None:
        f = np.minimum(f, temperature_response(temperature, actor.t_lb, actor.t_ub))
    if actor.sl_lb is not None:
        f = np.minimum(f, saturation_response(s_l, actor.sl_lb, actor.sl_ub))
    f = np.clip(f, 0.0, 1.0)
    return float(f) if np.ndim(f) == 0 else f


# -- compiled network --------------------------------------------------------------


@dataclass(frozen=True)
class _Compiled:
    stoich: np.ndarray  # (n_rx, ns)
    rate: np.ndarray
    norder: tuple
    mmm: tuple
    com: tuple
    inb: tuple
    actor: tuple  # species or None per reaction


class ReactionNetwork:
    """Reactions compiled against a species registry for vectorised evaluation."""

    def __init__(self, reactions, registry: SpeciesRegistry, inhibition: str = STANDARD):
        self.reactions = tuple(reactions)
        self.registry = registry
        self.inhibition = inhibition
        ns = len(registry)
        idx = registry.index
        stoich = np.zeros((len(self.reactions), ns))
        for j, rx in enumerate(self.reactions):
            for name, x in rx.stoichiometry:
                stoich[j, idx(name)] += x
        self.c = _Compiled(
            stoich,
            np.array([rx.rate for rx in self.reactions], dtype=float),
            tuple(tuple((idx(n), e) for n, e in rx.norder) for rx in self.reactions),
            tuple(tuple((idx(n), k) for n, k in rx.mmm) for rx in self.reactions),
            tuple(tuple((idx(n), k) for n, k in rx.competition) for rx in self.reactions),
            tuple(tuple((idx(n), k) for n, k in rx.inhibition) for rx in self.reactions),
            tuple(registry.get(rx.bio) if rx.bio else None for rx in self.reactions),
        )
        # columns whose concentration occupies pore volume (BIO with a density)
        self.occupying = np.array([i for i, s in enumerate(registry.entries) if s.occupies_volume], dtype=int)
        self.f_l = np.array([registry.entries[i].f_l for i in self.occupying])
        self.rho = np.array([registry.entries[i].rho for i in self.occupying])
        self.unit_mass = np.array([s.unit_mass for s in registry.entries])
        self.touched = np.flatnonzero(np.any(stoich != 0, axis=0))

    @property
    def empty(self) -> bool:
        return len(self.reactions) == 0

    def velocities(self, conc, f_b):
        """R per reaction, shape (n_elem, n_rx)."""
        c = self.c
        conc = np.atleast_2d(conc)
        out = np.empty((conc.shape[0], len(self.reactions)))
        for j in range(len(self.reactions)):
            r = c.rate[j] * f_b[:, j]
            for i, n in c.norder[j]:
                r = r * conc[:, i] ** n
            crowd = 1.0
            for i, k in c.com[j]:
                crowd = crowd + conc[:, i] / k
            for i, k in c.mmm[j]:
                x = conc[:, i]
                den = x + k * crowd
                r = r * np.where(den > 0, x / np.where(den > 0, den, 1.0), 0.0)
            for i, k in c.inb[j]:
                x = conc[:, i]
                r = r * (k / (x + k) if self.inhibition == STANDARD else x / (x + k))
            out[:, j] = r
        return out


@dataclass
class ElementEnv:
    """Per-element quantities held fixed during a kinetics step (active elements only)."""

    s_l: np.ndarray
    s_b: np.ndarray
    temperature: float
    liquid_volume: np.ndarray  # m3
    pore_volume: np.ndarray  # m3
    slr: np.ndarray
    sgr: np.ndarray

    @property
    def s_g(self):
        return 1.0 - self.s_l - self.s_b


@dataclass
class KineticsResult:
    conc: np.ndarray  # per litre of the start-of-step liquid volume
    reacted: np.ndarray  # net change per element and species (declared units per litre)
    ds_b: np.ndarray  # biomass saturation change per element and occupying species
    clipped: np.ndarray  # amount added by clipping negatives, per element and species
    substeps: int


class _Rhs:
    def __init__(self, net: ReactionNetwork, env: ElementEnv, c0):
        self.net = net
        self.env = env
        self.c0 = c0
        occ = net.occupying
        # dS_B per unit concentration change of each occupying column
        self.beta = (env.liquid_volume[:, None] * 1000.0 * net.unit_mass[occ][None, :]
                     / (net.rho[None, :] * env.pore_volume[:, None])) if len(occ) else None

    def saturations(self, c):
        env = self.env
        if self.beta is None:
            return env.s_l, env.s_g, env.s_b, None
        occ = self.net.occupying
        ds = (c[:, occ] - self.c0[:, occ]) * self.beta
        s_b = env.s_b + ds.sum(axis=1)
        s_l = env.s_l - (ds * self.net.f_l[None, :]).sum(axis=1)
        s_g = env.s_g - (ds * (1.0 - self.net.f_l)[None, :]).sum(axis=1)
        return s_l, s_g, s_b, ds

    def gates(self, c):
        net = self.net
        n = c.shape[0]
        f = np.ones((n, len(net.reactions)))
        if any(a is not None for a in net.c.actor):
            s_l, s_g, s_b, _ = self.saturations(c)
            for j, actor in enumerate(net.c.actor):
                if actor is not None:
                    f[:, j] = microbial_gate(
                        np.maximum(s_l, 0.0), np.maximum(s_g, 0.0), np.maximum(s_b, 0.0),
                        self.env.temperature, actor, self.env.slr, self.env.sgr,
                    )
        return f

    def __call__(self, c):
        R = self.net.velocities(np.maximum(c, 0.0), self.gates(c))
        return R @ self.net.c.stoich


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def integrate_dp54(f, y0, dt, rtol=1e-8, atol=1e-30, max_steps=100000, h0=None):
    """Integrate autonomous ``y' = f(y)`` over ``dt`` with adaptive DP5(4).

    Steps that would push a component below ``-NEG_TOL`` are rejected and
    halved.  Returns ``(y, n_accepted)``.  The last step is trimmed so the
    accumulated time is exactly ``dt``.
    """
    y = np.array(y0, dtype=float)
    t = 0.0
    h = dt if h0 is None else min(h0, dt)
    k1 = f(y)
    steps = 0
    tries = 0
    while t < dt:
        if t + h >= dt or t + h == t:
            h = dt - t
        if h <= dt * 1e-15 or tries > max_steps:
            raise StiffnessFailure(f"kinetics step size collapsed to {h:.3e} s", 0, 0.0)
        tries += 1
        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
            ks.append(f(yi))
        y5 = yi  # row 7 of the tableau is the 5th-order solution (FSAL)
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(scale > 0, np.abs(err) / scale, np.where(err == 0, 0.0, np.inf))
        enorm = float(np.max(ratio)) if ratio.size else 0.0
        if not np.all(np.isfinite(y5)):
            h *= 0.25
            continue
        if np.any(y5 < -NEG_TOL):
            h *= 0.5
            continue
        if enorm <= 1.0:
            t = dt if t + h >= dt else t + h
            y = y5
            k1 = ks[6]
            steps += 1
            fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
            h *= fac
        else:
            h *= max(0.2, 0.9 * enorm ** -0.2)
    return y, steps


def step_kinetics(conc, net: ReactionNetwork, env: ElementEnv, dt: float, rtol=1e-8, atol=1e-30,
                  max_steps=100000) -> KineticsResult:
    """Integrate all reactions over ``dt`` in every (active) element.

    ``conc`` is (n_elem, n_species) per litre of liquid.  Only species that
    appear in some stoichiometry change.  Negative round-off below
    ``-NEG_TOL`` is rejected; what remains is clipped to zero and reported.
    """
    conc = np.asarray(conc, dtype=float)
    n, ns = conc.shape
    nocc = len(net.occupying)
    if net.empty or n == 0 or dt <= 0:
        return KineticsResult(conc.copy(), np.zeros_like(conc), np.zeros((n, nocc)), np.zeros_like(conc), 0)
    cols = net.touched
    rhs = _Rhs(net, env, conc)
    full = conc.copy()

    def f(yflat):
        full[:, cols] = yflat.reshape(n, len(cols))
        return rhs(full)[:, cols].ravel()

    y0 = conc[:, cols].ravel()
    y, steps = integrate_dp54(f, y0, dt, rtol, atol, max_steps)
    new = conc.copy()
    new[:, cols] = y.reshape(n, len(cols))
    clipped = np.where(new < 0.0, -new, 0.0)
    reacted = new - conc
    new = np.maximum(new, 0.0)
    _, _, _, ds = rhs.saturations(new)
    ds_b = ds if ds is not None else np.zeros((n, 0))
    return KineticsResult(new, reacted, ds_b, clipped, steps)
