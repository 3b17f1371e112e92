"""One simulation run: operator-split time loop, mass audit, CSV outputs.

Per master step the solvers run in a fixed order:

    flow -> transport (solutes, then BIO with chemotaxis) -> kinetics
         -> equilibrium -> audit

The flow step fixes the master dt.  Transport and kinetics sub-step
internally and always cover exactly that dt.  Steps are truncated at
report times, schedule breakpoints and the end time.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .core import GridState, MassLedger, audit_ledger
from .deck.model import SimulationDeck
from .equilibrium import solve_equilibria
from .errors import AuditFailure, InputError, SolverError
from .flow import (
    FlowContext, FlowResult, StepController, apply_bio_exchange, liquid_volume, refresh_heads,
    step_liquid,
)
from .kinetics import ElementEnv, ReactionNetwork, step_kinetics
from .transport import ChemotaxisSpec, TransportGeometry, step_bio_transport, step_solute_transport

log = logging.getLogger(__name__)

WATER = "water"
SPECIES_RATE_KG = {"kg/s": 1.0, "mg/s": 1e-6}


# -- output tables -------------------------------------------------------------


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def array(self, name: str) -> np.ndarray:
        return np.array(self.column(name), dtype=float)

    def where(self, **match) -> "Table":
        idx = {self.columns.index(k): v for k, v in match.items()}
        return Table(self.columns, [r for r in self.rows if all(r[i] == v for i, v in idx.items())])


@dataclass
class RunOutputs:
    grid: Table
    timeseries: Table
    flux: Table
    probes: Table
    steps: int = 0
    worst_audit: float = 0.0
    end_time: float = 0.0

    FILES = ("grid.csv", "timeseries.csv", "flux.csv", "probes.csv")

    def tables(self):
        return dict(zip(self.FILES, (self.grid, self.timeseries, self.flux, self.probes)))

    def times(self) -> np.ndarray:
        return np.array(sorted(set(self.timeseries.column("time[s]"))), dtype=float)

    def state_series(self, column: str, element: int) -> np.ndarray:
        return self.timeseries.where(element=element).array(column)

    def profile(self, column: str, time: float) -> np.ndarray:
        return self.timeseries.where(**{"time[s]": time}).array(column)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_outputs(outputs: RunOutputs, directory: str) -> list[str]:
    """Write the four CSV files; returns their paths."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {directory!r}: {exc}") from exc
    paths = []
    for name, table in outputs.tables().items():
        path = os.path.join(directory, name)
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(table.columns)
                for row in table.rows:
                    w.writerow([_fmt(v) for v in row])
        except OSError as exc:
            raise OSError(f"cannot write {path!r}: {exc}") from exc
        paths.append(path)
    return paths


_TEXT_COLUMNS = {"material", "species", "boundary"}
_INT_COLUMNS = {"element", "atmosphere"}


def _parse_cell(col: str, text: str):
    if col in _TEXT_COLUMNS:
        return text
    if col in _INT_COLUMNS:
        return int(text)
    return float(text)


def read_outputs(directory: str) -> RunOutputs:
    tables = []
    for name in RunOutputs.FILES:
        with open(os.path.join(directory, name), newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            cols = tuple(next(r))
            rows = [tuple(_parse_cell(c, v) for c, v in zip(cols, row)) for row in r]
        tables.append(Table(cols, rows))
    return RunOutputs(*tables)


# -- derived metrics -----------------------------------------------------------


def water_table_elevation(z, head) -> float:
    """Elevation (m) of the lowest-connected zero pressure head.

    Scans up from the bottom element while the head is nonnegative and
    interpolates the crossing; below the domain the bottom head is
    extrapolated hydrostatically.
    """
    z = np.asarray(z, dtype=float)
    h = np.asarray(head, dtype=float)
    order = np.argsort(z)  # bottom first
    zb, hb = z[order], h[order]
    if hb[0] < 0:
        return float(zb[0] + hb[0])
    for i in range(1, len(zb)):
        if hb[i] < 0:
            f = hb[i - 1] / (hb[i - 1] - hb[i])
            return float(zb[i - 1] + f * (zb[i] - zb[i - 1]))
    return float(zb[-1] + hb[-1])


# -- setup -------------------------------------------------------------------------


class _Run:
    def __init__(self, deck: SimulationDeck):
        self.deck = deck
        self.s = deck.solver
        self.reg = deck.species
        self.mats = deck.element_materials()
        self.ctx = FlowContext(deck.grid, self.mats, self.s)
        ctx = self.ctx
        self.act = ctx.idx
        self.names = self.reg.names
        ents = self.reg.entries
        self.unit_mass = np.array([sp.unit_mass for sp in ents])
        self.pri = np.array([i for i, sp in enumerate(ents) if sp.kind == "PRI"], dtype=int)
        self.bio = np.array([i for i, sp in enumerate(ents) if sp.kind == "BIO"], dtype=int)
        self.ledgered = [i for i, sp in enumerate(ents) if sp.kind in ("PRI", "BIO")]
        self.occ = np.array([i for i, sp in enumerate(ents) if sp.occupies_volume], dtype=int)
        self.occ_rho = np.array([ents[i].rho for i in self.occ])
        self.occ_fl = np.array([ents[i].f_l for i in self.occ])
        self.network = ReactionNetwork(deck.reactions, self.reg, self.s.inhibition)
        loc = np.arange(len(self.act))
        self.geom = TransportGeometry(len(self.act), loc[:-1], loc[1:], ctx.A_int, ctx.d_int)
        self.chemo = [
            ChemotaxisSpec(
                tuple((self.reg.index(n), d) for n, d in ents[i].attractants),
                tuple((self.reg.index(n), d) for n, d in ents[i].repellents),
            )
            for i in self.bio
        ]
        self.pore = ctx.phi * ctx.V
        self.slr = np.array([m.slr for m in self.mats])
        self.sgr = np.array([m.sgr for m in self.mats])

    # -- initial condition ---------------------------------------------------------

    def initial_state(self) -> GridState:
        ctx = self.ctx
        n = self.deck.grid.n_elements
        ns = len(self.names)
        conc = np.zeros((n, ns))
        s_l = np.full(n, np.nan)
        head = np.full(n, np.nan)
        wt = self.deck.initial.water_table
        if wt is not None:
            head = wt - ctx.z
        for rec in self.deck.initial.records:
            sel = slice(0, n) if rec.selector == "all" else slice(rec.lo, rec.hi + 1)
            for key, v in rec.values:
                if key == "S_L":
                    s_l[sel] = v
                    head[sel] = np.nan
                elif key == "h":
                    head[sel] = v
                    s_l[sel] = np.nan
                elif key == "P_L":
                    head[sel] = v / (self.s.rho_l * self.s.gravity)
                    s_l[sel] = np.nan
                else:
                    conc[sel, self.reg.index(key)] = v
        # biomass volume per unit liquid saturation
        a = np.zeros(n)
        if len(self.occ):
            a = (conc[:, self.occ] * 1000.0 * self.unit_mass[self.occ] / self.occ_rho).sum(axis=1)
        s_rel_h = ctx.s_rel(np.where(np.isnan(head), 0.0, head))
        from_head = ~np.isnan(head)
        default = np.isnan(s_l) & ~from_head
        # saturated when nothing is given
        s_l = np.where(default, 1.0 / (1.0 + a), s_l)
        s_l = np.where(from_head, s_rel_h / (1.0 + a * s_rel_h), s_l)
        s_b = a * s_l
        atm = ~ctx.active
        s_l[atm] = 0.0
        s_b[atm] = 0.0
        bad = (s_l + s_b > 1.0 + 1e-12) & ctx.active
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise InputError(f"initial S_L + S_B = {s_l[i] + s_b[i]:.6g} > 1 in element {i}")
        s_srel = s_l / np.where(atm, 1.0, 1.0 - s_b)
        low = (s_srel <= self.slr) & ctx.active
        if np.any(low):
            i = int(np.flatnonzero(low)[0])
            raise InputError(f"initial S_L in element {i} is not above residual saturation")
        h = ctx.head_of_srel(np.where(atm, 1.0, np.minimum(s_srel, 1.0)))
        # keep heads that were given explicitly (they may carry elastic storage)
        h = np.where(from_head, head, h)
        h[atm] = 0.0
        st = GridState(
            s_l=s_l, s_b=s_b, head=h, temperature=self.s.temperature, conc=conc, species=self.names,
            rho_l=self.s.rho_l, rho_g=self.s.rho_g, mu_l=self.s.mu_l, gravity=self.s.gravity, time=0.0,
        )
        if self.s.equilibrium and self.deck.equilibria:
            st.conc, _ = solve_equilibria(st.conc, self.deck.equilibria, self.reg, st.temperature)
        return st

    # -- accounting -----------------------------------------------------------------

    def stored(self, st: GridState) -> dict[str, float]:
        V = liquid_volume(self.ctx, st)
        out = {WATER: float(np.sum(V) * self.s.rho_l)}
        amount = st.conc[self.act] * V[self.act, None] * 1000.0
        kg = amount.sum(axis=0) * self.unit_mass
        for i in self.ledgered:
            out[self.names[i]] = float(kg[i])
        return out

    def species_sources(self, t0: float, t1: float, st: GridState, V):
        """Injected amount per second (declared units), shape (n_active, ns)."""
        n = self.deck.grid.n_elements
        src = np.zeros((n, len(self.names)))
        for b in self.deck.boundaries:
            if b.kind != "species" or not self.ctx.active[b.element]:
                continue
            j = self.reg.index(b.species)
            sp = self.reg.entries[j]
            kg = b.schedule.mean(t0, t1) * (sp.molar_mass if b.unit == "mol/s" else SPECIES_RATE_KG[b.unit])
            rate = kg / sp.unit_mass
            if rate < 0:
                avail = st.conc[b.element, j] * V[b.element] * 1000.0
                rate = -min(-rate, 0.9 * avail / (t1 - t0))
            src[b.element, j] += rate
        return src[self.act]


def run_simulation(deck: SimulationDeck, out_dir: str | None = None) -> RunOutputs:
    """Run the deck to ``t_end``; optionally write the CSV outputs.

    On a solver or audit failure the outputs gathered so far are written
    (when ``out_dir`` is given) before the error propagates.
    """
    run = _Run(deck)
    rec = _Recorder(run)
    try:
        _loop(run, rec)
    except (SolverError, AuditFailure):
        if out_dir:
            write_outputs(rec.outputs(), out_dir)
        raise
    outputs = rec.outputs()
    if out_dir:
        write_outputs(outputs, out_dir)
    return outputs


class _Recorder:
    def __init__(self, run: _Run):
        self.run = run
        deck = run.deck
        g = deck.grid
        cols = ("element", "z[m]", "volume[m3]", "area[m2]", "material", "k[m2]", "phi[-]", "psi_s[m]",
                "b[-]", "slr[-]", "sgr[-]", "rho_m[kg/m3]", "atmosphere")
        rows = []
        for i, (e, m) in enumerate(zip(g.elements, run.mats)):
            rows.append((i, e.z, e.volume, e.area, m.name, m.k, m.phi, m.psi_s, m.b, m.slr, m.sgr, m.rho_m,
                         int(e.atmosphere)))
        self.grid = Table(cols, rows)
        sp_cols = tuple(f"{sp.name}[{'Pa' if sp.kind == 'GAS' else sp.unit}]" for sp in deck.species.entries)
        self.ts = Table(("time[s]", "element", "S_L[-]", "S_G[-]", "S_B[-]", "P_L[Pa]", "h[m]", "T[K]") + sp_cols)
        self.labels = [b.label for b in deck.boundaries if b.kind in ("source", "uptake", "drainage", "head")]
        self.labels = list(dict.fromkeys(self.labels))
        fcols = ["time[s]", "water_in[m3]", "water_out[m3]"] + [f"{lab}[m3]" for lab in self.labels]
        for i in run.ledgered:
            name = run.names[i]
            fcols += [f"{name}_in[kg]", f"{name}_out[kg]", f"{name}_prod[kg]", f"{name}_dest[kg]"]
        self.flux = Table(tuple(fcols))
        self.probes = Table(("time[s]", "species", "element", "value"))
        self.cum = {lab: 0.0 for lab in self.labels}
        self.water_in = 0.0
        self.water_out = 0.0
        self.steps = 0
        self.worst = 0.0
        self.time = 0.0

    def snapshot(self, st: GridState, ledger: MassLedger) -> None:
        t = float(st.time)
        s_g = st.s_g
        p = st.p_l
        for i in range(len(st.s_l)):
            self.ts.rows.append((t, i, float(st.s_l[i]), float(s_g[i]), float(st.s_b[i]), float(p[i]),
                                 float(st.head[i]), float(st.temperature)) + tuple(float(v) for v in st.conc[i]))
        row = [t, self.water_in, self.water_out] + [self.cum[lab] for lab in self.labels]
        for i in self.run.ledgered:
            e = ledger.entries[self.run.names[i]]
            row += [e.influx, e.outflux, e.production, e.destruction]
        self.flux.rows.append(tuple(row))
        for sp, el in self.run.deck.outputs.probes:
            self.probes.rows.append((t, sp, el, float(st.conc[el, self.run.names.index(sp)])))
        self.time = t

    def outputs(self) -> RunOutputs:
        return RunOutputs(self.grid, self.ts, self.flux, self.probes, self.steps, self.worst, self.time)


def _breakpoints(deck: SimulationDeck) -> list[float]:
    pts = set()
    for b in deck.boundaries:
        if b.schedule is not None:
            pts.update(b.schedule.breakpoints())
    return sorted(p for p in pts if p > 0)


def _loop(run: _Run, rec: _Recorder) -> None:
    deck, s, ctx = run.deck, run.s, run.ctx
    st = run.initial_state()
    ledger = MassLedger.start(run.stored(st), tracers=[run.names[i] for i in run.ledgered
                                                        if run.reg.entries[i].is_tracer])
    out_spec = deck.outputs
    reports = out_spec.report_times(s.t_end)
    if not out_spec.every_step and (not reports or reports[0] > 0):
        reports = [0.0] + reports
    stops = sorted(set([t for t in reports if t > 0] + [p for p in _breakpoints(deck) if p < s.t_end] + [s.t_end]))
    if out_spec.every_step or (reports and reports[0] == 0.0):
        rec.snapshot(st, ledger)
    ctl = StepController(s)
    act = run.act
    flowing = s.flow and len(act) > 0
    reports_set = set(reports)
    step = 0
    stop_i = 0
    while st.time < s.t_end:
        while stop_i < len(stops) and stops[stop_i] <= st.time:
            stop_i += 1
        target = stops[stop_i] if stop_i < len(stops) else s.t_end
        req = ctl.propose()
        truncated = False
        if st.time + req >= target or target - (st.time + req) < 1e-9 * max(1.0, target):
            req = target - st.time
            truncated = True
        step += 1
        t0 = st.time
        V0 = liquid_volume(ctx, st)
        # 1. flow
        if flowing:
            st, dt, fres = step_liquid(st, ctx, deck.boundaries, req, step)
        else:
            dt = req
            n = deck.grid.n_elements
            fres = FlowResult(dt, 0, np.zeros(len(ctx.up)), np.zeros(n), np.zeros(n), {}, 0.0)
        t1 = t0 + dt if dt < req else target if truncated else t0 + dt
        V1 = liquid_volume(ctx, st)
        for lab, vol in fres.by_boundary.items():
            rec.cum[lab] = rec.cum.get(lab, 0.0) + vol
            if vol >= 0:
                rec.water_in += vol
            else:
                rec.water_out -= vol
        win = sum(v for v in fres.by_boundary.values() if v > 0)
        wout = -sum(v for v in fres.by_boundary.values() if v < 0)
        ledger.add(WATER, influx=win * s.rho_l, outflux=wout * s.rho_l)
        try:
            _transport(run, st, V0, V1, fres, dt, t0, ledger, step)
            _kinetics(run, st, dt, ledger)
        except SolverError as exc:
            if exc.step is None:
                exc.step, exc.time = step, t0
            raise
        if s.equilibrium and deck.equilibria:
            st.conc, _ = solve_equilibria(st.conc, deck.equilibria, run.reg, st.temperature)
        st.time = t1
        st.check_partition()
        ledger.record_storage(run.stored(st))
        try:
            rep = audit_ledger(ledger, s.audit_tol, s.tracer_tol)
        except AuditFailure as exc:
            raise AuditFailure(f"{exc} at step {step}, t={t0:.6g} s", exc.report) from None
        rec.worst = max(rec.worst, rep.worst_error)
        rec.steps = step
        ctl.accept(req, dt, truncated)
        if out_spec.every_step or (st.time in reports_set):
            rec.snapshot(st, ledger)
    if rec.time != st.time and not out_spec.every_step and s.t_end in reports_set:
        rec.snapshot(st, ledger)


def _transport(run: _Run, st: GridState, V0, V1, fres: FlowResult, dt, t0, ledger, step):
    s, ctx, act = run.s, run.ctx, run.act
    if len(act) == 0:
        return
    v0, v1 = V0[act], V1[act]
    theta = (ctx.phi * st.s_l)[act]
    src = run.species_sources(t0, t0 + dt, st, V0)
    um = run.unit_mass
    moved_in = np.zeros(len(run.names))
    moved_out = np.zeros(len(run.names))
    if s.transport and len(run.pri):
        D = np.array([run.reg.entries[i].diffusivity for i in run.pri])
        res = step_solute_transport(st.conc[act][:, run.pri], run.geom, v0, v1, theta, fres.q_interface,
                                    fres.q_out[act], dt, D, src[:, run.pri], s.max_substeps)
        st.conc[np.ix_(act, run.pri)] = res.conc
        moved_in[run.pri] += res.inflow
        moved_out[run.pri] += res.outflow
    elif len(run.pri):
        c = st.conc[act][:, run.pri] * v0[:, None] + src[:, run.pri] * dt / 1000.0
        st.conc[np.ix_(act, run.pri)] = c / v1[:, None]
        moved_in[run.pri] += src[:, run.pri].sum(axis=0) * dt
    if len(run.bio):
        if s.transport:
            ents = run.reg.entries
            eps = np.array([ents[i].eps for i in run.bio])
            D = np.array([ents[i].diffusivity for i in run.bio])
            xl = st.conc[act] * 1000.0 * um[None, :] / s.rho_l
            chemo = run.chemo if s.chemotaxis else None
            res = step_bio_transport(st.conc[act][:, run.bio], run.geom, v0, v1, theta, fres.q_interface,
                                     fres.q_out[act], dt, eps, D, chemo, xl, src[:, run.bio], s.max_substeps)
            newc = res.conc
            moved_in[run.bio] += res.inflow
            moved_out[run.bio] += res.outflow
        else:
            newc = (st.conc[act][:, run.bio] * v0[:, None] + src[:, run.bio] * dt / 1000.0) / v1[:, None]
            moved_in[run.bio] += src[:, run.bio].sum(axis=0) * dt
        st.conc[np.ix_(act, run.bio)] = newc
        if len(run.occ):
            _rebalance_biomass(run, st, ledger)
    for i in run.ledgered:
        if moved_in[i] or moved_out[i]:
            ledger.add(run.names[i], influx=moved_in[i] * um[i], outflux=moved_out[i] * um[i])


def _biomass_saturation(run: _Run, st: GridState, V) -> np.ndarray:
    """Per occupying species biomass saturation from the species amounts."""
    mass = st.conc[:, run.occ] * V[:, None] * 1000.0 * run.unit_mass[run.occ][None, :]
    return mass / run.occ_rho[None, :] / run.pore[:, None]


def _apply_exchange(run: _Run, st: GridState, ds, ledger) -> None:
    """Move pore space for biomass change ``ds`` (n_elem, n_occ); keeps species amounts."""
    ctx, act = run.ctx, run.act
    if not np.any(ds):
        return
    V_before = liquid_volume(ctx, st)
    old_sb = st.s_b.copy()
    ex = apply_bio_exchange(st.s_l[act], st.s_b[act], ds[act], run.occ_fl)
    st.s_l[act] = ex.s_l
    st.s_b[act] = ex.s_b
    refresh_heads(ctx, st, old_sb)
    V_after = liquid_volume(ctx, st)
    scale = np.where(V_after > 0, V_before / np.where(V_after > 0, V_after, 1.0), 1.0)
    st.conc[act] *= scale[act, None]
    dw = float(np.sum(V_after[act] - V_before[act])) * run.s.rho_l
    ledger.add_net_reaction(WATER, dw)


def _rebalance_biomass(run: _Run, st: GridState, ledger) -> None:
    V = liquid_volume(run.ctx, st)
    target = _biomass_saturation(run, st, V)
    current_total = st.s_b
    ds_total = target.sum(axis=1) - current_total
    if not np.any(ds_total[run.act]):
        return
    # split the total change over species in proportion to their own change is not
    # tracked; attribute it by each species' share of the target volume
    share = np.where(target.sum(axis=1, keepdims=True) > 0,
                     target / np.where(target.sum(axis=1, keepdims=True) > 0, target.sum(axis=1, keepdims=True), 1.0),
                     1.0 / max(len(run.occ), 1))
    _apply_exchange(run, st, share * ds_total[:, None], ledger)


def _kinetics(run: _Run, st: GridState, dt: float, ledger) -> None:
    s, act = run.s, run.act
    if not s.kinetics or run.network.empty or len(act) == 0:
        return
    V = liquid_volume(run.ctx, st)
    env = ElementEnv(st.s_l[act], st.s_b[act], st.temperature, V[act], run.pore[act], run.slr[act], run.sgr[act])
    res = step_kinetics(st.conc[act], run.network, env, dt, s.kin_rtol, s.kin_atol, s.max_substeps)
    st.conc[act] = res.conc
    amount = V[act, None] * 1000.0
    prod = (res.reacted * amount).sum(axis=0) * run.unit_mass
    adj = (res.clipped * amount).sum(axis=0) * run.unit_mass
    for i in run.ledgered:
        ledger.add_net_reaction(run.names[i], float(prod[i]))
        if adj[i]:
            ledger.add(run.names[i], adjustment=float(adj[i]))
    if len(run.occ) and res.ds_b.size:
        ds = np.zeros((len(st.s_l), len(run.occ)))
        ds[act] = res.ds_b
        _apply_exchange(run, st, ds, ledger)
