"""Acceptance criteria, one test per criterion.

Each test appends a single ``N PASS|FAIL title: detail`` line that is
printed in the terminal summary, then asserts.
"""

import csv
import dataclasses
import math
import random
import statistics

import numpy as np
import pytest

from retort.deck import check_deck, load_deck, parse_deck, serialize_deck, set_parameter
from retort.deck.model import EquilibriumSpec, Species, SpeciesRegistry
from retort.equilibrium import equilibrium_residual, solve_equilibria
from retort.flow import StepController, liquid_volume, step_liquid
from retort.hydraulics import cosby_pedotransfer
from retort.isotopes import compute_delta15N
from retort.kinetics import ElementEnv, ReactionNetwork, step_kinetics
from retort.orchestrator import _Run, run_simulation
from retort.sweep import generate_replicas, run_ensemble
from retort.transport import step_solute_transport

from conftest import ACCEPTANCE, DECK_DIR, GOLDEN, deck_path, deck_text, golden
from oracles import gebik_reference, network_deck, random_network, reference_kinetics, water_table

DAY = 86400.0

pytestmark = pytest.mark.slow


def report(n, title, ok, detail):
    line = f"{n} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _rel(a, b):
    return abs(a - b) / abs(b)


# 1 ---------------------------------------------------------------------------------


def test_01_pedotransfer_fidelity():
    rows = {
        (16, 60, 24): (0.469, 6.73, -0.47, 1.66e-13),
        (9, 66, 25): (0.478, 6.88, -0.58, 1.29e-13),
        (12, 73, 15): (0.474, 5.29, -0.53, 1.44e-13),
        (12, 68, 20): (0.474, 6.09, -0.53, 1.44e-13),
        (90, 5, 5): (0.46, 3.705, -5.02e-2, 2.24e-12),
    }
    bad = []
    for tex, want in rows.items():
        got = cosby_pedotransfer(*tex)
        for name, g, w, tol in zip(("phi", "b", "psi_s", "k"), got, want, (0.05, 0.05, 0.05, 0.10)):
            if _rel(g, w) > tol:
                bad.append(f"{'-'.join(map(str, tex))} {name}={g:.4g} vs {w:.4g} ({_rel(g, w):.1%})")
    report(1, "pedotransfer fidelity", not bad, "; ".join(bad) or "all rows within tolerance")


# 2 ---------------------------------------------------------------------------------


def test_02_hydrostatic_no_flow():
    deck = golden("feat_hydrostatic.deck")
    run = _Run(deck)
    ctx = run.ctx
    st = run.initial_state()
    w0 = float(np.sum(liquid_volume(ctx, st)))
    ctrl = StepController(deck.solver)
    t, worst_v = 0.0, 0.0
    while t < 10 * DAY:
        want = min(ctrl.propose(), 10 * DAY - t)
        new, dt, res = step_liquid(st, ctx, deck.boundaries, want)
        ctrl.accept(want, dt, want < ctrl.propose())
        worst_v = max(worst_v, float(np.max(np.abs(res.q_interface / ctx.A_int))))
        new.time = t + dt
        st, t = new, t + dt
    drift = abs(float(np.sum(liquid_volume(ctx, st))) - w0) / w0
    out = run_simulation(deck)
    ok = worst_v < 1e-12 and drift < 1e-10 and out.worst_audit < 1e-10
    report(2, "hydrostatic no-flow", ok,
           f"max |v|={worst_v:.2e} m/s, drift={drift:.2e}, run audit={out.worst_audit:.2e}")


# 3 ---------------------------------------------------------------------------------

CIRCULATION = """\
[SOLVER]
dt_init = 60
dt_max = 60

[MATERIALS]
sand k=2.24e-12 phi=0.46 psi_s=-5.02e-2 b=3.705

[GRID]
layer n=10 dz=0.05 material=sand

[SPECIES]
Br kind=PRI unit=mol/L molar_mass=0 D=2e-9

[INITIAL]
range 0 4 S_L=0.85
range 5 9 S_L=0.35
range 2 4 Br=1
"""


def _euler_reference(c, V0, V1, theta, q, dt, area, dist, D, n=200):
    th = 2 * theta[:-1] * theta[1:] / (theta[:-1] + theta[1:])
    G = th * area / dist * D
    M = c * V0
    h = dt / n
    for j in range(n):
        cc = M / (V0 + (V1 - V0) * (j / n))
        F = np.where(q > 0, q * cc[:-1], q * cc[1:]) + G * (cc[:-1] - cc[1:])
        dM = np.zeros_like(M)
        dM[:-1] -= F
        dM[1:] += F
        M = M + h * dM
    return M / V1


def test_03_transport_conservation():
    run = _Run(parse_deck(CIRCULATION))
    ctx, g = run.ctx, run.geom
    st = run.initial_state()
    c = st.conc[:, :1].copy()
    ref = c[:, 0].copy()
    V = liquid_volume(ctx, st)
    m0 = float(np.sum(c[:, 0] * V))
    moved = 0.0
    for _ in range(1000):
        new, dt, res = step_liquid(st, ctx, [], 60.0)
        V1 = liquid_volume(ctx, new)
        theta = ctx.phi * st.s_l
        c = step_solute_transport(c, g, V, V1, theta, res.q_interface, res.q_out, dt, [2e-9]).conc
        ref = _euler_reference(ref, V, V1, theta, res.q_interface, dt, g.area, g.dist, 2e-9)
        moved += float(np.sum(np.abs(res.q_interface))) * dt
        st, V = new, V1
    drift = abs(float(np.sum(c[:, 0] * V)) - m0) / m0
    err = float(np.max(np.abs(c[:, 0] - ref)) / np.max(np.abs(ref)))
    ok = drift < 1e-8 and err < 1e-4 and moved > 0
    report(3, "transport conservation", ok,
           f"mass drift={drift:.2e}, Linf vs fine Euler={err:.2e}, water moved={moved:.3e} m3")


# 4 ---------------------------------------------------------------------------------


def test_04_kinetics_oracle():
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(100):
        names, rxs, c0 = random_network(rng)
        deck = network_deck(names, rxs, c0)
        net = ReactionNetwork(deck.reactions, deck.species)
        env = ElementEnv(np.ones(1), np.zeros(1), 293.15, np.full(1, 1e-3), np.full(1, 1e-3),
                         np.zeros(1), np.zeros(1))
        c = np.array([[c0[n] for n in names]])
        checkpoints = np.linspace(100.0, 1000.0, 10)
        ref_rows = reference_kinetics(names, rxs, c0, checkpoints)
        for ref in ref_rows:
            c = step_kinetics(c, net, env, 100.0, rtol=1e-10).conc
            for j, n in enumerate(names):
                scale = max(abs(ref[n]), 1e-12)
                worst = max(worst, abs(c[0, j] - ref[n]) / scale)
    report(4, "kinetics oracle", worst < 1e-6, f"worst relative deviation {worst:.2e} over 100 networks x 10 checkpoints")


# 5 ---------------------------------------------------------------------------------


def test_05_equilibrium_residuals():
    rng = random.Random(5)
    worst_res, worst_drift = 0.0, 0.0
    for i in range(1000):
        npri = rng.randint(1, 3)
        pri = [Species(f"P{j}", "PRI", "L", "mol/L", 0.01) for j in range(npri)]
        reg = SpeciesRegistry(tuple(pri + [Species("X", "SEC", "L", "mol/L", 0.02)]))
        spec = EquilibriumSpec(
            f"e{i}", "X", rng.choice([1.0, 2.0, 0.5, 3.0]),
            tuple((f"P{j}", rng.choice([-2.0, -1.0, 1.0, 2.0, 0.5])) for j in range(npri)),
            rng.uniform(-14, 14),
        )
        row = np.array([10 ** rng.uniform(-10, 0) for _ in range(npri)] + [0.0])
        once, _ = solve_equilibria(row, [spec], reg)
        twice, _ = solve_equilibria(once, [spec], reg)
        # residual recomputed by hand
        lq = spec.x_k * math.log10(once[-1]) + sum(x * math.log10(once[j]) for j, (_, x) in enumerate(spec.primaries))
        worst_res = max(worst_res, abs(lq - spec.log10_keq), abs(equilibrium_residual(once, spec, reg)))
        worst_drift = max(worst_drift, float(np.max(np.abs(twice - once) / np.maximum(np.abs(once), 1e-300))))
    ok = worst_res < 1e-10 and worst_drift < 1e-14
    report(5, "equilibrium residuals", ok, f"max |log10 Q/K|={worst_res:.2e}, idempotence drift={worst_drift:.2e}")


# 6 ---------------------------------------------------------------------------------


def _eps_mass(out):
    f = out.flux
    return sum(f.array(f"EPS_{k}[kg]") * s for k, s in (("prod", 1), ("dest", -1), ("in", 1), ("out", -1)))


def _outflow(out):
    t = out.flux.array("time[s]")
    cum = np.abs(out.flux.array("drainage_e31[m3]"))
    rate = np.diff(cum) / np.diff(t)
    return cum[-1], 0.5 * (t[1:] + t[:-1])[int(np.argmax(rate))]


def test_06_case2_clogging():
    deck = golden("case2_clogging.deck")
    clog = run_simulation(deck)
    ctrl = run_simulation(set_parameter(deck, "reaction.eps_production.rate", 0.0))
    above = 19  # last cell above the EPS producers at 1.0-1.2 m
    s_clog = float(np.max(clog.state_series("S_L[-]", above)))
    s_ctrl = float(np.max(ctrl.state_series("S_L[-]", above)))
    a = s_clog >= 0.95 and s_ctrl < 0.95
    q_clog, peak_clog = _outflow(clog)
    q_ctrl, peak_ctrl = _outflow(ctrl)
    b = q_clog < q_ctrl and peak_clog > peak_ctrl
    t = clog.flux.array("time[s]")
    m = _eps_mass(clog)
    early = t <= 12 * DAY
    mm = m[early]
    peaks = [i for i in range(1, len(mm) - 1) if mm[i] > mm[i - 1] and mm[i] > mm[i + 1]]
    c = bool(peaks)
    detail = (f"(a) {'pass' if a else 'fail'}: max S_L above clog {s_clog:.3f} vs control {s_ctrl:.3f}; "
              f"(b) {'pass' if b else 'fail'}: outflow {q_clog:.4f} vs {q_ctrl:.4f} m3, "
              f"peak at {peak_clog / DAY:.2f} vs {peak_ctrl / DAY:.2f} d; "
              f"(c) {'pass' if c else 'fail'}: EPS local max at "
              f"{', '.join(f'{t[early][i] / DAY:.2f}' for i in peaks[:3]) or 'none'} d")
    report(6, "Case 2 bioclogging", a and b and c, detail)


# 7 ---------------------------------------------------------------------------------


def _delta_at_end(out):
    n14 = out.state_series("NO3_14[mol/L]", 0)
    n15 = out.state_series("NO3_15[mol/L]", 0)
    return compute_delta15N(n14, n15)[1]


def test_07_case3_isotopes(tmp_path):
    out = run_simulation(golden("case3_gebik.deck"))
    t = out.times()
    ref = gebik_reference(t)
    worst = 0.0
    for name, unit in (("B", "mg/L"), ("N2O_44", "mol/L"), ("N2O_a", "mol/L"), ("N2O_b", "mol/L"),
                       ("NO3_14", "mol/L"), ("NO3_15", "mol/L")):
        got = out.state_series(f"{name}[{unit}]", 0)[1:]
        worst = max(worst, float(np.max(np.abs(got - ref[name][1:]) / np.abs(ref[name][1:]))))
    consumed = 2.0 - out.state_series("NO3_14[mol/L]", 0)[1:]
    worst_consumed = float(np.max(np.abs(consumed - (2.0 - ref["NO3_14"][1:])) / (2.0 - ref["NO3_14"][1:])))
    a = worst < 1e-4 and worst_consumed < 1e-4 and t[-1] == 800 * 3600.0
    delta = _delta_at_end(out)
    b = bool(np.all(np.diff(delta) > 0))

    tdeck = golden("case3_temperature.deck")
    ens = run_ensemble(tdeck, str(tmp_path / "temp"))
    temps_c = [round(d.solver.temperature - 273.15, 2) for d in ens.decks]
    d800 = {tc: _delta_at_end(o)[-1] for tc, o in zip(temps_c, ens.outputs)}
    plateau = [d800[26.0], d800[28.0], d800[30.0]]
    level = float(np.mean(plateau))
    spread = max(_rel(x, y) for x in plateau for y in plateau)
    c = spread < 0.02 and d800[5.0] < 0.5 * level and d800[50.0] < 0.5 * level
    detail = (f"(a) {'pass' if a else 'fail'}: worst rel. deviation {worst:.2e} (consumed NO3 {worst_consumed:.2e}); "
              f"(b) {'pass' if b else 'fail'}: delta15N(800 h)={delta[-1]:.3e} permil; "
              f"(c) {'pass' if c else 'fail'}: plateau spread {spread:.2e}, "
              f"5C/plateau={d800[5.0] / level:.2e}, 50C/plateau={d800[50.0] / level:.2e}")
    report(7, "Case 3 isotope kinetics", a and b and c, detail)


# 8 ---------------------------------------------------------------------------------


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_08_sweep_harness(tmp_path):
    base = load_deck(deck_path("case1_synthetic.deck"))
    deck = dataclasses.replace(base, solver=dataclasses.replace(base.solver, t_end=60 * DAY))
    assert deck.sweep.n == 50 and deck.sweep.rel_std == 0.5
    same = generate_replicas(deck) == generate_replicas(deck)
    fwd = run_ensemble(deck, str(tmp_path / "fwd"))
    rev = run_ensemble(deck, str(tmp_path / "rev"), order=list(range(49, -1, -1)))
    files = ("ensemble.csv", "replicas.csv")
    identical = all(open(tmp_path / "fwd" / f).read() == open(tmp_path / "rev" / f).read() for f in files)

    # recompute the water-table statistics from the replica CSVs
    series = []
    for i in range(50):
        grid = _read_rows(tmp_path / "fwd" / f"replica_{i:03d}" / "grid.csv")
        z = {int(r["element"]): float(r["z[m]"]) for r in grid if r["atmosphere"] == "0"}
        by_t = {}
        for r in _read_rows(tmp_path / "fwd" / f"replica_{i:03d}" / "timeseries.csv"):
            e = int(r["element"])
            if e in z:
                by_t.setdefault(float(r["time[s]"]), []).append((z[e], float(r["h[m]"])))
        series.append([water_table(*zip(*by_t[t])) for t in sorted(by_t)])
    cols = list(zip(*series))
    mean = [statistics.fmean(c) for c in cols]
    std = [statistics.pstdev(c) for c in cols]
    rows = [r for r in _read_rows(tmp_path / "fwd" / "ensemble.csv") if r["quantity"] == "water_table"]
    dm = max(abs(float(r["mean"]) - m) for r, m in zip(rows, mean))
    ds = max(abs(float(r["std"]) - s) for r, s in zip(rows, std))
    ok = same and identical and len(rows) == len(mean) == 61 and dm < 1e-12 and ds < 1e-12
    spread = max(std)
    report(8, "sweep harness", ok,
           f"deterministic={same}, order-independent={identical}, |mean diff|={dm:.1e} m, "
           f"|std diff|={ds:.1e} m, max std={spread:.3f} m over {len(rows)} reports")


# 9 ---------------------------------------------------------------------------------


def _mutate(text, rng):
    lines = text.splitlines(keepends=True)
    for _ in range(rng.randint(1, 4)):
        op = rng.randrange(6)
        if not lines:
            lines = ["\n"]
        i = rng.randrange(len(lines))
        line = lines[i]
        if op == 0:
            del lines[i]
        elif op == 1:
            lines.insert(rng.randrange(len(lines) + 1), line)
        elif op == 2 and line.strip():
            tok = line.split()
            tok[rng.randrange(len(tok))] = rng.choice(["=", "[", "]", ":", "-1e400", "nan", "x", "", "[X]", "1/0"])
            lines[i] = " ".join(tok) + "\n"
        elif op == 3:
            pos = rng.randrange(len(line) + 1)
            lines[i] = line[:pos] + chr(rng.randrange(32, 0x3000)) + line[pos:]
        elif op == 4 and len(line) > 1:
            pos = rng.randrange(len(line) - 1)
            lines[i] = line[:pos] + line[pos + 1:]
        else:
            j = rng.randrange(len(lines))
            lines[i], lines[j] = lines[j], lines[i]
    return "".join(lines)


def test_09_parser_robustness():
    trips = 0
    for name in GOLDEN:
        d = golden(name)
        again = parse_deck(serialize_deck(d), base_dir=DECK_DIR)
        trips += again == d
    rng = random.Random(9)
    texts = [deck_text(n) for n in GOLDEN]
    crashes, rejected = [], 0
    for k in range(10_000):
        src = _mutate(texts[k % len(texts)], rng)
        try:
            deck, diags = check_deck(src, base_dir=DECK_DIR)
        except Exception as exc:  # anything escaping check_deck is a crash
            crashes.append(f"{type(exc).__name__}: {exc}")
            continue
        if deck is None:
            rejected += 1
            if not diags or any(dg.line < 1 for dg in diags):
                crashes.append("rejected without a located diagnostic")
    ok = trips == len(GOLDEN) and not crashes
    report(9, "parser robustness", ok,
           f"{trips}/{len(GOLDEN)} decks round-trip; 10000 mutations, {rejected} rejected with diagnostics, "
           f"{len(crashes)} crashes{' (' + crashes[0] + ')' if crashes else ''}")


# 10 --------------------------------------------------------------------------------


def test_10_ledger_soundness():
    worst = {}
    for name in GOLDEN:
        deck = golden(name)
        out = run_simulation(deck)
        worst[name] = out.worst_audit
    tracer_decks = [n for n in GOLDEN if any(s.is_tracer and s.kind in ("PRI", "BIO") for s in golden(n).species.entries)]
    ok = all(v <= 1e-6 for v in worst.values()) and all(worst[n] <= 1e-8 for n in tracer_decks)
    top = max(worst, key=worst.get)
    report(10, "ledger soundness", ok,
           f"{len(worst)} decks, worst closure {worst[top]:.2e} ({top}); tracer decks <= {max(worst[n] for n in tracer_decks):.2e}")
