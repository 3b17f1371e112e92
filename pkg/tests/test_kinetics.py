import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from retort.deck.model import ReactionSpec, Species
from retort.kinetics import (
    ElementEnv, ReactionNetwork, integrate_dp54, microbial_gate, reaction_velocity,
    saturation_response, space_response, step_kinetics, temperature_response,
)
from retort.orchestrator import run_simulation

from conftest import golden, mini
from oracles import network_deck, random_network, reference_kinetics

ACTOR = Species("B", "BIO", "B", unit="mg/L", molar_mass=0.113, f_l=0.8, t_lb=288.15, t_ub=313.15,
                sl_lb=0.3, sl_ub=0.8)


def _env(n=1, s_l=1.0, s_b=0.0, temperature=293.15):
    return ElementEnv(np.full(n, s_l), np.full(n, s_b), temperature, np.full(n, 1e-3), np.full(n, 1e-3),
                      np.zeros(n), np.zeros(n))


def test_half_saturation():
    rx = ReactionSpec("r", (("A", -1.0),), 2e-3, mmm=(("A", 0.5),))
    assert reaction_velocity(rx, {"A": 0.5}) == 1e-3


def test_absent_inhibitor_does_not_inhibit():
    rx = ReactionSpec("r", (("A", -1.0),), 2e-3, norder=(("A", 1.0),), inhibition=(("I", 0.1),))
    assert reaction_velocity(rx, {"A": 1.0, "I": 0.0}) == 2e-3
    assert reaction_velocity(rx, {"A": 1.0, "I": 0.0}, inhibition="typeset") == 0.0


def test_denitrification_velocity_by_hand():
    deck = golden("case3_gebik.deck")
    rx = next(r for r in deck.reactions if r.name == "den_44")
    n14, n15, b = 2.0, 0.046, 1.073
    two_zk1, z = 5.42e-4, 1e-10
    k1, k2 = 2.723, 2.309
    term = two_zk1 * z * b * n14 / (n14 + k1 * (1 + n15 / k2))
    stoich = dict(rx.stoichiometry)["NO3_14"]
    got = -stoich * reaction_velocity(rx, {"NO3_14": n14, "NO3_15": n15, "B": b})
    assert got == pytest.approx(term, rel=1e-12)


def test_temperature_response_at_lower_bound():
    assert float(temperature_response(288.15, 288.15, 313.15)) == pytest.approx(0.5, rel=1e-9)


def test_saturation_response_before_normalisation():
    star = math.sqrt(0.3 * 0.8)
    peak = star / (0.3 + star) * 0.8 / (0.8 + star)
    raw = float(saturation_response(0.3, 0.3, 0.8)) * peak
    assert raw == pytest.approx(0.5 * 0.8 / 1.1, rel=1e-14)
    assert raw == pytest.approx(0.3636, abs=1e-4)
    assert float(saturation_response(star, 0.3, 0.8)) == pytest.approx(1.0, rel=1e-14)


def test_no_biomass_means_no_space_limit():
    assert float(space_response(0.6, 0.4, 0.0, 0.8)) == 1.0
    assert float(space_response(0.0, 1.0, 0.0, 0.8)) == 1.0  # 0/0 counts as no constraint


@given(st.floats(0, 1), st.floats(0, 1), st.floats(250, 350))
def test_gate_stays_in_unit_interval(s_l, s_b, t):
    s_b = min(s_b, 1 - s_l)
    f = microbial_gate(s_l, 1 - s_l - s_b, s_b, t, ACTOR)
    assert 0.0 <= f <= 1.0


def test_gate_is_continuous_on_dense_grids():
    s = np.linspace(0.01, 0.99, 4001)
    f = microbial_gate(s, 1 - s, np.zeros_like(s), 300.0, ACTOR)
    assert np.max(np.abs(np.diff(f))) < 2e-3
    t = np.linspace(260, 340, 4001)
    f = np.array([microbial_gate(0.5, 0.5, 0.0, ti, ACTOR) for ti in t])
    assert np.max(np.abs(np.diff(f))) < 1e-2


conc = st.floats(0, 10)
ks = st.floats(1e-3, 10)


@given(conc, conc, conc, conc, conc, ks, ks, ks)
def test_velocity_monotonicity(a, a2, c, c2, i, km, kc, ki):
    rx = ReactionSpec("r", (("A", -1.0),), 1.0, mmm=(("A", km),), competition=(("C", kc),),
                      inhibition=(("I", ki),))
    lo, hi = sorted((a, a2))
    v = lambda **kw: reaction_velocity(rx, {"A": 1.0, "C": 1.0, "I": 1.0, **kw})
    assert v(A=lo) <= v(A=hi) * (1 + 1e-12)
    lo, hi = sorted((c, c2))
    assert v(C=hi) <= v(C=lo) * (1 + 1e-12)
    assert v(I=max(i, lo)) <= v(I=min(i, lo)) * (1 + 1e-12)


def _first_order():
    deck = mini("""
[SPECIES]
A kind=PRI unit=mol/L molar_mass=0.03
B kind=PRI unit=mol/L molar_mass=0.03

[REACTION decay]
stoich A:-1 B:1
rate 1e-3
norder A:1
""")
    return ReactionNetwork(deck.reactions, deck.species)


def test_no_reactions_is_identity():
    deck = mini("[SPECIES]\nA kind=PRI unit=mol/L molar_mass=0.03\n")
    net = ReactionNetwork(deck.reactions, deck.species)
    c = np.array([[0.7]])
    assert np.array_equal(step_kinetics(c, net, _env(), 100.0).conc, c)


def test_first_order_decay_matches_exponential():
    res = step_kinetics(np.array([[2.0, 0.0]]), _first_order(), _env(), 5000.0)
    assert res.conc[0, 0] == pytest.approx(2.0 * math.exp(-5.0), rel=1e-6)
    assert res.conc.sum() == pytest.approx(2.0, rel=1e-13)


def test_eps_reaches_analytic_equilibrium():
    deck = mini("""
[SPECIES]
B kind=BIO unit=mg/L molar_mass=0.113
EPS kind=BIO unit=mg/L molar_mass=0.162

[REACTION production]
stoich EPS:1
rate 1e-8
norder B:1

[REACTION lysis]
stoich EPS:-1
rate 1e-6
norder EPS:1
""")
    net = ReactionNetwork(deck.reactions, deck.species)
    res = step_kinetics(np.array([[100.0, 0.0]]), net, _env(), 2e7)
    assert res.conc[0, 1] == pytest.approx(1.0, rel=1e-8)
    assert res.conc[0, 0] == 100.0


def test_dp54_on_logistic_growth():
    f = lambda y: y * (1.0 - y)
    y, _ = integrate_dp54(f, np.array([0.01]), 10.0, rtol=1e-10, atol=1e-14)
    assert y[0] == pytest.approx(1.0 / (1.0 + 99.0 * math.exp(-10.0)), rel=1e-8)


def test_negative_drift_is_rejected_not_clipped():
    # zeroth-order consumption would overshoot; the integrator must stop at zero
    deck = mini("""
[SPECIES]
A kind=PRI unit=mol/L molar_mass=0.03

[REACTION eat]
stoich A:-1
rate 1e-3
mmm A:1e-9
""")
    net = ReactionNetwork(deck.reactions, deck.species)
    res = step_kinetics(np.array([[0.5]]), net, _env(), 1000.0)
    assert res.conc[0, 0] >= 0.0
    assert res.clipped[0, 0] <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_random_network_matches_reference(seed):
    names, rxs, c0 = random_network(np.random.default_rng(seed))
    out = run_simulation(network_deck(names, rxs, c0))
    ref = reference_kinetics(names, rxs, c0, 1000.0)
    for n in names:
        got = out.state_series(f"{n}[mol/L]", 0)[-1]
        assert got == pytest.approx(ref[n], rel=1e-6, abs=1e-12)


def test_balanced_reaction_conserves_mass():
    deck = mini("""
[SPECIES]
A kind=PRI unit=mol/L molar_mass=0.032
B kind=PRI unit=mol/L molar_mass=0.016

[REACTION split]
stoich A:-1 B:2
rate 5e-4
norder A:1
""")
    net = ReactionNetwork(deck.reactions, deck.species)
    res = step_kinetics(np.array([[1.0, 0.2]]), net, _env(), 3000.0)
    m = np.array([0.032, 0.016])
    assert res.conc[0] @ m == pytest.approx(np.array([1.0, 0.2]) @ m, rel=1e-13)
