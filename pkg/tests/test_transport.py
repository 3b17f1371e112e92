import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from retort.errors import CFLUnderflow
from retort.transport import (
    ChemotaxisSpec, TransportGeometry, chemotactic_drift, step_bio_transport, step_solute_transport,
)


def _chain(n, dz=0.1):
    return TransportGeometry.chain(np.ones(n), -dz * np.arange(n))


def _reference_advection(c0, q, V, dt, h=1e-3):
    """Classical RK4 on the upwind semi-discretisation with a tiny step."""
    def f(c):
        flux = q * c  # out of every cell, into the next
        d = -flux
        d[1:] += flux[:-1]
        return d / V
    c = c0.copy()
    for _ in range(int(round(dt / h))):
        k1 = f(c)
        k2 = f(c + 0.5 * h * k1)
        k3 = f(c + 0.5 * h * k2)
        k4 = f(c + h * k3)
        c = c + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return c


def test_still_uniform_solution_is_unchanged():
    g = _chain(5)
    c = np.full((5, 2), 3.0)
    V = np.full(5, 0.04)
    r = step_solute_transport(c, g, V, V, np.full(5, 0.4), np.zeros(4), np.zeros(5), 100.0, [1e-9, 0.0])
    np.testing.assert_array_equal(r.conc, c)


def test_pulse_advection_matches_fine_reference():
    n, V, q, dt = 10, 0.01, 1e-4, 300.0  # 3 cells of travel
    g = _chain(n)
    c0 = np.zeros(n)
    c0[2] = 1.0
    q_out = np.zeros(n)
    q_out[-1] = q
    r = step_solute_transport(c0[:, None], g, np.full(n, V), np.full(n, V), np.full(n, 0.4),
                              np.full(n - 1, q), q_out, dt, [0.0])
    ref = _reference_advection(c0, q, V, dt)
    # SSP-RK3 at Courant 0.9 against the time-converged semi-discrete solution
    np.testing.assert_allclose(r.conc[:, 0], ref, atol=1e-2)
    x = np.arange(n) * 0.1
    com = np.sum(x * r.conc[:, 0]) / np.sum(r.conc[:, 0])
    com_ref = np.sum(x * ref) / np.sum(ref)
    assert abs(com - com_ref) < 0.01
    assert abs(com - (0.2 + q * dt / V * 0.1)) <= 0.1


def test_two_cell_diffusion_equalises_monotonically():
    g = _chain(2)
    V = np.full(2, 0.04)
    c = np.array([[1.0], [0.0]])
    gaps = []
    for _ in range(20):
        c = step_solute_transport(c, g, V, V, np.full(2, 0.4), [0.0], np.zeros(2), 2e5, [1e-9]).conc
        assert c[:, 0].sum() == pytest.approx(1.0, rel=1e-14)
        gaps.append(c[0, 0] - c[1, 0])
    assert all(0 <= b < a for a, b in zip(gaps, gaps[1:]))


@given(arrays(float, (6, 2), elements=st.floats(0, 10)),
       arrays(float, 5, elements=st.floats(-1e-5, 1e-5)),
       st.floats(0, 1e-8), st.floats(1.0, 1e4))
def test_closed_domain_conserves_mass(c, q, d, dt):
    g = _chain(6)
    V = np.full(6, 0.02)
    r = step_solute_transport(c, g, V, V, np.full(6, 0.4), q, np.zeros(6), dt, [d, 0.0])
    np.testing.assert_allclose(r.conc.sum(axis=0), c.sum(axis=0), rtol=1e-12, atol=1e-12)
    assert np.all(r.conc >= -1e-12)


@given(arrays(float, 8, elements=st.floats(0, 5)), st.floats(1e-7, 1e-4), st.floats(1.0, 1e4))
def test_upwind_advection_creates_no_new_extrema(c, q, dt):
    n = 8
    g = _chain(n)
    V = np.full(n, 0.02)
    q_out = np.zeros(n)
    q_out[-1] = q
    r = step_solute_transport(c[:, None], g, V, V, np.full(n, 0.4), np.full(n - 1, q), q_out, dt, [0.0])
    assert r.conc.max() <= c.max() * (1 + 1e-12) + 1e-300
    assert r.conc.min() >= -1e-12


def test_outflow_is_accounted():
    n = 4
    g = _chain(n)
    V = np.full(n, 0.02)
    c = np.ones((n, 1))
    q_out = np.zeros(n)
    q_out[-1] = 1e-6
    r = step_solute_transport(c, g, V, V, np.full(n, 0.4), np.full(n - 1, 1e-6), q_out, 1000.0, [0.0])
    stored = (r.conc[:, 0] * V).sum() * 1000
    assert stored + r.outflow[0] == pytest.approx(n * 0.02 * 1000, rel=1e-13)


def test_substep_cap_raises():
    g = _chain(3)
    V = np.full(3, 1e-6)
    with pytest.raises(CFLUnderflow):
        step_solute_transport(np.ones((3, 1)), g, V, V, np.full(3, 0.4), [1.0, 1.0], np.zeros(3), 1e3, [0.0],
                              max_substeps=10)


# -- BIO ---------------------------------------------------------------------------


def test_immobile_biomass_stays_put():
    g = _chain(4)
    V = np.full(4, 0.02)
    b = np.array([[0.0], [100.0], [5.0], [0.0]])
    r = step_bio_transport(b, g, V, V, np.full(4, 0.3), np.full(3, 1e-6), np.zeros(4), 3600.0, [0.0], [0.0])
    np.testing.assert_array_equal(r.conc, b)


def test_drift_is_up_the_attractant_gradient():
    g = _chain(3)
    xl = np.array([[0.0], [1.0], [2.0]])
    v = chemotactic_drift(xl, ChemotaxisSpec(attractants=((0, 1e-9),)), g)
    assert np.all(v > 0)
    v = chemotactic_drift(xl, ChemotaxisSpec(repellents=((0, 1e-9),)), g)
    assert np.all(v < 0)


def test_uniform_attractant_gives_no_drift():
    g = _chain(3)
    xl = np.full((3, 1), 0.7)
    assert np.all(chemotactic_drift(xl, ChemotaxisSpec(attractants=((0, 1e-9),)), g) == 0.0)


def test_equal_attractant_and_repellent_cancel():
    g = _chain(4)
    xl = np.array([[0.1, 0.1], [0.4, 0.4], [0.2, 0.2], [0.9, 0.9]])
    spec = ChemotaxisSpec(attractants=((0, 2e-9),), repellents=((1, 2e-9),))
    assert np.all(np.abs(chemotactic_drift(xl, spec, g)) == 0.0)


def test_chemotaxis_gathers_biomass_at_the_attractant():
    g = _chain(3)
    V = np.full(3, 0.02)
    b = np.ones((3, 1))
    xl = np.array([[0.0], [0.0], [1.0]])
    r = step_bio_transport(b, g, V, V, np.full(3, 0.4), np.zeros(2), np.zeros(3), 1e3, [0.0], [0.0],
                           chemo=[ChemotaxisSpec(attractants=((0, 1e-8),))], xl=xl)
    assert r.conc[2, 0] > 1.0 and r.conc.sum() == pytest.approx(3.0, rel=1e-14)
    assert np.all(r.conc >= 0)
