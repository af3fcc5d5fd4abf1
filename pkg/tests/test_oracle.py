
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrising.model import model_m1
from lrising.oracle import (GHOST, Always, Connected, FiniteGraph, GuardError, chain_graph, current_edge_conditionals,
                            current_event_exact, current_positive_law, fk_connectivity_exact,
                            fk_edge_conditional_range, ising_two_point_exact, lower_bound_truncated_constant,
                            parity_two_point_exact, parse_edge_list, simon_lieb_residual, spin_correlation_row,
                            spin_moments_exact, truncated_two_point_exact)
from lrising.rng import make_rng
from lrising.suite import random_graph

# high-temperature expansion of the triangle: (tau + tau^2) / (1 + tau^3), tau = tanh(0.3), mpmath
TRIANGLE_03 = 0.367100316513125526160491291045


def test_single_edge_closed_form():
    g = FiniteGraph.from_edges(2, [(0, 1, 1.0)])
    assert ising_two_point_exact(g, 0.5, [0, 1]) == pytest.approx(0.462117157260009758, abs=1e-15)


def test_infinite_temperature():
    g = chain_graph(model_m1(), 5)
    assert ising_two_point_exact(g, 0.0, [0, 3]) == 0
    assert truncated_two_point_exact(chain_graph(model_m1(), 5, bc="plus"), 0.0, 3) == pytest.approx(0, abs=1e-15)


def test_triangle_against_expansion():
    g = FiniteGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
    assert ising_two_point_exact(g, 0.3, [0, 1]) == pytest.approx(TRIANGLE_03, abs=1e-14)
    assert parity_two_point_exact(g, 0.3, [0, 1]) == pytest.approx(TRIANGLE_03, abs=1e-14)


def test_four_cycle_edwards_sokal():
    g = FiniteGraph.from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)])
    assert fk_connectivity_exact(g, 0.5, Connected(0, 2)) == pytest.approx(ising_two_point_exact(g, 0.5, [0, 2]),
                                                                             abs=1e-14)
    assert fk_connectivity_exact(g, 0.5, Always()) == pytest.approx(1.0, abs=1e-15)


def test_truncated_validation():
    g = FiniteGraph.from_edges(1, [(0, GHOST, 0.5)], ghost=True)
    with pytest.raises(ValueError):
        truncated_two_point_exact(g, 1.0, GHOST)
    with pytest.raises(ValueError):
        truncated_two_point_exact(g, 1.0, 1)
    with pytest.raises(ValueError):
        truncated_two_point_exact(chain_graph(model_m1(), 3), 1.0, 1)


def test_m1_chain_truncated_identity():
    g = chain_graph(model_m1(), 8, bc="plus", nearest_neighbour=True)
    direct = truncated_two_point_exact(g, 0.4, 5)
    disc = current_event_exact(g, 0.4, [0, 5], ~Connected(0, GHOST), double=True)
    assert direct == pytest.approx(ising_two_point_exact(g, 0.4, [0, 5]) * disc, abs=1e-10)


def test_chain_with_ghost_identity_three_sites():
    g = chain_graph(model_m1(), 3, bc="plus")
    for beta in (0.3, 1.0, 2.0):
        disc = current_event_exact(g, beta, [0, 2], ~Connected(0, GHOST), double=True)
        assert truncated_two_point_exact(g, beta, 2) == pytest.approx(ising_two_point_exact(g, beta, [0, 2]) * disc,
                                                                    abs=1e-10)


def test_current_examples():
    g = FiniteGraph.from_edges(2, [(0, 1, 0.7)])
    assert current_event_exact(g, 1.3, [0, 1], Connected(0, 1)) == pytest.approx(1.0)
    g = chain_graph(model_m1(), 4)
    law = current_positive_law(g, 0.0, [])
    assert law[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        current_positive_law(g, 1.0, [0])


@pytest.mark.parametrize("double", [False, True])
def test_current_zeta_matches_class_enumeration(double):
    rng = make_rng(5, 0)
    for _ in range(20):
        g = random_graph(rng, 8)
        A = [int(g.u[0]), int(g.v[0])]
        a = current_positive_law(g, 0.9, A, double, "zeta")
        b = current_positive_law(g, 0.9, A, double, "brute")
        assert np.max(np.abs(a - b)) < 1e-12


def test_simon_lieb_examples():
    g = chain_graph(model_m1(), 6)
    # sites 0..5 along the chain: S = {1, 2, 3} around u = 2, v = 5 plays the role of x = 4 from 0
    assert simon_lieb_residual(g, 0.3, [1, 2, 3], 2, 5) >= 0
    assert simon_lieb_residual(g, 0.0, [1, 2, 3], 2, 5) >= 0
    with pytest.raises(ValueError):
        simon_lieb_residual(g, 0.3, range(6), 0, 5)
    with pytest.raises(ValueError):
        simon_lieb_residual(g, 0.3, [1], 0, 5)


def test_guards():
    big = FiniteGraph.from_edges(8, [(a, b, 0.1) for a in range(8) for b in range(a + 1, 8)])
    with pytest.raises(GuardError):
        current_positive_law(big, 0.5, [])
    with pytest.raises(GuardError):
        fk_connectivity_exact(FiniteGraph.from_edges(10, [(a, b, 0.1) for a in range(10) for b in range(a + 1, 10)]),
                              0.5, Always())


def test_edge_list_roundtrip():
    g = chain_graph(model_m1(), 4, bc="plus")
    h = parse_edge_list(g.edge_list_text(), g.n_sites)
    assert h.ghost and h.n_edges == g.n_edges
    assert np.array_equal(h.u, g.u) and np.array_equal(h.v, g.v) and np.array_equal(h.J, g.J)


def test_spin_correlation_row_matches_moments():
    g = chain_graph(model_m1(), 7, bc="plus")
    row = spin_correlation_row(g, 0.8, 2)
    ref = spin_moments_exact(g, 0.8, [[2, x] for x in range(7)])
    assert np.allclose(row[:7], ref, atol=1e-14)


graphs = st.integers(0, 2 ** 31).map(lambda k: (random_graph(make_rng(k, 0), 10), k))


@settings(max_examples=60, deadline=None)
@given(gk=graphs, beta=st.floats(0, 2))
def test_three_representations_agree(gk, beta):
    g, _ = gk
    spin = ising_two_point_exact(g, beta, [0, 1])
    assert parity_two_point_exact(g, beta, [0, 1]) == pytest.approx(spin, abs=1e-10)
    assert fk_connectivity_exact(g, beta, Connected(0, 1)) == pytest.approx(spin, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(gk=graphs, beta=st.floats(0, 2))
def test_griffiths_positivity(gk, beta):
    g, _ = gk
    if not g.ghost or g.n_sites < 2:
        return
    m01, m0, m1 = spin_moments_exact(g, beta, [[0, 1], [0], [1]])
    assert m01 - m0 * m1 >= -1e-12


@settings(max_examples=30, deadline=None)
@given(gk=graphs, beta=st.floats(0.01, 2))
def test_fk_finite_energy(gk, beta):
    g, _ = gk
    rng_ = fk_edge_conditional_range(g, beta)
    lo = np.tanh(beta * g.J)
    hi = -np.expm1(-2 * beta * g.J)
    assert np.all(rng_[:, 0] >= lo - 1e-12)
    assert np.all(rng_[:, 1] <= hi + 1e-12)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(0, 2 ** 31), beta=st.floats(0.01, 2))
def test_current_partial_finite_energy(k, beta):
    g = random_graph(make_rng(k, 0), 8)
    cond = current_edge_conditionals(g, beta, [0, 1])
    bJ = beta * g.J
    assert np.all(cond[:, 0] >= (np.cosh(bJ) - 1) / np.cosh(bJ) - 1e-12)
    assert np.all(cond[:, 1] <= 2 * np.exp(-bJ) + 1e-12)


@pytest.mark.parametrize("length", [2, 4, 6, 8])
def test_truncated_lower_bound(length):
    m = model_m1()
    g = chain_graph(m, length, bc="plus", nearest_neighbour=False)
    M = g.coupling_matrix()
    c = lower_bound_truncated_constant(1.0, M[:-1, :-1].max(), M.sum(axis=1).max())
    for x in range(1, length):
        assert truncated_two_point_exact(g, 1.0, x) >= c * M[0, x] - 1e-15
