import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrising.current_mc import (ParityState, Worm, WormKernel, augment_positive_edges, dump_trace,
                                estimate_disconnection, estimate_disconnection_graph, extract_path, load_trace,
                                promotion_probability, sample_current_events, sample_traces, tilted_profile_graph,
                                trace_points, worm_sweep)
from lrising.fk_mc import sample_graph_events
from lrising.geometry import NormSpec
from lrising.lattice import LatticeBox
from lrising.model import CouplingModel, Psi, model_m1
from lrising.oracle import (GHOST, Connected, EdgeOpen, FiniteGraph, box_graph, chain_graph, current_event_exact,
                            spin_correlation_row, truncated_two_point_exact)
from lrising.rng import make_rng

Z = 3.0


def within(est, exact, z=Z):
    return abs(est.mean - exact) <= z * est.stderr + 1e-12


def test_infinite_temperature_stays_empty():
    g = chain_graph(model_m1(), 5)
    worm = Worm(WormKernel(g, 0.0), [], make_rng(1))
    for _ in range(5):
        assert not worm_sweep(worm).odd.any()


def test_single_edge_with_sources_is_always_odd():
    g = FiniteGraph.from_edges(2, [(0, 1, 0.4)])
    worm = Worm(WormKernel(g, 0.8), [0, 1], make_rng(2))
    for _ in range(50):
        st = worm_sweep(worm)
        assert st.odd[0, 1] == 1


def test_parity_constraint_after_every_sweep():
    g = box_graph(model_m1(), LatticeBox(1, 4), "plus")
    worm = Worm(WormKernel(g, 0.9), [2, 6], make_rng(3))
    for _ in range(100):
        st = worm_sweep(worm)
        assert st.boundary() == {2, 6}
        assert st.check_parity()


def test_infeasible_sources():
    g = chain_graph(model_m1(), 4)
    with pytest.raises(ValueError):
        Worm(WormKernel(g, 0.5), [0], make_rng(1))
    two = FiniteGraph.from_edges(4, [(0, 1, 0.5), (2, 3, 0.5)])
    with pytest.raises(ValueError):
        Worm(WormKernel(two, 0.5), [0, 2], make_rng(1))


def test_promotion_probability():
    assert promotion_probability(1.0, 1.0) == pytest.approx(0.351945726336114600, rel=1e-14)
    g = chain_graph(model_m1(), 4)
    st = ParityState(np.zeros((4, 4), np.uint8), (), 0, 0)
    cfg = augment_positive_edges(st, g, 0.0, make_rng(1))
    assert not cfg.positive.any()


def test_chain_with_ghost_class_frequencies():
    g = chain_graph(model_m1(), 5, bc="plus", nearest_neighbour=True)
    beta = 1.1
    events = [EdgeOpen(e) for e in range(g.n_edges)] + [Connected(0, GHOST), Connected(1, 4)]
    exact = current_event_exact(g, beta, [0, 3], events)
    ests = sample_current_events(g, beta, [0, 3], events, 20_000, seed=4, batch_count=32)
    z = [abs(e.mean - v) / e.stderr if e.stderr > 0 else 0.0 for e, v in zip(ests, exact)]
    assert sum(zz > Z for zz in z) <= 1  # 13 comparisons at nominal 3 sigma
    assert max(z) < 4.5


def test_double_current_events():
    g = chain_graph(model_m1(), 5, bc="plus", nearest_neighbour=True)
    events = [Connected(0, GHOST), Connected(2, GHOST), EdgeOpen(3)]
    exact = current_event_exact(g, 0.9, [0, 4], events, double=True)
    ests = sample_current_events(g, 0.9, [0, 4], events, 20_000, seed=5, double=True, batch_count=32)
    assert all(within(e, v) for e, v in zip(ests, exact))


def test_disconnection_without_ghost_coupling_is_sure():
    g = FiniteGraph.from_edges(2, [(0, 1, 1.0), (0, GHOST, 0.0), (1, GHOST, 0.0)], ghost=True)
    e = estimate_disconnection_graph(g, 0.5, 0, 1, n_samples=400)
    assert e.mean == 1


def test_disconnection_against_oracle():
    g = chain_graph(model_m1(), 5, bc="plus", nearest_neighbour=True)
    for double in (False, True):
        exact = current_event_exact(g, 1.0, [0, 4], ~Connected(0, GHOST), double=double)
        e = estimate_disconnection_graph(g, 1.0, 0, 4, double, 20_000, seed=6, batch_count=32)
        assert within(e, exact)
    with pytest.raises(ValueError):
        estimate_disconnection_graph(chain_graph(model_m1(), 3), 1.0, 0, 2)


def test_box_disconnection_runs():
    e = estimate_disconnection(model_m1(), 0.5, LatticeBox(1, 3), [2], n_samples=400, seed=1)
    assert 0 <= e.mean <= 1


def test_truncated_from_two_estimators():
    g = chain_graph(model_m1(), 8, bc="plus", nearest_neighbour=True)
    beta, x = 0.8, 3
    (two,) = sample_graph_events(g, beta, [Connected(0, x)], 40_000, 1000, seed=7, batch_count=32)
    disc = estimate_disconnection_graph(g, beta, 0, x, True, 40_000, seed=7, batch_count=32)
    mean = two.mean * disc.mean
    se = math.hypot(two.stderr * disc.mean, disc.stderr * two.mean)
    assert abs(mean - truncated_two_point_exact(g, beta, x)) <= Z * se


def test_tilted_worm_against_spin_enumeration():
    g = chain_graph(model_m1(), 6)
    beta = 0.9
    tilt = np.exp(np.arange(6, dtype=float))
    corr = spin_correlation_row(g, beta, 0)
    prof = tilted_profile_graph(g, beta, 0, tilt, 400_000, seed=8, flatten_rounds=4)
    assert prof.value[0] == pytest.approx(1.0)
    z = np.abs(prof.value[1:] - tilt[1:] * corr[1:]) / prof.stderr[1:]
    assert np.all(z < 3.5)
    assert abs(prof.laplace_sum - float(tilt @ corr)) <= Z * prof.laplace_stderr


# --- path extraction ---------------------------------------------------------


def test_single_long_edge():
    p = extract_path([((0, 0), (4, 0))], (4, 0))
    assert p.path == ((0, 0), (4, 0))
    assert p.segment_lengths == (0, 0)
    assert p.jumps == 1


def test_basic_path_is_unchanged():
    trace = [((k, 0), (k + 1, 0)) for k in range(5)]
    p = extract_path(trace, (5, 0))
    assert p.path == tuple((k, 0) for k in range(6))
    assert p.segment_lengths == (5,)
    assert p.jumps == 0


def test_jump_between_two_classes():
    # 0 -> (1,0) basic, jump (1,0) -> (3,1), then basic (3,1) -> (3,0) -> (4,0)
    trace = [((0, 0), (1, 0)), ((1, 0), (3, 1)), ((3, 1), (3, 0)), ((3, 0), (4, 0)), ((0, 0), (0, 1))]
    p = extract_path(trace, (4, 0))
    assert p.path == ((0, 0), (1, 0), (3, 1), (3, 0), (4, 0))
    assert p.breakpoints == (0, 1, 4)
    assert p.segment_lengths == (1, 2)
    assert p.length == sum(p.segment_lengths) + p.jumps


def test_disconnected_trace_rejected():
    with pytest.raises(ValueError):
        extract_path([((0, 0), (1, 0))], (3, 0))


def test_trace_dump_roundtrip():
    trace = [((0, 0), (1, 0)), ((1, 0), (3, -1))]
    assert load_trace(dump_trace(trace)) == trace


def _is_edge_self_avoiding(path):
    edges = [frozenset(e) for e in zip(path[:-1], path[1:])]
    return len(set(edges)) == len(edges)


@pytest.fixture(scope="module")
def sampled_traces():
    m = CouplingModel(2, NormSpec.l1(), Psi("Polynomial", 5.0))
    box = LatticeBox(2, 4)
    g = box_graph(m, box, "plus")
    x = (3, 0)
    masks = list(sample_traces(g, 2.0, [box.origin, box.index(x)], 150, make_rng(9)))
    return [trace_points(g, mk) for mk in masks], x


def test_extraction_invariants_on_sampled_traces(sampled_traces):
    traces, x = sampled_traces
    done = 0
    for tr in traces:
        try:
            p = extract_path(tr, x)
        except ValueError:
            continue
        done += 1
        assert p.path[0] == (0, 0) and p.path[-1] == x
        assert _is_edge_self_avoiding(p.path)
        assert p.length == sum(p.segment_lengths) + p.jumps
        open_edges = {frozenset(e) for e in tr}
        assert all(frozenset(e) in open_edges for e in zip(p.path[:-1], p.path[1:]))
        again = extract_path(list(reversed(tr)), x)
        assert again == p
    assert done > 100


@settings(max_examples=60, deadline=None)
@given(steps=st.lists(st.sampled_from([(1, 0), (-1, 0), (0, 1), (0, -1), (2, 1), (3, 0)]), min_size=1, max_size=12))
def test_extraction_on_walk_traces(steps):
    pts = [(0, 0)]
    for s in steps:
        pts.append((pts[-1][0] + s[0], pts[-1][1] + s[1]))
    trace = {frozenset(e) for e in zip(pts[:-1], pts[1:]) if e[0] != e[1]}
    trace = [tuple(sorted(e)) for e in trace]
    if pts[-1] == (0, 0):
        return
    p = extract_path(trace, pts[-1])
    assert p.path[0] == (0, 0) and p.path[-1] == pts[-1]
    assert _is_edge_self_avoiding(p.path)
