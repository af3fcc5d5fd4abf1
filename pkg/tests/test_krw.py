import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrising.geometry import NormSpec
from lrising.krw import (KrwQuery, decay_ratio_profile, green_saw_exact, green_walk_neumann, krw_weights,
                         profile_csv, saw_sum_matrix, walk_sum_matrix)
from lrising.lattice import LatticeBox
from lrising.model import CouplingModel, Psi, coupling, model_m1


def path_matrix(a, b=0.0):
    W = np.array([[0, a, b], [a, 0, a], [b, a, 0]], float)
    return W


def test_saw_examples():
    a, b = 0.3, 0.05
    assert saw_sum_matrix(path_matrix(a), 0, 2, 5) == pytest.approx(a * a, rel=1e-15)
    assert saw_sum_matrix(path_matrix(a, b), 0, 2, 2) == pytest.approx(b + a * a, rel=1e-15)
    assert saw_sum_matrix(path_matrix(a), 1, 1, 4) == 1.0


def test_saw_paths_may_revisit_vertices():
    # triangle 0-1-2 plus pendant 2-3: 0 -> 2 -> 1 -> 0 ... edges distinct, vertices repeat
    W = np.zeros((3, 3))
    for i, j in ((0, 1), (1, 2), (0, 2)):
        W[i, j] = W[j, i] = 0.5
    # paths 0 -> 0: empty, and the two orientations of the triangle
    assert saw_sum_matrix(W, 0, 0, 3) == pytest.approx(1 + 2 * 0.125)


def test_neumann_examples():
    a = 0.4
    W = np.array([[0, a], [a, 0]])
    G, err, ok = walk_sum_matrix(W, 0)
    assert ok
    assert G[1] == pytest.approx(a / (1 - a * a), rel=1e-11)
    assert G[0] == pytest.approx(1 / (1 - a * a), rel=1e-11)
    q = KrwQuery(0.0, model_m1(), LatticeBox(1, 5))
    row, err = green_walk_neumann(q, [0])
    assert row[q.box.origin] == 1 and row.sum() == 1


def test_neumann_blow_up_is_reported():
    q = KrwQuery(5.0, model_m1(), LatticeBox(1, 10))
    val, err = green_walk_neumann(q, [0], [3])
    assert val == math.inf and err == math.inf
    assert q.spectral_bound() > 1


def test_query_validation():
    with pytest.raises(ValueError):
        KrwQuery(-0.1, model_m1(), LatticeBox(1, 3))
    with pytest.raises(ValueError):
        KrwQuery(0.1, model_m1(), LatticeBox(1, 3), mode="exact")
    with pytest.raises(ValueError):
        KrwQuery(0.1, model_m1(), LatticeBox(2, 3))
    q = KrwQuery(0.1, model_m1(), LatticeBox(1, 3), length_cap=0, mode="saw_exact")
    with pytest.raises(ValueError):
        green_saw_exact(q, [0], [2])
    with pytest.raises(ValueError):
        green_saw_exact(KrwQuery(0.1, model_m1(), LatticeBox(1, 12), length_cap=13, mode="saw_exact"), [0], [1])


def test_saw_tail_bounds_the_omitted_paths():
    q5 = KrwQuery(0.1, model_m1(), LatticeBox(1, 4), length_cap=4, mode="saw_exact")
    q8 = KrwQuery(0.1, model_m1(), LatticeBox(1, 4), length_cap=8, mode="saw_exact")
    v5, tail5 = green_saw_exact(q5, [0], [3])
    v8, _ = green_saw_exact(q8, [0], [3])
    assert v5 <= v8 <= v5 + tail5


def test_one_is_refused():
    q = KrwQuery(0.05, CouplingModel(1, NormSpec(), Psi("One")), LatticeBox(1, 20))
    with pytest.raises(ValueError, match="criterion"):
        decay_ratio_profile(q, [1.0], range(2, 10))


def test_m1_profile_bounded_both_modes():
    q = KrwQuery(0.05, model_m1(), LatticeBox(1, 40))
    prof = decay_ratio_profile(q, [1.0], range(2, 31))
    assert prof.bounded and prof.spectral_bound < 1
    saw = KrwQuery(0.05, model_m1(), LatticeBox(1, 9), length_cap=5, mode="saw_exact")
    walk = KrwQuery(0.05, model_m1(), LatticeBox(1, 9))
    ps = decay_ratio_profile(saw, [1.0], range(2, 10))
    pw = decay_ratio_profile(walk, [1.0], range(2, 10))
    assert ps.bounded and pw.bounded
    assert all(rs[1] <= rw[1] for rs, rw in zip(ps.rows, pw.rows))
    assert profile_csv(prof).splitlines()[0] == "n,G,J,ratio,mode,lambda"


def test_small_lambda_ratio_is_single_edge():
    q = KrwQuery(1e-6, model_m1(), LatticeBox(1, 12))
    prof = decay_ratio_profile(q, [1.0], range(2, 10))
    assert np.allclose([r[3] for r in prof.rows], 1e-6, rtol=1e-4)


@st.composite
def small_weights(draw):
    n = draw(st.integers(2, 6))
    vals = draw(st.lists(st.floats(0, 0.25), min_size=n * n, max_size=n * n))
    W = np.array(vals).reshape(n, n)
    W = np.triu(W, 1)
    return W + W.T


@settings(max_examples=80, deadline=None)
@given(W=small_weights(), cap=st.integers(1, 7))
def test_saw_below_walk(W, cap):
    G, _, ok = walk_sum_matrix(W, 0)
    assume_ok = ok and np.all(np.isfinite(G))
    if not assume_ok:
        return
    for y in range(len(W)):
        assert saw_sum_matrix(W, 0, y, cap) <= G[y] * (1 + 1e-9) + 1e-15
        assert G[y] >= W[0, y]


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0.001, 0.2), factor=st.floats(1.0, 2.0), N=st.integers(3, 12))
def test_neumann_monotone_in_lambda_and_box(lam, factor, N):
    m = model_m1()
    small, _ = green_walk_neumann(KrwQuery(lam, m, LatticeBox(1, N)), [0])
    big_lam, _ = green_walk_neumann(KrwQuery(lam * factor, m, LatticeBox(1, N)), [0])
    big_box, _ = green_walk_neumann(KrwQuery(lam, m, LatticeBox(1, N + 2)), [0])
    assert np.all(big_lam >= small * (1 - 1e-10))
    assert np.all(big_box[2:-2] >= small * (1 - 1e-10))
    assert np.all(small >= 0)
    W = krw_weights(m, LatticeBox(1, N), lam)
    assert np.all(small[np.arange(len(small)) != N] >= W[N][np.arange(len(small)) != N] * (1 - 1e-12))


def test_two_dimensional_profile():
    m = CouplingModel(2, NormSpec.l1(), Psi("Polynomial", 5.0))
    for lam in (0.02, 0.05, 0.1):
        prof = decay_ratio_profile(KrwQuery(lam, m, LatticeBox(2, 14)), [1.0, 0.0], range(2, 13))
        assert prof.bounded
    assert coupling(m, [2, 0]) == pytest.approx(2 ** -5 * math.exp(-2))
