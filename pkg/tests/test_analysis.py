import math

import numpy as np
import pytest

from lrising.analysis import (CriterionRefusal, LaplaceRow, McBudget, beta_sat_scan, certify, divergence_slope,
                              free_tilted_profile, greedy_scales, laplace_partial_sums, local_saturation_check,
                              lower_bound_constant, nearby_directions, nu_fit, oz_window_check, phi_value,
                              two_point_table)
from lrising.geometry import NormSpec
from lrising.lattice import LatticeBox
from lrising.model import CouplingModel, Psi, coupling, model_m1, tilted_coupling_sum
from lrising.oracle import Connected, box_graph, fk_connectivity_exact

ONE = CouplingModel(1, NormSpec(), Psi("One"))


def test_phi_single_point_is_beta_times_tilted_sum():
    jj = tilted_coupling_sum(model_m1(), [1.0])
    pv = phi_value(model_m1(), 0.37, 0, [1.0])
    assert pv.value == pytest.approx(0.37 * jj.value, rel=1e-14)
    assert pv.ci[1] >= pv.value


def test_phi_vanishes_at_infinite_temperature():
    assert phi_value(model_m1(), 0.0, 3, [1.0]).value == 0


def test_phi_on_lambda3_by_fk_enumeration():
    m, beta, r = model_m1(), 0.1, 3
    box = LatticeBox(1, r)
    g = box_graph(m, box)
    probs = fk_connectivity_exact(g, beta, [Connected(box.origin, i) for i in range(box.volume)])
    ys = np.concatenate([np.arange(-200_000, -r), np.arange(r + 1, 200_001)])
    expected = 0.0
    for x, p in zip(range(-r, r + 1), probs):
        dist = ys - x
        # e^{t.(y-x)} J_{y-x} = |y-x|^-3 e^{(y-x) - |y-x|}
        expected += math.exp(x) * p * math.fsum(np.abs(dist) ** -3.0 * np.exp(dist - np.abs(dist)))
    pv = phi_value(m, beta, r, [1.0])
    # the tilted coupling sum is a partial sum; its tail bound closes the gap
    assert pv.value <= beta * expected * (1 + 1e-12)
    assert beta * expected <= pv.value + pv.tail
    assert pv.value == pytest.approx(beta * expected, rel=1e-7)


def test_phi_refuses_divergent_tilt():
    with pytest.raises(CriterionRefusal):
        phi_value(ONE, 0.2, 1, [1.0])
    with pytest.raises(ValueError):
        phi_value(model_m1(), 0.2, 1, [1.5])


def test_certify_examples():
    cert = certify(model_m1(), 0.0, [1.0], 4)
    assert cert.status == "certified_decay" and cert.S_radius == 1 and cert.phi == 0
    assert cert.bound == pytest.approx(cert.C)
    with pytest.raises(CriterionRefusal):
        certify(ONE, 0.1, [1.0], 3)
    low = certify(model_m1(), 0.3, [1.0], 6)
    assert low.status == "certified_decay" and low.bound is not None
    near = certify(model_m1(), 0.87, [1.0], 8)
    assert near.status == "inconclusive" and near.bound is None
    assert '"status": "inconclusive"' in near.to_json()


def test_certified_bound_dominates_exact_laplace_sums():
    cert = certify(model_m1(), 0.4, [1.0], 6)
    rows = laplace_partial_sums(model_m1(), 0.4, [1.0], [1, 3, 6, 9], source="oracle")
    assert all(r.value < cert.bound for r in rows)
    assert all(r.value == 1 for r in laplace_partial_sums(model_m1(), 0.0, [1.0], [1, 5, 9], "oracle"))


def test_lower_direction_constant():
    beta, ns = 0.5, [1, 2, 3, 4, 5]
    phis = [phi_value(model_m1(), beta, n, [1.0]).value for n in ns]
    sums = [r.value for r in laplace_partial_sums(model_m1(), beta, [1.0], ns, "oracle")]
    c = lower_bound_constant(phis, sums)
    assert 0 < c < math.inf
    assert np.all(c * np.cumsum(phis) <= np.array(sums) + 1e-12)


def test_mc_profile_matches_oracle_profile():
    pts, exact, _ = free_tilted_profile(model_m1(), 0.7, 6, [1.0], "oracle")
    _, mc, se = free_tilted_profile(model_m1(), 0.7, 6, [1.0], "mc", McBudget(steps=400_000, seed=3))
    assert np.all(np.abs(mc - exact) <= 4 * se + 1e-12)


def test_nu_fit_synthetic_exponential():
    n = np.arange(4, 25)
    est = nu_fit([(k, math.exp(-2 * k), 0.0) for k in n], [1.0], rho_s=3.0)
    assert abs(est.nu - 2) < 1e-10 and est.stderr < 1e-8
    assert not est.saturated


def test_nu_fit_ornstein_zernike_shape():
    n = np.arange(4, 25)
    est = nu_fit([(k, k ** -0.5 * math.exp(-2 * k), 0.0) for k in n], [1.0, 0.0], rho_s=3.0)
    assert abs(est.nu - 2) < 1e-2
    assert est.prefactor_exponent == pytest.approx(0.5, abs=1e-6)


def test_nu_fit_one_jump_is_saturated():
    m = model_m1()
    n = np.arange(4, 25)
    est = nu_fit([(k, coupling(m, [k]), 0.0) for k in n], [1.0], rho_s=1.0)
    assert est.nu == pytest.approx(1.0, abs=1e-8)
    assert est.saturated
    assert est.nu <= est.rho_s + 3 * est.stderr + 0.02 * est.rho_s


def test_nu_fit_errors():
    with pytest.raises(ValueError):
        nu_fit([(1, 0.1), (2, 0.0), (3, 0.01), (4, 0.001)], [1.0], 1.0)
    with pytest.raises(ValueError):
        nu_fit([(1, 0.1), (2, 0.01), (3, 0.001)], [1.0], 1.0)


def test_divergence_slope_synthetic():
    rows = [LaplaceRow(n, 2.0 + 0.5 * n, 0.01) for n in range(8, 49, 4)]
    fit = divergence_slope(rows)
    assert fit.slope == pytest.approx(0.5) and fit.positive()
    flat = [LaplaceRow(n, 3.0 + 0.01 * (-1) ** n, 0.01) for n in range(8, 49, 4)]
    assert divergence_slope(flat).statistically_zero()
    with pytest.raises(ValueError):
        divergence_slope(rows[:2])


def test_greedy_scales():
    ns = greedy_scales(model_m1(), [1.0], 5, budget=0.1)
    assert ns == sorted(set(ns))
    with pytest.raises(CriterionRefusal):
        greedy_scales(ONE, [1.0], 3)


def test_scan_refuses_without_criterion():
    scan = beta_sat_scan(ONE, [1.0], [0.1, 0.2])
    assert scan.refused and scan.bracket == (0.0, 0.0) and scan.beta_hat == 0.0


def test_tiny_beta_is_saturated():
    tab = two_point_table(model_m1(), 0.01, [1.0], range(4, 25, 2), McBudget(steps=400_000, seed=2))
    est = nu_fit(tab, [1.0], 1.0, 0.01)
    assert est.saturated
    assert est.nu <= 1.0 + 3 * est.stderr + 0.02


def test_window_check_fails_at_infinite_temperature():
    wc = oz_window_check(model_m1(), 0.0, range(2, 6), source="oracle", box_radius=10)
    assert not wc.passed and wc.c_minus <= 0
    with pytest.raises(ValueError):
        oz_window_check(CouplingModel(2, NormSpec.l1(), Psi("Polynomial", 5.0)), 0.5, range(2, 5))
    with pytest.raises(ValueError):
        oz_window_check(CouplingModel(1, NormSpec(), Psi("Polynomial", 1.5)), 0.5, range(2, 5))


def test_nearby_directions():
    s = np.array([0.6, 0.8])
    near = nearby_directions(s, 4, 0.05)
    assert len(near) == 4
    for v in near:
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert 0 < np.linalg.norm(v - s) <= 0.05 + 1e-12


def test_local_saturation_spot_check():
    m = CouplingModel(2, NormSpec.l2(), Psi("Polynomial", 5.0))
    base, near = local_saturation_check(m, 0.15, [0.6, 0.8], S_max=1)
    assert base.status == "certified_decay"
    assert all(c.status == "certified_decay" for c in near)
