import math

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings, strategies as st

from ricci_af.functionals import (DiagnosticsRow, TestFunction, adm_mass, bubble, certificate,
                                  cgb_residual, compact_bump, decay_exponents, decay_report,
                                  default_battery, detect_minimal_hyperspheres, diagnostics,
                                  e1_e2, entropy_mu, euclidean_sobolev_constant,
                                  evolution_budget, gaussian, log_sobolev_battery,
                                  log_sobolev_check, lp_curvature_norm, mu_star_estimate,
                                  pinching_ratio, rayleigh_ratio, simpson_weights,
                                  sobolev_estimate, volume_integral, w_functional,
                                  weighted_sobolev_constant, weighted_sobolev_ratio)
from ricci_af.functionals import decay_q, entropy_monitor, monotone_check
from ricci_af.geometry import (Grid, curvature, make_profile, scale_metric,
                               schwarzschild_factor, schwarzschild_throat)


def flat(n=3, s_max=8.0, M=800):
    return make_profile("flat", n, Grid(s_max, M))


def bump(n=3, M=400, s_max=8.0, **kw):
    params = dict(a=0.05, r0=2.0, w=0.5)
    params.update(kw)
    return make_profile("gaussian_bump", n, Grid(s_max, M), **params)


def schwarzschild(n=3, M=2000):
    return make_profile("schwarzschild_slice", n, Grid(20.0, M), m=1.0)


# ----------------------------------------------------------------------------
# quadrature and norms

def test_simpson_exact_on_quadratics_nonuniform():
    x = np.cumsum(np.r_[0.0, np.linspace(0.1, 0.3, 11)])
    w = simpson_weights(x)
    for k in range(3):
        assert np.dot(w, x ** k) == pytest.approx(x[-1] ** (k + 1) / (k + 1), rel=1e-13)


def test_ball_volume():
    p = flat(3, 1.0, 100)
    assert abs(volume_integral(p, np.ones(101), tail=False) - 4.0 * math.pi / 3.0) <= 1e-8


def test_gaussian_volume_integral():
    p = flat(3)
    assert abs(volume_integral(p, np.exp(-p.s ** 2)) - math.pi ** 1.5) <= 1e-8


def test_power_tail_correction():
    # F = (1 + r^2)^-3 has a clean r^-6 tail beyond a short grid
    p = flat(3, 10.0, 1000)
    F = (1.0 + p.s ** 2) ** -3.0
    exact = math.pi ** 2 / 4.0       # 4 pi int r^2 (1+r^2)^-3 dr
    err = abs(volume_integral(p, F) - exact)
    # the fitted pure power misses the relative r^-2 correction of the tail
    assert err <= 1e-4
    assert 10.0 * err < abs(volume_integral(p, F, tail=False) - exact)


def test_lp_norm_flat_zero_and_threshold():
    p = flat(4, 4.0, 100)
    assert lp_curvature_norm(p, 2.0) == 0.0
    with pytest.raises(ValueError):
        lp_curvature_norm(p.replace(tau=0.5), 1.5)


@pytest.mark.parametrize("n", [3, 4])
def test_lp_norm_self_convergence(n):
    a = lp_curvature_norm(bump(n, 400, a=0.01), n / 2.0)
    b = lp_curvature_norm(bump(n, 1600, a=0.01), n / 2.0)
    assert abs(a - b) <= 1e-6 * b


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([0.5, 2.0, 10.0]), st.sampled_from([3, 4]))
def test_scale_invariant_quantities(lam, n):
    p = bump(n, 200, a=0.1)
    q = scale_metric(p, lam)
    a, b = lp_curvature_norm(p, n / 2.0), lp_curvature_norm(q, n / 2.0)
    assert abs(a - b) <= 1e-10 * a
    ca = pinching_ratio(p, sobolev_estimate(p).lower_bound)
    cb = pinching_ratio(q, sobolev_estimate(q).lower_bound)
    assert abs(ca - cb) <= 1e-10 * ca


# ----------------------------------------------------------------------------
# Sobolev machinery

@pytest.mark.parametrize("n", [3, 4, 5])
def test_sobolev_flat_reaches_sharp_constant(n):
    est = sobolev_estimate(flat(n, 8.0, 400))
    assert est.lower_bound >= 0.999 * est.c_euclid
    assert est.lower_bound <= 1.001 * est.c_euclid


def test_sharp_constant_closed_form():
    # n = 3: 4 / (3 (2 pi^2)^(2/3)) from the area of the unit 3-sphere
    assert euclidean_sobolev_constant(3) == pytest.approx(4.0 / (3.0 * (2 * math.pi ** 2) ** (2 / 3)),
                                                          rel=1e-15)


def test_sobolev_bound_on_curved_profiles():
    for p in (bump(3, a=0.3), schwarzschild(3, 1000)):
        est = sobolev_estimate(p)
        assert est.lower_bound >= 0.999 * est.c_euclid


def test_sobolev_monotone_in_battery():
    p = bump(3, a=0.3)
    small = sobolev_estimate(p, default_battery(p, 6, 2)).lower_bound
    assert sobolev_estimate(p).lower_bound >= small


def test_degenerate_test_function_skipped():
    p = flat(3, 4.0, 100)
    const = TestFunction(u=np.ones(101), du=np.zeros(101), label="const")
    assert rayleigh_ratio(p, const) is None
    est = sobolev_estimate(p, [const, compact_bump(p, 2.0)])
    assert est.witness.startswith("bump")


def test_weighted_ratio_properties():
    p = flat(3, 8.0, 400)
    tf = bubble(p, 1.0)
    assert weighted_sobolev_ratio(p, tf) == rayleigh_ratio(p, tf)
    q = bump(3, a=0.3)
    for tf in default_battery(q, 6, 2):
        assert weighted_sobolev_ratio(q, tf) <= rayleigh_ratio(q, tf) * (1 + 1e-12)
    assert weighted_sobolev_constant(p) == pytest.approx(sobolev_estimate(p).lower_bound,
                                                         rel=1e-12)


def test_pinching_ratio():
    assert pinching_ratio(flat(3, 4.0, 100), 1.0) == 0.0
    p = schwarzschild()
    chi = pinching_ratio(p, sobolev_estimate(p).lower_bound)
    assert chi > 1.0
    with pytest.raises(ValueError):
        pinching_ratio(p, 0.0)


def test_certificate_keys_and_verdict():
    c = certificate(flat(3, 4.0, 100), 0.1)
    assert set(c) == {"chi", "sobolev_lb", "l_n2", "threshold", "verdict", "one_sidedness_note"}
    assert c["verdict"] == "pass" and c["chi"] == 0.0
    assert certificate(schwarzschild(3, 1000), 0.1)["verdict"] == "fail"


# ----------------------------------------------------------------------------
# log-Sobolev and entropy

def test_log_sobolev_flat_gaussian():
    p = flat(3)
    C = euclidean_sobolev_constant(3)
    g = gaussian(p, 1.0)
    base = log_sobolev_check(p, g, C)
    assert base >= 0.0
    assert log_sobolev_check(p, g, 10.0 * C) > base
    assert log_sobolev_check(p, g, C / 100.0) < 0.0


@pytest.mark.parametrize("n", [3, 4])
def test_log_sobolev_battery_nonnegative(n):
    p = flat(n, 8.0, 400)
    C = euclidean_sobolev_constant(n)
    bat = log_sobolev_battery(p, 20)
    assert len(bat) == 20
    assert min(log_sobolev_check(p, tf, C) for tf in bat) >= 0.0


@pytest.mark.parametrize("tau", [0.25, 1.0])
def test_w_vanishes_at_matched_gaussian(tau):
    p = flat(3)
    g = gaussian(p, 2.0 * math.sqrt(tau))      # u^2 ~ exp(-r^2 / (4 tau))
    w0 = w_functional(p, g, tau)
    assert abs(w0) <= 1e-4
    for other in (compact_bump(p, 4.0), gaussian(p, math.sqrt(tau))):
        assert w_functional(p, other, tau) >= w0


def test_w_rejects_bad_tau():
    p = flat(3, 4.0, 100)
    with pytest.raises(ValueError):
        w_functional(p, gaussian(p, 1.0), 0.0)


def test_mu_star_flat_matches_gaussian_and_is_reproducible():
    p = flat(3)
    a = mu_star_estimate(p, 1.0)
    b = mu_star_estimate(p, 1.0)
    assert a.value == b.value
    # the Euclidean minimiser gives mu = 0
    assert abs(entropy_mu(a.value, 1.0, 3)) <= 1e-3
    assert a.value <= min(a.initial_values)


def test_mu_star_curved_improves_on_starts():
    p = bump(3, a=0.2)
    res = mu_star_estimate(p, 0.5, seed=3)
    assert res.value <= min(res.initial_values)
    assert res.converged


# ----------------------------------------------------------------------------
# minimal spheres, neck energies, identities

def test_detector_flat_and_small_bump_empty():
    assert detect_minimal_hyperspheres(flat(3, 4.0, 200)) == []
    assert detect_minimal_hyperspheres(bump(3)) == []


def test_detector_finds_schwarzschild_throat():
    hits = detect_minimal_hyperspheres(schwarzschild())
    # isotropic throat m/2 mapped to arclength through the closed-form lapse
    throat = quad(lambda x: math.sqrt(schwarzschild_factor(x, 1.0, 3)), 0.0,
                  schwarzschild_throat(1.0, 3), epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    assert min(abs(h - throat) for h in hits) <= 1e-4
    # the capped core carries a second, inner stationary sphere
    assert len(hits) == 2 and hits[0] < throat


def test_e1_e2_scale_invariant_and_flat_rejected():
    p = schwarzschild()
    R = detect_minimal_hyperspheres(p)[0]
    e = e1_e2(p, R)
    assert e[0] > 0 and e[1] > 0
    q = scale_metric(p, 3.0)
    eq = e1_e2(q, detect_minimal_hyperspheres(q)[0])
    assert np.allclose(e, eq, rtol=1e-10, atol=0)
    with pytest.raises(ValueError):
        e1_e2(flat(3, 4.0, 100), None)


def test_cgb_identity_on_compact_bump():
    res = cgb_residual(bump(4, 800, a=0.1))
    assert res["relative"] <= 1e-3 and res["warning"] is None
    assert cgb_residual(flat(4, 4.0, 100))["residual"] == 0.0
    with pytest.raises(ValueError):
        cgb_residual(bump(3))


def test_cgb_warns_on_slow_tail():
    p = bump(4, 200, a=0.1).replace(tau=0.5)
    assert cgb_residual(p)["warning"] is not None


def test_adm_mass_examples():
    m = adm_mass(schwarzschild())
    assert abs(m.mass - 1.0) <= 0.02 and m.reliable
    assert abs(adm_mass(flat(3)).mass) <= 1e-10
    assert abs(adm_mass(bump(3)).mass) <= 1e-8


# ----------------------------------------------------------------------------
# diagnostics and reports

def test_diagnostics_row_invariants():
    row = diagnostics(bump(3, 200, a=0.1), t=0.5)
    assert row.t_sup_rm == row.t * row.sup_rm
    for k in ("sup_rm", "l_n2", "l_q", "chi", "sobolev_lb"):
        assert getattr(row, k) >= 0
    assert math.isnan(row.cgb) and row.min_sphere == ()
    assert set(row.as_dict()) == set(DiagnosticsRow.COLUMNS)


def test_decay_constants():
    assert decay_exponents(4) == (-1.0, 0.5)
    assert decay_q(4) == 4.0 and decay_q(3) == 4.5


def test_decay_report_flat_and_inconclusive():
    rows = [DiagnosticsRow(t=t, sup_rm=0.0, l_q=0.0) for t in (0.0, 1.0, 2.0)]
    rep = decay_report(rows, 3)
    assert rep.t_sup_decreasing and rep.envelope_ok
    rows = [DiagnosticsRow(t=t, sup_rm=1.0 / t, l_q=1.0 / t) for t in (4.0, 5.0)]
    rep = decay_report(rows, 4)
    assert rep.inconclusive and not rep.envelope_ok


def test_decay_report_on_synthetic_power_law():
    ts = np.geomspace(0.01, 10.0, 40)
    rows = [DiagnosticsRow(t=t, sup_rm=0.1 * (t + 0.01) ** -1.5, l_q=(t + 0.01) ** -1.0)
            for t in ts]
    rep = decay_report(rows, 4)
    assert rep.t_sup_decreasing and rep.envelope_ok and not rep.inconclusive
    assert rep.slope_sup == pytest.approx(-1.5, abs=0.05)


def test_evolution_budget_flat_and_alpha_guard():
    p = flat(3, 4.0, 100)
    out = evolution_budget([(0.0, p), (0.1, p), (0.2, p)], 1.0)
    assert all(r["ddt"] == 0 and r["grad"] == 0 and r["react"] == 0 for r in out)
    with pytest.raises(ValueError):
        evolution_budget([(0.0, p), (0.1, p), (0.2, p)], 0.5)
    with pytest.raises(ValueError):
        evolution_budget([(0.0, p)], 1.0)


# ----------------------------------------------------------------------------
# monotone monitors

def test_monotone_check_slack_and_violations():
    t = np.linspace(0.0, 1.0, 11)
    v = np.exp(-t)
    assert monotone_check(t, v, 1e-3).ok
    # a jump of 0.2 against a slack of about 10 * 1e-4 * 2.6
    w = v.copy()
    w[5] += 0.2
    rep = monotone_check(t, w, 1e-4)
    assert not rep.ok and rep.violations[0]["t"] == pytest.approx(0.5)
    assert monotone_check(t, -v, 1e-3, direction=+1).ok
    assert monotone_check(t[:1], v[:1], 1e-3).ok
    with pytest.raises(ValueError):
        monotone_check(t[::-1], v, 1e-3)


def test_entropy_monitor_flags_only_large_drops():
    rows = [DiagnosticsRow(t=t, mu_star=m) for t, m in
            ((0.0, 10.0), (1.0, 9.9), (2.0, 9.0), (3.0, float("nan")))]
    mus, bad = entropy_monitor(rows, 10.0, 3, slack=1e-3)
    assert len(mus) == 3
    mu = [entropy_mu(m, 10.0 - t, 3) for t, m in ((0.0, 10.0), (1.0, 9.9), (2.0, 9.0))]
    assert [m for _, m in mus] == mu
    # mu rises at the first step and falls at the second
    assert mu[1] > mu[0] and mu[2] < mu[1]
    assert [b["t"] for b in bad] == [2.0]
