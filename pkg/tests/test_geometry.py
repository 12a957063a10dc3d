import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ricci_af.geometry import (FAMILIES, Grid, ProfileError, RadialProfile, arclength,
                               cell_lengths, curvature, dumps, make_profile,
                               profile_from_json, profile_to_json, radial_derivatives,
                               regrid, riemann_oracle, scale_metric, validate)

# Arclength of the capped Schwarzschild slice (m = 1) at s = 0.25, 1, 2, 4,
# from scipy.integrate.quad on the closed-form lapse with 1e-14 tolerances.
SCHW_ARCLENGTH = {
    3: [2.1183820426347784, 4.9709428980792785, 6.789090078639224, 9.544737259199168],
    4: [1.1868490005921342, 3.17504504185224, 4.42504504185224, 6.550045041852239],
}


def window(fn, s_max, M, n=3):
    s = np.linspace(0.0, s_max, M + 1)
    return RadialProfile(n=n, s=s, f=fn(s), phi=np.ones_like(s), tau=1.0)


def bump(n=3, M=400, s_max=8.0, **kw):
    params = dict(a=0.1, r0=2.0, w=0.5)
    params.update(kw)
    return make_profile("gaussian_bump", n, Grid(s_max, M), **params)


# ----------------------------------------------------------------------------
# construction

def test_flat_profile_is_identity():
    p = make_profile("flat", 3, Grid(1.0, 100))
    assert np.array_equal(p.f, p.s)
    assert np.all(p.phi == 1.0)
    c = curvature(p)
    for k in c.FIELDS:
        assert np.all(getattr(c, k) == 0.0), k


def test_families_catalogued():
    assert set(FAMILIES) == {"flat", "gaussian_bump", "schwarzschild_slice", "neck",
                             "conformal_bump"}


@pytest.mark.parametrize("kw", [dict(a=-1.1, r0=1.0, w=10.0), dict(a=0.1, r0=1.0, w=-1.0)])
def test_bump_rejects_bad_parameters(kw):
    with pytest.raises(ProfileError):
        make_profile("gaussian_bump", 3, Grid(4.0, 100), **kw)


def test_bump_with_extreme_but_valid_dip():
    p = make_profile("gaussian_bump", 3, Grid(4.0, 400), a=-0.9, r0=1.0, w=0.1)
    assert np.all(p.f[1:] > 0)


@pytest.mark.parametrize("n", [1, 2.5])
def test_rejects_bad_dimension(n):
    with pytest.raises(ProfileError):
        make_profile("flat", n, Grid(1.0, 20))


def test_rejects_non_monotone_grid():
    s = np.array([0.0, 0.1, 0.3, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8])
    with pytest.raises(ProfileError):
        RadialProfile(n=3, s=s, f=s, phi=np.ones_like(s), tau=1.0)


def test_profile_arrays_read_only():
    p = bump(M=100)
    with pytest.raises(ValueError):
        p.f[3] = 1.0


def test_schwarzschild_has_throat_derivative_zero():
    # f_r changes sign at the isotropic throat rho = m/2
    p = make_profile("schwarzschild_slice", 3, Grid(4.0, 800), m=1.0)
    i = int(round(0.5 / 4.0 * 800))
    d = radial_derivatives(p)[0]
    assert abs(d[i]) < 1e-10
    assert d[i - 20] < 0 < d[i + 20]


# ----------------------------------------------------------------------------
# arclength

def test_arclength_flat_and_constant_lapse():
    p = make_profile("flat", 3, Grid(2.0, 50))
    assert np.array_equal(arclength(p), p.s)
    q = p.replace(phi=np.full_like(p.s, 2.0), f=2.0 * p.s)
    assert np.array_equal(arclength(q), 2.0 * p.s)


@pytest.mark.parametrize("n", [3, 4])
def test_arclength_schwarzschild_against_quadrature(n):
    p = make_profile("schwarzschild_slice", n, Grid(4.0, 800), m=1.0)
    r = arclength(p)
    idx = [50, 200, 400, 800]
    assert np.max(np.abs(r[idx] - SCHW_ARCLENGTH[n])) < 1e-8


def test_arclength_increasing():
    p = make_profile("conformal_bump", 3, Grid(5.0, 200), u0=0.3, r0=1.0, w=0.5)
    r = arclength(p)
    assert r[0] == 0.0 and np.all(np.diff(r) > 0)


# ----------------------------------------------------------------------------
# curvature against fixtures and the oracle

@pytest.mark.parametrize("fn,sign,s_max", [(np.sin, 1.0, 1.2), (np.sinh, -1.0, 2.0)])
def test_constant_curvature_windows(fn, sign, s_max):
    p = window(fn, s_max, int(round(s_max * 500)))
    c = curvature(p)
    core = slice(5, -5)
    assert np.max(np.abs(c.nu1[core] - sign)) < 1e-4
    assert np.max(np.abs(c.nu2[core] - sign)) < 1e-4
    o = riemann_oracle(p)
    assert np.nanmax(np.abs(o.nu2[core] - sign)) < 1e-4


def test_bump_matches_oracle_at_h_200():
    p = bump(n=4, M=1600)     # h = 1/200
    c, o = curvature(p), riemann_oracle(p)
    assert c.sup_diff(o, ("nu1", "nu2", "R", "lam_rad", "lam_sph")) < 1e-6


def test_oracle_convergence_order():
    errs = []
    for M in (400, 800):
        p = bump(n=3, M=M, s_max=4.0, a=0.2, r0=1.0, w=0.4)
        errs.append(curvature(p).sup_diff(riemann_oracle(p), ("nu1", "nu2")))
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_trace_identity_and_signs():
    for p in (bump(n=3), bump(n=5),
              make_profile("schwarzschild_slice", 4, Grid(6.0, 600), m=1.0)):
        c = curvature(p)
        assert np.allclose(c.R, c.lam_rad + (p.n - 1) * c.lam_sph, rtol=0, atol=1e-12)
        assert np.all(c.rm2 >= 0) and np.all(c.e2 >= -1e-15)


def test_origin_regularity():
    p = bump(n=3, M=800, r0=0.0, w=0.7)
    c = curvature(p, origin=None)
    r = c.r
    idx = np.arange(4, 40)
    ratio = np.abs(c.nu1[idx] - c.nu2[idx]) / r[idx] ** 2
    assert np.max(ratio) < 10.0


# ----------------------------------------------------------------------------
# gauge and scale

smooth_lapses = st.tuples(st.floats(-0.4, 0.4), st.floats(0.2, 2.0), st.floats(0.5, 1.5))


@settings(max_examples=25, deadline=None)
@given(smooth_lapses)
def test_flat_metric_in_any_gauge(lapse):
    # f = int phi ds describes flat space whatever the lapse
    b, w, base = lapse
    s = np.linspace(0.0, 6.0, 301)
    phi = base * (1.0 + b * np.exp(-(s / w) ** 2))
    f = np.concatenate([[0.0], np.cumsum(cell_lengths(s, phi))])
    p = RadialProfile(n=3, s=s, f=f, phi=phi, tau=1.0)
    c = curvature(p)
    assert np.max(np.abs(c.rm2)) < 1e-16 * max(1.0, 1.0 / base ** 4) * 1e6


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.sampled_from([3, 4, 5]))
def test_scaling_covariance(lam, n):
    p = bump(n=n, M=200)
    c, cl = curvature(p), curvature(scale_metric(p, lam))
    for k in ("nu1", "nu2", "R"):
        a, b = getattr(c, k), getattr(cl, k) * lam ** 2
        assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))
    assert np.max(np.abs(cl.rm2 * lam ** 4 - c.rm2)) <= 1e-10 * np.max(c.rm2)


def test_scale_keeps_flat():
    p = scale_metric(make_profile("flat", 3, Grid(1.0, 50)), 3.0)
    assert np.max(np.abs(curvature(p).rm2)) == 0.0


# ----------------------------------------------------------------------------
# regrid

def test_regrid_identity_is_bitwise():
    p = bump(M=100)
    assert regrid(p, Grid(8.0, 100)) is p


def test_regrid_flat_stays_flat():
    p = make_profile("flat", 3, Grid(4.0, 40))
    q = regrid(p, Grid(4.0, 160))
    assert np.allclose(q.f, q.s, rtol=0, atol=1e-14)
    assert np.allclose(q.phi, 1.0, rtol=0, atol=1e-14)


def test_regrid_refinement_converges():
    # interpolated values converge at fourth order, their curvature at second
    exact = bump(M=800)
    dv, dc = [], []
    for M in (100, 200):
        fine = regrid(bump(M=M), Grid(8.0, 800))
        dv.append(np.max(np.abs(fine.f - exact.f)))
        dc.append(curvature(fine).sup_diff(curvature(exact), ("nu1", "nu2")))
    assert math.log2(dv[0] / dv[1]) > 3.5
    assert math.log2(dc[0] / dc[1]) > 1.8


def test_regrid_rejects_overhang():
    with pytest.raises(ProfileError):
        regrid(bump(M=100), Grid(9.0, 100))


# ----------------------------------------------------------------------------
# validation

def test_validate_flat():
    rep = validate(make_profile("flat", 3, Grid(4.0, 200)))
    assert rep.ok
    assert rep.checks["tail_decay"]["value"] == float("inf")


def test_validate_flags_bad_origin_slope():
    s = np.linspace(0.0, 4.0, 201)
    p = RadialProfile(n=3, s=s, f=2.0 * s, phi=np.ones_like(s), tau=1.0)
    rep = validate(p)
    assert "origin_derivative" in rep.failed()


def test_validate_flags_even_part_at_origin():
    s = np.linspace(0.0, 4.0, 401)
    f = s * (1.0 + 0.3 * s / (1.0 + s * s))
    rep = validate(RadialProfile(n=3, s=s, f=f, phi=np.ones_like(s), tau=1.0))
    assert "origin_regularity" in rep.failed()


def test_validate_schwarzschild_tail_order():
    p = make_profile("schwarzschild_slice", 3, Grid(20.0, 2000), m=1.0)
    rep = validate(p)
    assert rep.ok
    assert abs(rep.checks["tail_decay"]["value"] - 1.0) < 0.05


# ----------------------------------------------------------------------------
# serialization

def test_json_round_trip_byte_stable():
    p = make_profile("conformal_bump", 3, Grid(5.0, 60), u0=0.2, r0=1.0, w=0.5)
    text = profile_to_json(p)
    q = profile_from_json(text)
    assert profile_to_json(q) == text
    assert np.array_equal(q.f, p.f) and np.array_equal(q.phi, p.phi)
    d = json.loads(text)
    assert set(d) == {"n", "tau", "family", "params", "s", "f", "phi"}


def test_dumps_uses_17_digits():
    assert dumps({"x": 0.1}) == '{"x": 0.10000000000000001}\n'
