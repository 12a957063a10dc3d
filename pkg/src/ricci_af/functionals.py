r"""Integrals, norms, entropies and detectors of radial profiles.

Every quantity here is a pure function of a :class:`RadialProfile` (and,
for the heat companion, a nodal field). Volume integrals are

    int F dV = omega_{n-1} int F phi f^{n-1} ds

by composite Simpson on the coordinate grid, with ``omega_{n-1}`` the area
of the unit (n-1)-sphere.

Test functions for the Sobolev and entropy machinery are radial and are
stored together with their arclength derivative. Functions that do not
vanish at the outer boundary may carry an analytic exterior: beyond the
last node the metric is continued as flat, with area radius growing at
unit rate, and the exterior pieces are integrated by adaptive quadrature.
"""

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ._fd import diff, diff_matrix
from .geometry import (ProfileError, arclength, curvature, isotropic_radius,
                       radial_derivatives, sphere_area, _outer)

__all__ = [
    "simpson_weights",
    "sobolev_exponent",
    "volume_integral",
    "lp_curvature_norm",
    "euclidean_sobolev_constant",
    "TestFunction",
    "bubble",
    "compact_bump",
    "gaussian",
    "default_battery",
    "log_sobolev_battery",
    "SobolevEstimate",
    "sobolev_estimate",
    "rayleigh_ratio",
    "pinching_ratio",
    "log_sobolev_check",
    "w_functional",
    "MuStarResult",
    "mu_star_estimate",
    "entropy_mu",
    "weighted_sobolev_ratio",
    "weighted_sobolev_constant",
    "detect_minimal_hyperspheres",
    "e1_e2",
    "cgb_residual",
    "AdmMass",
    "adm_mass",
    "DiagnosticsRow",
    "diagnostics",
    "evolution_budget",
    "evolution_c2",
    "DecayReport",
    "decay_exponents",
    "decay_q",
    "decay_report",
    "MonotoneReport",
    "monotone_check",
    "entropy_monitor",
    "certificate",
]


# ----------------------------------------------------------------------------
# quadrature

_wcache = {}


def simpson_weights(x):
    """Composite Simpson weights on a non-uniform grid.

    Pairs of intervals use the three-point rule; with an odd number of
    intervals the last one is integrated by the quadratic through the
    final three nodes.
    """
    x = np.asarray(x, dtype=float)
    key = x.tobytes()
    w = _wcache.get(key)
    if w is not None:
        return w
    n = len(x) - 1
    w = np.zeros(n + 1)
    h = np.diff(x)
    m = n - (n % 2)
    h0, h1 = h[0:m:2], h[1:m:2]
    hs = h0 + h1
    w[0:m:2] += hs / 6.0 * (2.0 - h1 / h0)
    w[1:m:2] += hs / 6.0 * hs ** 2 / (h0 * h1)
    w[2:m + 1:2] += hs / 6.0 * (2.0 - h0 / h1)
    if n % 2:
        h0, h1 = h[-2], h[-1]
        w[-1] += (2 * h1 ** 2 + 3 * h0 * h1) / (6 * (h0 + h1))
        w[-2] += (h1 ** 2 + 3 * h0 * h1) / (6 * h0)
        w[-3] -= h1 ** 3 / (6 * h0 * (h0 + h1))
    w.setflags(write=False)
    if len(_wcache) > 64:
        _wcache.clear()
    _wcache[key] = w
    return w


def _dv_weights(profile):
    """Nodal weights so that ``int F dV = sum(w * F)``."""
    n = profile.n
    return sphere_area(n - 1) * simpson_weights(profile.s) * profile.phi * profile.f ** (n - 1)


def _tail_power(r, F, k=12):
    """Fit ``F = A r^-p`` on the last ``k`` nodes; None if not a clean power law."""
    rr, FF = r[-k:], F[-k:]
    if np.all(FF == 0):
        return None
    if not (np.all(FF > 0) or np.all(FF < 0)):
        return None
    a = np.abs(FF)
    if np.any(np.diff(a) >= 0):
        return None
    x, y = np.log(rr), np.log(a)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    if np.max(np.abs(resid)) > 1e-3:
        return None
    return float(np.sign(FF[-1]) * np.exp(icpt)), float(-slope)


def volume_integral(profile, F, tail=True):
    """``int F dV`` by Simpson, plus the analytic power-law tail beyond ``s_M``.

    The tail is added only when the outermost values of ``F`` follow a
    clean power law ``A r^-p`` with ``p > n`` (so the exterior integral
    converges); the exterior metric is taken to be Euclidean.
    """
    F = np.asarray(F, dtype=float)
    val = float(np.dot(_dv_weights(profile), F))
    if tail:
        r = arclength(profile)
        fit = _tail_power(r, F)
        n = profile.n
        if fit is not None and fit[1] > n:
            A, p = fit
            val += sphere_area(n - 1) * A * r[-1] ** (n - p) / (p - n)
    return val


def sobolev_exponent(n):
    return 2.0 * n / (n - 2.0)


def _rm(profile, curv=None):
    c = curv or curvature(profile)
    return np.sqrt(np.maximum(c.rm2, 0.0))


def lp_curvature_norm(profile, p, curv=None, tail=True):
    """``(int |Rm|^p dV)^(1/p)``.

    Raises ``ValueError`` for ``p <= n / (2 + tau)``, where the tail of an
    AF metric of order ``tau`` need not be integrable.
    """
    n = profile.n
    if p < 1 or p <= n / (2.0 + profile.tau):
        raise ValueError(f"p = {p} is below the integrability threshold n/(2+tau)")
    val = volume_integral(profile, _rm(profile, curv) ** p, tail=tail)
    return max(val, 0.0) ** (1.0 / p)


# ----------------------------------------------------------------------------
# test functions

def euclidean_sobolev_constant(n):
    """Sharp Euclidean constant ``4 / (n (n-2) omega_n^(2/n))``."""
    if n < 3:
        raise ValueError("Sobolev constant needs n >= 3")
    return 4.0 / (n * (n - 2.0) * sphere_area(n) ** (2.0 / n))


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Radial test function: nodal values, arclength derivative, exterior."""

    __test__ = False

    u: np.ndarray
    du: np.ndarray
    label: str = ""
    exterior: object = None  # callable r -> (u, du) for r beyond the grid

    @classmethod
    def from_values(cls, profile, u, label=""):
        """Wrap nodal values; the derivative is a finite difference."""
        u = np.asarray(u, dtype=float)
        du = diff(profile.s, u, +1)[0] / profile.phi
        return cls(u=u, du=du, label=label)


def _exterior_integral(profile, fn, scale):
    """``omega int_{r_M}^inf fn(r) rho(r)^{n-1} dr`` with ``rho = f_M + r - r_M``."""
    n = profile.n
    rM = float(arclength(profile)[-1])
    fM = float(profile.f[-1])

    def g(r):
        return fn(r) * (fM + r - rM) ** (n - 1)

    total = 0.0
    a = rM
    for k in range(1, 40):
        b = rM + scale * 4.0 ** k
        part = quad(g, a, b, limit=200, epsabs=0.0, epsrel=1e-12)[0]
        total += part
        if abs(part) <= 1e-15 * abs(total) and k > 3:
            break
        a = b
    return sphere_area(n - 1) * total


def bubble(profile, b):
    """Aubin-Talenti profile ``(1 + (r/b)^2)^(-(n-2)/2)`` in arclength."""
    n = profile.n
    k = (n - 2) / 2.0
    r = arclength(profile)

    def val(r):
        x = 1.0 + (r / b) ** 2
        return x ** (-k), -2.0 * k * r / b ** 2 * x ** (-k - 1.0)

    u, du = val(r)
    return TestFunction(u=u, du=du, label=f"bubble b={b:.6g}", exterior=val)


def compact_bump(profile, R):
    """``cos^2(pi r / (2R))`` on ``r < R``, zero beyond."""
    r = arclength(profile)
    x = np.clip(r / R, 0.0, 1.0)
    u = np.cos(0.5 * np.pi * x) ** 2
    du = np.where(r < R, -0.5 * np.pi / R * np.sin(np.pi * x), 0.0)
    return TestFunction(u=u, du=du, label=f"bump R={R:.6g}")


def gaussian(profile, width):
    """``exp(-r^2 / (2 width^2))`` in arclength."""
    r = arclength(profile)
    u = np.exp(-0.5 * (r / width) ** 2)
    return TestFunction(u=u, du=-r / width ** 2 * u, label=f"gaussian w={width:.6g}")


def default_battery(profile, n_bubbles=24, n_bumps=8):
    """Bubbles over a log-spaced width sweep plus compactly supported bumps.

    Bubble widths run from 20 node spacings at the origin up to 1000 times
    the domain radius; the large ones live mostly in the exterior and probe
    the near-Euclidean outer region.
    """
    r = arclength(profile)
    h0, rM = r[1], r[-1]
    out = [bubble(profile, b) for b in np.geomspace(20.0 * h0, 1e3 * rM, n_bubbles)]
    out += [compact_bump(profile, R) for R in np.geomspace(20.0 * h0, rM, n_bumps)]
    return out


def log_sobolev_battery(profile, count=20):
    """Gaussians and compact bumps, all with integrable ``u^2 log u^2``."""
    r = arclength(profile)
    h0, rM = r[1], r[-1]
    k = count // 2
    out = [gaussian(profile, w) for w in np.geomspace(10.0 * h0, rM / 8.0, k)]
    out += [compact_bump(profile, R) for R in np.geomspace(20.0 * h0, rM, count - k)]
    return out


def _integrals(profile, tf, dvw, weight=None):
    """Return ``(int u^2*, int |grad u|^2 (+ weight u^2), int u^2)`` with exterior."""
    n = profile.n
    q = sobolev_exponent(n)
    au = np.abs(tf.u)
    iq = float(np.dot(dvw, au ** q))
    ig = float(np.dot(dvw, tf.du ** 2))
    i2 = float(np.dot(dvw, au ** 2))
    if weight is not None:
        ig += float(np.dot(dvw, weight * au ** 2))
    if tf.exterior is not None:
        scale = float(arclength(profile)[-1])
        iq += _exterior_integral(profile, lambda r: abs(tf.exterior(r)[0]) ** q, scale)
        ig += _exterior_integral(profile, lambda r: tf.exterior(r)[1] ** 2, scale)
    return iq, ig, i2


def rayleigh_ratio(profile, tf, weight=None, dvw=None):
    """``||u||_{2n/(n-2)}^2 / int(|grad u|^2 + weight u^2)``; None if degenerate."""
    n = profile.n
    dvw = _dv_weights(profile) if dvw is None else dvw
    iq, ig, _ = _integrals(profile, tf, dvw, weight)
    if not ig > 0:
        return None
    return iq ** ((n - 2.0) / n) / ig


@dataclass
class SobolevEstimate:
    lower_bound: float
    witness: str
    ratios: list
    c_euclid: float


def sobolev_estimate(profile, battery=None):
    """Battery supremum of the Sobolev quotient: a lower bound on ``C_g``."""
    n = profile.n
    if n < 3:
        raise ValueError("Sobolev constant needs n >= 3")
    battery = default_battery(profile) if battery is None else battery
    dvw = _dv_weights(profile)
    ratios = []
    for tf in battery:
        q = rayleigh_ratio(profile, tf, dvw=dvw)
        if q is not None:
            ratios.append((tf.label, q))
    if not ratios:
        raise ValueError("battery has no admissible test function")
    label, best = max(ratios, key=lambda x: x[1])
    return SobolevEstimate(lower_bound=best, witness=label, ratios=ratios,
                           c_euclid=euclidean_sobolev_constant(n))


def pinching_ratio(profile, sobolev_lb, curv=None):
    """``chi = C * (int |Rm|^(n/2) dV)^(2/n)``; an underestimate when C is a lower bound."""
    if not sobolev_lb > 0:
        raise ValueError("Sobolev bound must be positive")
    return sobolev_lb * lp_curvature_norm(profile, profile.n / 2.0, curv)


def weighted_sobolev_ratio(profile, tf, curv=None):
    """Sobolev quotient with the positive part of scalar curvature in the energy."""
    c = curv or curvature(profile)
    return rayleigh_ratio(profile, tf, weight=np.maximum(c.R, 0.0))


def weighted_sobolev_constant(profile, battery=None, curv=None):
    """Battery maximum of :func:`weighted_sobolev_ratio`."""
    c = curv or curvature(profile)
    battery = default_battery(profile) if battery is None else battery
    dvw = _dv_weights(profile)
    w = np.maximum(c.R, 0.0)
    vals = [rayleigh_ratio(profile, tf, weight=w, dvw=dvw) for tf in battery]
    vals = [v for v in vals if v is not None]
    return max(vals)


# ----------------------------------------------------------------------------
# log-Sobolev and entropy

def _normalized(profile, tf, dvw):
    i2 = float(np.dot(dvw, tf.u ** 2))
    if tf.exterior is not None:
        scale = float(arclength(profile)[-1])
        i2 += _exterior_integral(profile, lambda r: tf.exterior(r)[0] ** 2, scale)
    if not (i2 > 0 and np.isfinite(i2)):
        raise ValueError(f"test function {tf.label!r} has no finite L2 norm")
    c = 1.0 / math.sqrt(i2)
    return c * tf.u, c * tf.du, c


def _xlogx2(u):
    u2 = u * u
    out = np.zeros_like(u2)
    pos = u2 > 0
    out[pos] = u2[pos] * np.log(u2[pos])
    return out


def _entropy_parts(profile, tf, dvw):
    u, du, c = _normalized(profile, tf, dvw)
    ent = float(np.dot(dvw, _xlogx2(u)))
    grad = float(np.dot(dvw, du ** 2))
    if tf.exterior is not None:
        scale = float(arclength(profile)[-1])

        def ext_ent(r):
            v = c * tf.exterior(r)[0]
            return 0.0 if v == 0 else v * v * math.log(v * v)

        ent += _exterior_integral(profile, ext_ent, scale)
        grad += _exterior_integral(profile, lambda r: (c * tf.exterior(r)[1]) ** 2, scale)
    if not np.isfinite(ent):
        raise ValueError(f"u^2 log u^2 is not integrable for {tf.label!r}")
    return u, ent, grad


def log_sobolev_check(profile, tf, C, taus=None):
    """Smallest ``RHS(tau) - LHS`` of the log-Sobolev inequality over a tau grid.

    The default grid is 121 log-spaced points on ``[1e-3, 1e3]`` plus the
    exact minimiser ``tau = n / (8 int|grad u|^2)`` of the right side.
    """
    n = profile.n
    if not C > 0:
        raise ValueError("Sobolev constant must be positive")
    _, lhs, grad = _entropy_parts(profile, tf, _dv_weights(profile))
    if taus is None:
        taus = np.geomspace(1e-3, 1e3, 121)
        if grad > 0:
            taus = np.append(taus, n / (8.0 * grad))
    taus = np.asarray(taus, dtype=float)
    rhs = (4.0 * taus * grad - 0.5 * n * np.log(taus)
           + 0.5 * n * (math.log(C) + math.log(n / 8.0) - 1.0))
    return float(np.min(rhs) - lhs)


def w_functional(profile, tf, tau, curv=None):
    """Entropy ``W(g, u, tau)`` of the unit-L2 normalisation of ``u``."""
    n = profile.n
    if not tau > 0:
        raise ValueError("tau must be positive")
    c = curv or curvature(profile)
    dvw = _dv_weights(profile)
    u, ent, grad = _entropy_parts(profile, tf, dvw)
    ru2 = float(np.dot(dvw, c.R * u ** 2))
    return tau * (4.0 * grad + ru2) - ent - n - 0.5 * n * math.log(4.0 * math.pi * tau)


@dataclass
class MuStarResult:
    value: float
    witness: np.ndarray
    converged: bool
    initial_values: list
    iterations: int


class _WStar:
    """Discrete ``W*`` on nodal values with the unit-mass constraint.

    Piecewise-linear elements in arclength: the Dirichlet energy is summed
    over cells with midpoint cell volumes, and mass, scalar-curvature and
    entropy terms use the lumped nodal volumes. Unlike wide centred
    stencils this energy has no grid-scale null modes, so the minimiser
    cannot lower the entropy term with oscillations.
    """

    def __init__(self, profile, sigma, curv):
        n = profile.n
        s, f, phi = profile.s, profile.f, profile.phi
        r = arclength(profile)
        ds = np.diff(s)
        vol = sphere_area(n - 1) * ds * 0.5 * (phi[1:] + phi[:-1]) \
            * (0.5 * (f[1:] + f[:-1])) ** (n - 1)
        w = np.zeros(len(s))
        w[:-1] += 0.5 * vol
        w[1:] += 0.5 * vol
        dr = np.diff(r)
        N = len(s)
        G = sp.diags([-1.0 / dr, 1.0 / dr], [0, 1], shape=(N - 1, N))
        self.sigma = sigma
        self.w = w
        self.R = curv.R
        self.K = (G.T @ sp.diags(vol) @ G).tocsc()
        self.A = (sp.diags(w) + 4.0 * sigma * self.K).tocsc()
        self.solve = spla.factorized(self.A)

    def mass(self, u):
        return float(np.dot(self.w, u * u))

    def normalize(self, u):
        return u / math.sqrt(self.mass(u))

    def value(self, u):
        return float(self.sigma * (4.0 * np.dot(u, self.K @ u) + np.dot(self.w, self.R * u * u))
                     - np.dot(self.w, _xlogx2(u)))

    def grad(self, u):
        u2 = np.maximum(u * u, 1e-300)
        return (self.sigma * (8.0 * (self.K @ u) + 2.0 * self.w * self.R * u)
                - self.w * u * (2.0 * np.log(u2) + 2.0))


def _minimize_wstar(ws, u0, maxiter, tol):
    u = ws.normalize(u0)
    val = ws.value(u)
    for it in range(1, maxiter + 1):
        g = ws.grad(u)
        d = -ws.solve(g)
        nrm = ws.w * u
        an = ws.solve(nrm)
        d -= (np.dot(nrm, d) / np.dot(nrm, an)) * an
        slope = float(np.dot(g, d))
        if slope >= 0:
            return u, val, True, it
        step = 1.0
        while step > 1e-10:
            cand = ws.normalize(u + step * d)
            cv = ws.value(cand)
            if cv <= val + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return u, val, True, it
        done = val - cv <= tol * (1.0 + abs(val))
        u, val = cand, cv
        if done:
            return u, val, True, it
    return u, val, False, maxiter


def mu_star_estimate(profile, sigma, seed=0, widths=(0.5, 1.0, 2.0), maxiter=200,
                     tol=1e-10, curv=None):
    """Upper bound on ``mu*(g, sigma) = inf int[sigma(4|grad u|^2 + R u^2) - u^2 log u^2]``.

    Preconditioned projected gradient descent on nodal values, started from
    Gaussians ``u^2 ~ exp(-r^2 / (4 sigma c))`` for each ``c`` in ``widths``
    and from one seeded perturbation of the middle start. The returned value
    is the smallest of all optimised and initial values.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    c = curv or curvature(profile)
    ws = _WStar(profile, sigma, c)
    r = arclength(profile)
    rng = np.random.default_rng(seed)
    starts = [np.exp(-r ** 2 / (8.0 * sigma * k)) for k in widths]
    mid = starts[len(starts) // 2]
    noise = np.convolve(rng.standard_normal(len(r)), np.ones(9) / 9.0, mode="same")
    starts.append(mid * (1.0 + 0.2 * noise))
    best_v, best_u, conv, iters = np.inf, None, True, 0
    inits = []
    for u0 in starts:
        u0 = ws.normalize(u0)
        v0 = ws.value(u0)
        inits.append(v0)
        u, v, ok, it = _minimize_wstar(ws, u0, maxiter, tol)
        iters += it
        for cand_u, cand_v, cand_ok in ((u0, v0, True), (u, v, ok)):
            if cand_v < best_v:
                best_v, best_u, conv = cand_v, cand_u, cand_ok
    return MuStarResult(value=float(best_v), witness=best_u, converged=conv,
                        initial_values=inits, iterations=iters)


def entropy_mu(mu_star, sigma, n):
    """``mu(g, sigma) = mu*(g, sigma) - n - (n/2) log(4 pi sigma)``."""
    return mu_star - n - 0.5 * n * math.log(4.0 * math.pi * sigma)


# ----------------------------------------------------------------------------
# minimal spheres and neck energies

def _fr_spline(profile):
    r = arclength(profile)
    fr = radial_derivatives(profile)[0]
    re = np.concatenate([-r[:0:-1], r])
    fe = np.concatenate([fr[:0:-1], fr])
    return r, fr, CubicSpline(re, fe)


def detect_minimal_hyperspheres(profile, touch_tol=1e-6):
    """Arclength radii where ``d f / d r`` changes sign or touches zero.

    Sign changes are bracketed on the nodes and refined with Brent's method
    on a cubic spline of the nodal derivative. A pair of sign changes closer
    than three node spacings is merged into a single touching zero, as is
    any interior local minimum of the spline with value below
    ``touch_tol * max|f_r|``.
    """
    r, fr, spl = _fr_spline(profile)
    scale = float(np.max(np.abs(fr)))
    hits = []
    for i in np.nonzero(np.sign(fr[1:]) * np.sign(fr[:-1]) < 0)[0]:
        hits.append(brentq(spl, r[i], r[i + 1], xtol=1e-14 * max(r[i + 1], 1.0),
                           rtol=4 * np.finfo(float).eps))
    for x in spl.derivative().roots(extrapolate=False):
        if 0 < x < r[-1] and spl(x, 2) > 0 and abs(spl(x)) <= touch_tol * scale:
            hits.append(float(x))
    hits.sort()
    out = []
    i = 0
    while i < len(hits):
        j = i
        while j + 1 < len(hits):
            k = np.searchsorted(r, hits[j + 1])
            gap = 3.0 * (r[min(k, len(r) - 1)] - r[max(k - 1, 0)])
            if hits[j + 1] - hits[i] <= gap:
                j += 1
            else:
                break
        out.append(float(np.mean(hits[i:j + 1])) if j > i else hits[i])
        i = j + 1
    return out


def e1_e2(profile, R_ms, m=2001, curv=None):
    """Neck energies of the profile restricted to ``[0, R_ms]``.

    The restriction is rescaled to the unit interval, ``g(x) = f(R x) / R``,
    and ``E1 = int |nu1|^(n/2) g^(n-1)``, ``E2 = int |nu2|^(n/2) g^(n-1)`` are
    evaluated by Simpson on ``m`` uniform points, with curvature taken from
    :func:`curvature` and interpolated by cubic splines in ``r``.
    """
    if R_ms is None or not R_ms > 0:
        raise ValueError("no minimal-sphere radius: neck energies are undefined")
    n = profile.n
    c = curv or curvature(profile)
    r = c.r
    if R_ms > r[-1]:
        raise ValueError("minimal-sphere radius lies outside the grid")
    x = np.linspace(0.0, 1.0, m)
    rr = R_ms * x
    fs = CubicSpline(r, profile.f)
    g = fs(rr) / R_ms
    nu1 = CubicSpline(r, c.nu1)(rr) * R_ms ** 2
    nu2 = CubicSpline(r, c.nu2)(rr) * R_ms ** 2
    w = simpson_weights(x)
    gp = g ** (n - 1)
    return (float(np.dot(w, np.abs(nu1) ** (n / 2.0) * gp)),
            float(np.dot(w, np.abs(nu2) ** (n / 2.0) * gp)))


def cgb_residual(profile, curv=None):
    """``-1/2 int |E|^2 + 1/24 int R^2`` in dimension 4 (Weyl term vanishes).

    Returns a dict with the residual, both integrals, the residual relative
    to the larger one, and a warning when the declared decay order is too
    slow for the boundary term to vanish.
    """
    if profile.n != 4:
        raise ValueError("the Gauss-Bonnet residual is defined for n = 4 only")
    c = curv or curvature(profile)
    ie2 = volume_integral(profile, c.e2)
    ir2 = volume_integral(profile, c.R ** 2)
    res = -0.5 * ie2 + ir2 / 24.0
    big = max(ie2, ir2 / 24.0)
    warn = None
    a, t = profile.tail
    order = t if np.isfinite(t) else np.inf
    if min(order, profile.tau) < 1.0:
        warn = "decay order below 1: boundary term may not vanish"
    return dict(residual=float(res), int_e2=float(ie2), int_r2=float(ir2),
                relative=float(abs(res) / big) if big > 0 else 0.0, warning=warn)


@dataclass
class AdmMass:
    mass: float
    coefficient: float
    residual: float
    reliable: bool


def adm_mass(profile, max_residual=1e-4):
    """Mass from the tail ``f / rho = 1 + a rho^-(n-2) + O(rho^-2(n-2))``.

    ``rho`` is the isotropic radius. The fit uses ``f / rho_hat = C + b x + c x^2``
    with ``x = rho_hat^-(n-2)`` on the outer third; then ``a = b C^(n-3)``.
    The returned mass is ``(n - 2) a``, which equals ``m`` for the slice
    with conformal factor ``(1 + m / (2 rho^(n-2)))^(4/(n-2))``.
    """
    n = profile.n
    if n < 3:
        raise ValueError("ADM mass needs n >= 3")
    rho = isotropic_radius(profile)
    sel = _outer(profile)
    rh = rho[sel] / rho[sel][0]
    y = profile.f[sel] / rho[sel]
    x = rh ** (-(n - 2.0))
    A = np.stack([np.ones_like(x), x, x * x], 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - y))) / max(abs(coef[0]), 1e-300)
    C, b = coef[0], coef[1]
    b_abs = b * rho[sel][0] ** (n - 2.0)
    a = b_abs * C ** (n - 3.0)
    return AdmMass(mass=float((n - 2) * a), coefficient=float(a), residual=resid,
                   reliable=bool(resid <= max_residual))


# ----------------------------------------------------------------------------
# diagnostics

@dataclass
class DiagnosticsRow:
    t: float
    dt: float = float("nan")
    sup_rm: float = float("nan")
    t_sup_rm: float = float("nan")
    l_n2: float = float("nan")
    l_q: float = float("nan")
    chi: float = float("nan")
    sobolev_lb: float = float("nan")
    mu_star: float = float("nan")
    e1: float = float("nan")
    e2: float = float("nan")
    min_sphere: tuple = ()
    cgb: float = float("nan")
    mass: float = float("nan")
    keps_n2: float = float("nan")

    COLUMNS = ("t", "dt", "sup_rm", "t_sup_rm", "l_n2", "l_q", "chi", "sobolev_lb",
               "mu_star", "e1", "e2", "min_sphere", "cgb", "mass", "keps_n2")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def decay_q(n):
    """Exponent ``(n/2) n/(n-2)``."""
    return 0.5 * n * n / (n - 2.0)


def diagnostics(profile, t, dt=float("nan"), u_eps=None, sobolev=True, mu_sigma=None,
                battery=None, mu_seed=0):
    """One :class:`DiagnosticsRow` for the profile at time ``t``."""
    n = profile.n
    c = curvature(profile)
    rm = np.sqrt(np.maximum(c.rm2, 0.0))
    row = DiagnosticsRow(t=float(t), dt=float(dt))
    row.sup_rm = float(rm.max())
    row.t_sup_rm = row.t * row.sup_rm
    row.l_n2 = lp_curvature_norm(profile, n / 2.0, c)
    row.l_q = lp_curvature_norm(profile, decay_q(n), c)
    if sobolev:
        est = sobolev_estimate(profile, battery)
        row.sobolev_lb = est.lower_bound
        row.chi = est.lower_bound * row.l_n2
    if mu_sigma is not None:
        row.mu_star = mu_star_estimate(profile, mu_sigma, seed=mu_seed, curv=c).value
    spheres = detect_minimal_hyperspheres(profile)
    row.min_sphere = tuple(spheres)
    if spheres:
        row.e1, row.e2 = e1_e2(profile, spheres[0], curv=c)
    if n == 4:
        row.cgb = cgb_residual(profile, c)["residual"]
    row.mass = adm_mass(profile).mass
    if u_eps is not None:
        k = np.sqrt(c.rm2 + u_eps ** 2)
        row.keps_n2 = volume_integral(profile, k ** (n / 2.0)) ** (2.0 / n)
    return row


def evolution_c2(alpha, n):
    """Reaction constant ``16 alpha + sqrt(n(n-1)/2)``.

    Uses ``d|Rm|^2/dt <= Lap|Rm|^2 - 2|grad Rm|^2 + 16|Rm|^3`` in the
    orthonormal-frame norm and ``|R| <= sqrt(n(n-1)/2)|Rm|`` for the volume
    form.
    """
    return 16.0 * alpha + math.sqrt(n * (n - 1) / 2.0)


def evolution_budget(snapshots, alpha):
    """Budget terms of ``int |Rm|^(2 alpha)`` along sampled snapshots.

    ``snapshots`` is a sequence of ``(t, profile)``. Returns one dict per
    sample with ``t``, ``ddt`` (centred difference; one-sided at the ends),
    ``grad`` = ``int |grad |Rm|^alpha|^2``, ``react`` = ``int |Rm|^(2 alpha + 1)``
    and ``ok`` for ``ddt <= C2 react``.
    """
    if len(snapshots) < 3:
        raise ValueError("need at least three samples")
    n = snapshots[0][1].n
    if alpha < max(1.0, n / 4.0):
        raise ValueError("alpha must be at least max(1, n/4)")
    ts = np.array([t for t, _ in snapshots], dtype=float)
    I, G, K = [], [], []
    for _, p in snapshots:
        c = curvature(p)
        rm = np.sqrt(np.maximum(c.rm2, 0.0))
        I.append(volume_integral(p, rm ** (2 * alpha)))
        ra = rm ** alpha
        dra = diff(p.s, ra, +1)[0] / p.phi
        G.append(volume_integral(p, dra ** 2))
        K.append(volume_integral(p, rm ** (2 * alpha + 1)))
    I = np.array(I)
    ddt = np.gradient(I, ts)
    c2 = evolution_c2(alpha, n)
    return [dict(t=float(t), integral=float(i), ddt=float(d), grad=float(g), react=float(k),
                 ok=bool(d <= c2 * k + 1e-12 * abs(i)))
            for t, i, d, g, k in zip(ts, I, ddt, G, K)]


def decay_exponents(n):
    """Envelope exponents ``(-2(n-2)/n, 4(n-2)/n^2)`` for ``|Rm|^2``."""
    return -2.0 * (n - 2.0) / n, 4.0 * (n - 2.0) / n ** 2


@dataclass
class DecayReport:
    n: int
    q: float
    exponents: tuple
    slope_sup: float
    slope_lq: float
    t_sup_decreasing: bool
    envelope_ok: bool
    C1: float
    C2: float
    inconclusive: bool
    note: str = ""


def decay_report(rows, n, fit_window=None):
    """Decay summary of a diagnostics series.

    Slopes are least-squares fits of ``log sup|Rm|`` and ``log l_q`` against
    ``log t`` over the final decade. ``t sup|Rm|`` must be non-increasing over
    that decade. Envelope constants are the smallest ``C1, C2`` for which
    each branch alone bounds ``sup|Rm|^2`` on ``fit_window`` (default: the
    samples with ``t`` in the decade before the final one); the envelope is
    then checked on all later samples.
    """
    t = np.array([r.t for r in rows], dtype=float)
    sup = np.array([r.sup_rm for r in rows], dtype=float)
    lq = np.array([r.l_q for r in rows], dtype=float)
    a1, a2 = decay_exponents(n)
    q = decay_q(n)
    pos = t > 0
    if not np.any(pos) or np.all(sup[pos] == 0):
        return DecayReport(n, q, (a1, a2), 0.0, 0.0, True, True, 0.0, 0.0, False,
                           "identically flat series")
    t_end = t.max()
    last = pos & (t >= t_end / 10.0)
    inconclusive = t[pos].min() > t_end / 10.0 or last.sum() < 3
    lt = np.log(t[last])
    slope_sup = float(np.polyfit(lt, np.log(sup[last]), 1)[0]) if last.sum() >= 2 else float("nan")
    slope_lq = float(np.polyfit(lt, np.log(lq[last]), 1)[0]) if last.sum() >= 2 else float("nan")
    tsr = t[last] * sup[last]
    decreasing = bool(np.all(np.diff(tsr) <= 1e-12 * tsr.max()))
    if fit_window is None:
        fit_window = (t_end / 100.0, t_end / 10.0)
    win = pos & (t >= fit_window[0]) & (t <= fit_window[1])
    if not np.any(win):
        win = pos & (t <= fit_window[1])
    if not np.any(win):
        return DecayReport(n=n, q=q, exponents=(a1, a2), slope_sup=slope_sup,
                           slope_lq=slope_lq, t_sup_decreasing=decreasing, envelope_ok=False,
                           C1=float("nan"), C2=float("nan"), inconclusive=True,
                           note="no samples in the envelope fit window")
    s2 = sup ** 2
    C1 = float(np.max(s2[win] / t[win] ** a1))
    C2 = float(np.max(s2[win] / t[win] ** a2))
    later = pos & (t > t[win].max())
    env = np.maximum(C1 * t[later] ** a1, C2 * t[later] ** a2)
    ok = bool(np.all(s2[later] <= env * (1.0 + 1e-9)))
    return DecayReport(n=n, q=q, exponents=(a1, a2), slope_sup=slope_sup, slope_lq=slope_lq,
                       t_sup_decreasing=decreasing, envelope_ok=ok, C1=C1, C2=C2,
                       inconclusive=bool(inconclusive))


# ----------------------------------------------------------------------------
# monotone monitors

log = logging.getLogger(__name__)


@dataclass
class MonotoneReport:
    ok: bool
    violations: list
    slack: np.ndarray


def monotone_check(t, values, dt, direction=-1, quad_tol=1e-8, scale=10.0):
    """Check a sampled series for monotonicity up to a discretization slack.

    ``direction`` is -1 for non-increasing and +1 for non-decreasing. The
    allowed wrong-way change between consecutive samples is
    ``quad_tol * max|v| + scale * dt_i * max|dv/dt|`` with ``dt_i`` the flow
    step recorded at the later sample and the rate taken from the series.
    Samples with non-finite values are skipped.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), t.shape)
    keep = np.isfinite(t) & np.isfinite(v)
    t, v, dt = t[keep], v[keep], dt[keep]
    if len(v) < 2:
        return MonotoneReport(True, [], np.zeros(0))
    ht = np.diff(t)
    if np.any(ht <= 0):
        raise ValueError("sample times must increase")
    dv = np.diff(v)
    rate = float(np.max(np.abs(dv / ht)))
    step = np.where(np.isfinite(dt[1:]), dt[1:], ht)
    slack = quad_tol * float(np.max(np.abs(v))) + scale * step * rate
    wrong = -direction * dv
    bad = np.nonzero(wrong > slack)[0]
    violations = [dict(t=float(t[i + 1]), change=float(wrong[i]), slack=float(slack[i]))
                  for i in bad]
    return MonotoneReport(not violations, violations, slack)


def entropy_monitor(rows, horizon, n, slack=1e-3):
    """Soft monitor for ``mu = entropy_mu(mu_star, L - t)`` along a run.

    The stored ``mu_star`` values are optimizer upper bounds, so a drop of
    ``mu`` is only reported as a violation when it exceeds ``slack``; every
    drop is logged. Returns ``(mu series, list of violations)``.
    """
    mus, out = [], []
    prev = None
    for r in rows:
        if not math.isfinite(r.mu_star):
            continue
        mu = entropy_mu(r.mu_star, horizon - r.t, n)
        mus.append((r.t, mu))
        if prev is not None and mu < prev[1]:
            drop = prev[1] - mu
            log.info("entropy drop %.3g between t=%.4g and t=%.4g", drop, prev[0], r.t)
            if drop > slack:
                log.warning("entropy monitor violation at t=%.4g: drop %.3g > %.3g",
                            r.t, drop, slack)
                out.append(dict(t=r.t, drop=drop))
        prev = (r.t, mu)
    return mus, out


ONE_SIDEDNESS_NOTE = ("sobolev_lb is a battery supremum and so a lower bound on the "
                      "Sobolev constant; chi therefore underestimates the true ratio")


def certificate(profile, threshold, battery=None):
    """Pinching certificate: ``chi`` against a user threshold."""
    est = sobolev_estimate(profile, battery)
    l_n2 = lp_curvature_norm(profile, profile.n / 2.0)
    chi = est.lower_bound * l_n2
    return dict(chi=chi, sobolev_lb=est.lower_bound, l_n2=l_n2, threshold=float(threshold),
                verdict="pass" if chi < threshold else "fail",
                one_sidedness_note=ONE_SIDEDNESS_NOTE)
