r"""Rotationally symmetric metrics on R^n as discrete radial profiles.

A profile stores the warped-product metric

    g = phi(s)^2 ds^2 + f(s)^2 dsigma^2

on a fixed coordinate grid ``0 = s_0 < s_1 < ... < s_M``. Arclength is
``r(s) = int_0^s phi``, accumulated cell by cell. Curvature comes from
derivatives of ``f`` in ``r``, taken on the arclength nodes themselves,
through the two sectional curvatures

    nu1 = (1 - f_r^2) / f^2        (2-planes inside the spheres)
    nu2 = -f_rr / f                 (2-planes containing the radial direction)

with multiplicities ``(n-1)(n-2)/2`` and ``n-1``. :func:`riemann_oracle`
recomputes the same field from coordinate Christoffel symbols of the full
n-dimensional metric and is used to check every derived formula.

|Rm|^2 uses the orthonormal-frame norm ``sum_{ijkl} R_{ijkl}^2``.
"""

import json
from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import curve_fit

from ._fd import diff

__all__ = [
    "ProfileError",
    "Grid",
    "RadialProfile",
    "CurvatureField",
    "ValidationReport",
    "FAMILIES",
    "make_profile",
    "arclength",
    "cell_rule",
    "cell_lengths",
    "curvature",
    "riemann_oracle",
    "scale_metric",
    "regrid",
    "validate",
    "isotropic_radius",
    "fit_tail",
    "sphere_area",
    "profile_to_json",
    "profile_from_json",
    "dumps",
]

# Nodes 0..ORIGIN_NODES are replaced by the regular limit.
ORIGIN_NODES = 3


class ProfileError(ValueError):
    """Raised for parameter sets that do not describe a valid profile."""


def sphere_area(k):
    """Area of the unit k-sphere."""
    return 2.0 * pi ** ((k + 1) / 2.0) / gamma((k + 1) / 2.0)


@dataclass(frozen=True)
class Grid:
    """Coordinate grid on ``[0, s_max]`` with ``M + 1`` nodes.

    ``kind='graded'`` clusters nodes towards the origin with
    ``s = s_max sinh(beta x) / sinh(beta)``, ``x`` uniform on [0, 1].
    """

    s_max: float
    M: int
    kind: str = "uniform"
    beta: float = 2.0

    def nodes(self):
        x = np.linspace(0.0, 1.0, self.M + 1)
        if self.kind == "uniform":
            s = self.s_max * x
        elif self.kind == "graded":
            s = self.s_max * np.sinh(self.beta * x) / np.sinh(self.beta)
        else:
            raise ProfileError(f"unknown grid kind {self.kind!r}")
        s[0] = 0.0
        return s


def _as_nodes(grid):
    if isinstance(grid, Grid):
        return grid.nodes()
    if isinstance(grid, dict):
        return Grid(**grid).nodes()
    return np.array(grid, dtype=float)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Discrete warped-product metric; arrays are read-only after creation."""

    n: int
    s: np.ndarray
    f: np.ndarray
    phi: np.ndarray
    tau: float
    tail: tuple = (0.0, float("inf"))
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        s, f, phi = _frozen(self.s), _frozen(self.f), _frozen(self.phi)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "phi", phi)
        if int(self.n) != self.n or self.n < 2:
            raise ProfileError(f"dimension must be an integer >= 2, got {self.n}")
        if not (s.shape == f.shape == phi.shape) or s.ndim != 1:
            raise ProfileError("s, f, phi must be 1-d arrays of equal length")
        if len(s) < 9:
            raise ProfileError("need at least 9 grid nodes")
        if s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise ProfileError("grid must start at 0 and be strictly increasing")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(phi))):
            raise ProfileError("f and phi must be finite")
        if f[0] != 0.0:
            raise ProfileError("f must vanish at the origin")
        if np.any(f[1:] <= 0):
            raise ProfileError("f must be positive away from the origin")
        if np.any(phi <= 0):
            raise ProfileError("phi must be positive")
        if not self.tau > 0:
            raise ProfileError("decay order tau must be positive")

    @property
    def M(self):
        return len(self.s) - 1

    def replace(self, **kw):
        d = dict(n=self.n, s=self.s, f=self.f, phi=self.phi, tau=self.tau,
                 tail=self.tail, family=self.family, params=self.params)
        d.update(kw)
        return RadialProfile(**d)


@dataclass(frozen=True, eq=False)
class CurvatureField:
    r: np.ndarray
    nu1: np.ndarray
    nu2: np.ndarray
    R: np.ndarray
    lam_rad: np.ndarray
    lam_sph: np.ndarray
    rm2: np.ndarray
    e2: np.ndarray

    FIELDS = ("nu1", "nu2", "R", "lam_rad", "lam_sph", "rm2", "e2")

    @property
    def rm(self):
        return np.sqrt(self.rm2)

    def sup_diff(self, other, fields=None):
        """Largest nodewise difference over the given fields."""
        fields = fields or self.FIELDS
        return max(float(np.max(np.abs(getattr(self, k) - getattr(other, k))))
                   for k in fields)


# ----------------------------------------------------------------------------
# families

def _gauss(x, w):
    return np.exp(-(x / w) ** 2)


def _even_bump(r, r0, w):
    """Smooth even bump centred on the shell ``|r| = r0``, vanishing at 0."""
    return _gauss(r - r0, w) + _gauss(r + r0, w) - 2.0 * _gauss(r0, w) * _gauss(r, w)


def _smooth_step(x):
    """C-infinity step: 1 for x <= 0, 0 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
        b = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    return a / (a + b)


def schwarzschild_throat(m, n):
    """Isotropic radius of the Schwarzschild throat, ``(m/2)^(1/(n-2))``."""
    return (m / 2.0) ** (1.0 / (n - 2))


def schwarzschild_factor(rho, m, n, cap=0.8, core=0.5):
    r"""Conformal factor ``psi^(4/(n-2))`` of the capped Schwarzschild slice.

    ``psi = 1 + m / (2 rho~^(n-2))`` where ``rho~ = rho`` outside
    ``cap * rho_throat`` and is smoothly bent to ``core * rho_throat`` at
    the origin, which removes the second asymptotic end.
    """
    rt = schwarzschild_throat(m, n)
    rho = np.asarray(rho, dtype=float)
    chi = _smooth_step(np.abs(rho) / (cap * rt))
    rt_ = np.sqrt(rho ** 2 + (core * rt) ** 2 * chi)
    psi = 1.0 + m / (2.0 * rt_ ** (n - 2))
    return psi ** (4.0 / (n - 2))


def _family_flat(s, n):
    return s.copy(), np.ones_like(s), {}


def _family_gaussian_bump(s, n, a, r0, w):
    if a <= -1.0:
        raise ProfileError("need a > -1 so that 1 + a stays positive at the shell")
    if w <= 0 or r0 < 0:
        raise ProfileError("need w > 0 and r0 >= 0")
    f = s * (1.0 + a * _even_bump(s, r0, w))
    return f, np.ones_like(s), dict(a=a, r0=r0, w=w)


def _family_schwarzschild_slice(s, n, m, cap=0.8, core=0.5):
    if n < 3:
        raise ProfileError("schwarzschild_slice needs n >= 3")
    if m <= 0:
        raise ProfileError("mass must be positive")
    if not 0 < core < cap < 1:
        raise ProfileError("need 0 < core < cap < 1")
    c = np.sqrt(schwarzschild_factor(s, m, n, cap, core))
    return c * s, c, dict(m=m, cap=cap, core=core)


def _family_conformal_bump(s, n, u0, r0, w):
    u = u0 * (_gauss(s - r0, w) + _gauss(s + r0, w))
    if r0 == 0:
        u = u0 * _gauss(s, w)
    e = np.exp(u)
    return e * s, e, dict(u0=u0, r0=r0, w=w)


def _family_neck(s, n, params=None, theta=None):
    from .c1_search import NeckProfileParams
    if params is None:
        params = NeckProfileParams(np.asarray(theta, dtype=float))
    elif not isinstance(params, NeckProfileParams):
        params = NeckProfileParams(np.asarray(params, dtype=float))
    f = params.extended_profile(s)
    return f, np.ones_like(s), dict(theta=[float(x) for x in params.theta])


FAMILIES = {
    "flat": (_family_flat, "flat R^n, f = r"),
    "gaussian_bump": (_family_gaussian_bump,
                      "f = r (1 + a B(r)), B a Gaussian shell at r0 of width w"),
    "schwarzschild_slice": (_family_schwarzschild_slice,
                            "isotropic Schwarzschild slice with a smooth core"),
    "neck": (_family_neck, "collar neck g on [0,1], mirrored, then a flat tail"),
    "conformal_bump": (_family_conformal_bump,
                       "g = exp(2u)|dx|^2 with a Gaussian shell u"),
}


def make_profile(family, n, grid, tau=None, **params):
    """Instantiate a catalog profile on ``grid``.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    n : int
        Dimension, at least 2.
    grid : Grid, dict or array
        Coordinate nodes.
    tau : float, optional
        Declared AF order; defaults to ``n - 2`` (1 for n = 2).
    """
    if family not in FAMILIES:
        raise ProfileError(f"unknown family {family!r}")
    if int(n) != n or n < 2:
        raise ProfileError(f"dimension must be an integer >= 2, got {n}")
    s = _as_nodes(grid)
    builder = FAMILIES[family][0]
    with np.errstate(all="ignore"):
        f, phi, used = builder(s, n, **params)
    f = np.asarray(f, dtype=float)
    f[0] = 0.0
    if tau is None:
        tau = float(max(n - 2, 1))
    prof = RadialProfile(n=n, s=s, f=f, phi=phi, tau=tau, family=family,
                         params=used)
    if n >= 3:
        prof = prof.replace(tail=fit_tail(prof))
    return prof


# ----------------------------------------------------------------------------
# basic operations

_RULES = {}
CELL_POINTS = 6


def cell_rule(s):
    """Banded weights ``(idx, w)`` for cell integrals of an even nodal field.

    Cell ``j`` integrates the quintic through the six nearest nodes exactly;
    nodes left of the centre are mirrored, since ``phi`` is even there.
    ``int_{s_j}^{s_{j+1}} v ds ~ sum(w[j] * v[idx[j]])``.
    """
    s = np.asarray(s, dtype=float)
    key = s.tobytes()
    rule = _RULES.get(key)
    if rule is not None:
        return rule
    m = len(s) - 1
    k = CELL_POINTS
    if m < k:
        raise ProfileError(f"need at least {k + 1} grid nodes")
    g = k // 2 - 1
    ext = np.concatenate([-s[g:0:-1], s])
    idx = np.zeros((m, k), dtype=int)
    w = np.zeros((m, k))
    mom = 1.0 / np.arange(1, k + 1)
    for j in range(m):
        nodes = np.arange(min(j - g, m - k + 1), min(j - g, m - k + 1) + k)
        H = s[j + 1] - s[j]
        V = np.vander((ext[nodes + g] - s[j]) / H, k, increasing=True).T
        w[j] = np.linalg.solve(V, mom) * H
        idx[j] = np.abs(nodes)
    if len(_RULES) > 32:
        _RULES.clear()
    _RULES[key] = rule = (idx, w)
    return rule


def cell_lengths(s, phi):
    """Cell arclengths ``int phi ds`` under :func:`cell_rule`.

    The rule acts on ``phi`` minus its left-node value, so a constant lapse
    gives ``phi ds`` without roundoff.
    """
    idx, w = cell_rule(s)
    phi = np.asarray(phi, dtype=float)
    base = phi[:-1]
    return np.diff(s) * base + np.sum(w * (phi[idx] - base[:, None]), axis=1)


def arclength(profile):
    """Arclength ``r(s) = int_0^s phi`` accumulated from :func:`cell_lengths`.

    The flow rebuilds ``f`` from the same cell lengths, so ``f - r`` stays
    free of grid-scale noise carried by the lapse.
    """
    s, phi = profile.s, profile.phi
    if np.all(phi == phi[0]):
        return phi[0] * s
    r = np.zeros_like(s)
    r[1:] = np.cumsum(cell_lengths(s, phi))
    return r


def _regularize_origin(r, nu1, nu2, k=ORIGIN_NODES):
    """Replace nodes ``0..k`` by a joint even fit with ``nu1(0) = nu2(0)``."""
    sel = slice(k + 1, k + 5)
    rr = r[sel] / r[k + 4]
    x = rr ** 2
    z = np.zeros_like(x)
    o = np.ones_like(x)
    A = np.block([[o[:, None], np.stack([x, x ** 2, x ** 3], 1), np.stack([z, z, z], 1)],
                  [o[:, None], np.stack([z, z, z], 1), np.stack([x, x ** 2, x ** 3], 1)]])
    b = np.concatenate([nu1[sel], nu2[sel]])
    c = np.linalg.lstsq(A, b, rcond=None)[0]
    xe = (r[:k + 1] / r[k + 4]) ** 2
    nu1 = nu1.copy()
    nu2 = nu2.copy()
    nu1[:k + 1] = c[0] + c[1] * xe + c[2] * xe ** 2 + c[3] * xe ** 3
    nu2[:k + 1] = c[0] + c[4] * xe + c[5] * xe ** 2 + c[6] * xe ** 3
    return nu1, nu2


def _derived(n, r, nu1, nu2):
    lam_rad = (n - 1) * nu2
    lam_sph = nu2 + (n - 2) * nu1
    R = lam_rad + (n - 1) * lam_sph
    rm2 = 2.0 * (n - 1) * (n - 2) * nu1 ** 2 + 4.0 * (n - 1) * nu2 ** 2
    e2 = (lam_rad - R / n) ** 2 + (n - 1) * (lam_sph - R / n) ** 2
    return CurvatureField(r=r, nu1=nu1, nu2=nu2, R=R, lam_rad=lam_rad,
                          lam_sph=lam_sph, rm2=rm2, e2=e2)


def radial_derivatives(profile):
    """Arclength derivatives ``(f_r, f_rr, f_r - 1)`` at every node.

    ``f - r`` is differenced directly against the arclength nodes ``r``.
    Stencil weights adapt to any node spacing, so a rough lapse only moves
    the nodes and never enters the difference quotients; a flat profile in
    any gauge gives ``f_r = 1`` and ``f_rr = 0`` to rounding.
    """
    r = arclength(profile)
    wr, frr = diff(r, profile.f - r, -1)
    return 1.0 + wr, frr, wr


def _origin_limit(r, nu1, nu2):
    """Replace only node 0 by the even extrapolation through nodes 1 and 2."""
    a, b = r[1] ** 2, r[2] ** 2
    v = 0.5 * ((b * nu1[1] - a * nu1[2]) + (b * nu2[1] - a * nu2[2])) / (b - a)
    nu1 = nu1.copy()
    nu2 = nu2.copy()
    nu1[0] = nu2[0] = v
    return nu1, nu2


def sectional(profile, origin="fit"):
    """Sectional curvatures ``(nu1, nu2)`` with the chosen origin treatment.

    ``origin="fit"`` replaces nodes ``0..3`` by a joint even least-squares
    fit, which is the most accurate choice for static evaluation.
    ``origin="limit"`` keeps the raw quotients at nodes ``>= 1`` and only
    fills node 0 from nodes 1 and 2. ``origin=None`` leaves node 0 as NaN.
    """
    f = profile.f
    _, frr, wr = radial_derivatives(profile)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu1 = -wr * (2.0 + wr) / f ** 2
        nu2 = -frr / f
    if origin == "fit":
        nu1, nu2 = _regularize_origin(arclength(profile), nu1, nu2)
    elif origin == "limit":
        nu1, nu2 = _origin_limit(arclength(profile), nu1, nu2)
    elif origin is not None:
        raise ValueError(f"unknown origin treatment {origin!r}")
    return nu1, nu2


def curvature(profile, origin="fit"):
    """Sectional curvatures and derived curvature quantities at every node."""
    nu1, nu2 = sectional(profile, origin)
    return _derived(profile.n, arclength(profile), nu1, nu2)


# ----------------------------------------------------------------------------
# coordinate oracle

def _sphere_factors(n, theta):
    """Angular metric factors h_k and their exact first/second derivatives."""
    k = n - 1
    h = np.ones(k)
    for i in range(1, k):
        h[i] = h[i - 1] * np.sin(theta[i - 1]) ** 2
    cot = 1.0 / np.tan(theta)
    dh = np.zeros((k, k))            # dh[j, i] = d h_i / d theta_j
    ddh = np.zeros((k, k, k))        # ddh[j, l, i]
    for i in range(k):
        for j in range(i):
            dh[j, i] = 2.0 * cot[j] * h[i]
            for l in range(i):
                if l == j:
                    ddh[j, l, i] = (4.0 * cot[j] ** 2 - 2.0 / np.sin(theta[j]) ** 2) * h[i]
                else:
                    ddh[j, l, i] = 4.0 * cot[j] * cot[l] * h[i]
    return h, dh, ddh


def riemann_oracle(profile, theta=None):
    r"""Curvature from the coordinate Riemann tensor of the full metric.

    Works in coordinates ``(s, theta_1, ..., theta_{n-1})`` at a generic
    angular point. Radial derivatives of the metric components ``phi^2``
    and ``f^2 h_k(theta)`` are finite differences; angular derivatives of
    the round-sphere factors are exact. Lowered Riemann components follow
    from

        R_abcd = 1/2 (g_ad,bc + g_bc,ad - g_ac,bd - g_bd,ac)
                 + g_ef (G^e_bc G^f_ad - G^e_bd G^f_ac),

    which never uses the closed-form sectional curvatures.
    """
    n = profile.n
    s, f, phi = profile.s, profile.f, profile.phi
    k = n - 1
    if theta is None:
        theta = 1.1 - 0.07 * np.arange(k)
    h, dh, ddh = _sphere_factors(n, np.asarray(theta, dtype=float))
    N = len(s)
    g00 = phi ** 2
    ff = f ** 2
    d_g00, dd_g00 = diff(s, g00, +1)
    d_ff, dd_ff = diff(s, ff, +1)

    # diagonal metric components gd[c] and derivatives dg[a, c], ddg[a, b, c]
    gd = np.empty((n, N))
    gd[0] = g00
    gd[1:] = h[:, None] * ff[None, :]
    dg = np.zeros((n, n, N))
    dg[0, 0] = d_g00
    dg[0, 1:] = h[:, None] * d_ff
    dg[1:, 1:] = dh[:, :, None] * ff
    ddg = np.zeros((n, n, n, N))
    ddg[0, 0, 0] = dd_g00
    ddg[0, 0, 1:] = h[:, None] * dd_ff
    ddg[0, 1:, 1:] = dh[:, :, None] * d_ff
    ddg[1:, 0, 1:] = dh[:, :, None] * d_ff
    ddg[1:, 1:, 1:] = ddh[..., None] * ff

    with np.errstate(divide="ignore", invalid="ignore"):
        ginv = 1.0 / gd
        # full tensors (diagonal metric): G[a, b, c] = d_a g_bc
        eye = np.eye(n)
        G1 = np.einsum("acN,bc->abcN", dg, eye)          # d_a g_bc
        G2 = np.einsum("abdN,cd->abcdN", ddg, eye)       # d_a d_b g_cd
        # Christoffel of the first kind, Gam1[a, b, c] = Gamma_{c,ab}
        Gam1 = 0.5 * (G1 + np.einsum("bacN->abcN", G1) - np.einsum("cabN->abcN", G1))
        # second kind, Gam[e, a, b] = Gamma^e_ab
        Gam = np.einsum("abeN,eN->eabN", Gam1, ginv)
        # R_abcd with the Landau-Lifshitz sign (R_abab > 0 on spheres)
        Rm = 0.5 * (np.einsum("bcadN->abcdN", G2)        # g_ad,bc
                    + np.einsum("adbcN->abcdN", G2)      # g_bc,ad
                    - np.einsum("bdacN->abcdN", G2)      # g_ac,bd
                    - np.einsum("acbdN->abcdN", G2))     # g_bd,ac
        gG = gd[:, None, None, :] * Gam                   # g_ee Gamma^e_..
        Rm += (np.einsum("ebcN,eadN->abcdN", gG, Gam)
               - np.einsum("ebdN,eacN->abcdN", gG, Gam))

        ric = np.einsum("abcbN,bN->acN", Rm, ginv)        # Ric_ac = g^bd R_abcd
        ric_diag = np.einsum("aaN->aN", ric)
        Rs = np.einsum("aN,aN->N", ric_diag, ginv)
        rm2 = np.einsum("abcdN,aN,bN,cN,dN->N", Rm ** 2, ginv, ginv, ginv, ginv)
        ric2 = np.einsum("abN,aN,bN->N", ric ** 2, ginv, ginv)
        e2 = ric2 - Rs ** 2 / n
        nu2 = Rm[0, 1, 0, 1] * ginv[0] * ginv[1]
        if n >= 3:
            nu1 = Rm[1, 2, 1, 2] * ginv[1] * ginv[2]
        else:
            nu1 = np.full(N, np.nan)
        lam_rad = ric_diag[0] * ginv[0]
        lam_sph = ric_diag[1] * ginv[1]

    r = arclength(profile)
    out = dict(nu1=nu1, nu2=nu2, R=Rs, lam_rad=lam_rad, lam_sph=lam_sph,
               rm2=rm2, e2=e2)
    if n >= 3:
        # Regularize on the sectional pair, then rebuild the other fields
        # near the origin from the same regular limit.
        nu1r, nu2r = _regularize_origin(r, nu1, nu2)
        near = _derived(n, r[:ORIGIN_NODES + 1], nu1r[:ORIGIN_NODES + 1],
                        nu2r[:ORIGIN_NODES + 1])
        out["nu1"], out["nu2"] = nu1r, nu2r
        for key in ("R", "lam_rad", "lam_sph", "rm2", "e2"):
            v = out[key].copy()
            v[:ORIGIN_NODES + 1] = getattr(near, key)
            out[key] = v
    return CurvatureField(r=r, **out)


# ----------------------------------------------------------------------------
# transformations

def scale_metric(profile, lam):
    """Profile of ``lam^2 g`` on the same coordinate grid."""
    if not lam > 0:
        raise ProfileError("scale factor must be positive")
    a, t = profile.tail
    return profile.replace(f=lam * profile.f, phi=lam * profile.phi,
                           tail=(a * lam ** t if np.isfinite(t) else a, t))


def regrid(profile, grid):
    """Cubic-spline interpolation of ``f`` and ``phi`` onto a new grid.

    The spline of ``f`` is built on the odd extension and the spline of
    ``phi`` on the even extension through the origin.
    """
    s_new = _as_nodes(grid)
    s = profile.s
    if len(s_new) == len(s) and np.array_equal(s_new, s):
        return profile
    if s_new[0] != 0.0 or s_new[-1] > s[-1] * (1 + 1e-12):
        raise ProfileError("new grid must span a sub-interval [0, s'] of the old grid")
    se = np.concatenate([-s[:0:-1], s])
    fe = np.concatenate([-profile.f[:0:-1], profile.f])
    pe = np.concatenate([profile.phi[:0:-1], profile.phi])
    f = CubicSpline(se, fe)(s_new)
    phi = CubicSpline(se, pe)(s_new)
    f[0] = 0.0
    if np.any(f[1:] <= 0) or np.any(phi <= 0):
        raise ProfileError("interpolated profile lost positivity")
    out = profile.replace(s=s_new, f=f, phi=phi)
    if out.n >= 3:
        out = out.replace(tail=fit_tail(out))
    return out


# ----------------------------------------------------------------------------
# asymptotics and validation

def isotropic_radius(profile):
    r"""AF coordinate radius up to a constant factor.

    Every rotationally symmetric metric is conformally flat,
    ``g = e^{2u}(d rho^2 + rho^2 dsigma^2)``, with ``d log rho = phi ds / f``.
    The returned radius is normalised by ``rho = s`` at the first node.
    """
    s, f, phi = profile.s, profile.f, profile.phi
    y = phi[1:] / f[1:]
    if np.allclose(f, s) and np.all(phi == 1.0):
        return s.copy()
    sp = CubicSpline(s[1:], y).antiderivative()
    lr = sp(s[1:]) - sp(s[1])
    rho = np.empty_like(s)
    rho[0] = 0.0
    rho[1:] = s[1] * np.exp(lr)
    return rho


def _outer(profile, frac=1.0 / 3.0):
    m = profile.M
    return slice(int(np.floor((1 - frac) * m)), m + 1)


def fit_tail(profile):
    """Fit ``f = rho (1 + a rho^-tau)`` on the outer third in the AF radius.

    Returns ``(a, tau)``; an exactly flat tail gives ``(0.0, inf)``.
    """
    rho = isotropic_radius(profile)
    sel = _outer(profile)
    x, y = rho[sel], profile.f[sel] / rho[sel]
    if np.ptp(y) <= 1e-12 * np.abs(y).max():
        return (0.0, float("inf"))

    def model(x, C, b, t):
        return C + b * (x / x[0]) ** (-t)

    C0, b0 = y[-1], y[0] - y[-1]
    try:
        (C, b, t), _ = curve_fit(model, x, y, p0=(C0, b0, 1.0),
                                 bounds=([-np.inf, -np.inf, 1e-3], [np.inf, np.inf, 20.0]),
                                 maxfev=5000)
    except RuntimeError:
        return (float("nan"), float("nan"))
    # y = C (1 + a rho^-t) with rho = C rho_hat
    b_abs = b * x[0] ** t
    a = b_abs * C ** (t - 1.0)
    return (float(a), float(t))


@dataclass
class ValidationReport:
    checks: dict

    @property
    def ok(self):
        return all(c["passed"] for c in self.checks.values())

    def failed(self):
        return [k for k, c in self.checks.items() if not c["passed"]]


def validate(profile, origin_tol=1e-3):
    """Check every profile invariant and report measured constants."""
    checks = {}
    f, phi = profile.f, profile.phi
    checks["origin_value"] = dict(passed=bool(f[0] == 0.0), value=float(f[0]))
    fr = radial_derivatives(profile)[0]
    checks["origin_derivative"] = dict(passed=bool(abs(fr[0] - 1.0) <= origin_tol),
                                       value=float(fr[0]))
    checks["positivity"] = dict(passed=bool(np.all(f[1:] > 0) and np.all(phi > 0)),
                                value=float(min(f[1:].min(), phi.min())))
    if profile.n >= 3:
        a, t = fit_tail(profile)
        flat = not np.isfinite(t) and a == 0.0
        passed = flat or (np.isfinite(t) and t >= 0.8 * min(profile.tau, profile.n - 2))
        checks["tail_decay"] = dict(passed=bool(passed), value=t, coefficient=a)
    # origin regularity on raw values: |nu1 - nu2| / r^2 must not grow inwards
    nu1, nu2 = sectional(profile, origin=None)
    r = arclength(profile)
    idx = np.arange(ORIGIN_NODES + 1, ORIGIN_NODES + 10)
    ratio = np.abs(nu1[idx] - nu2[idx]) / r[idx] ** 2
    floor = 1e-6 * max(1.0, float(np.max(np.abs(nu2[idx])))) / r[idx[0]] ** 2
    passed = bool(np.max(ratio[:3]) <= 2.0 * np.max(ratio[3:]) + floor)
    checks["origin_regularity"] = dict(passed=passed, value=float(np.max(ratio)))
    return ValidationReport(checks)


# ----------------------------------------------------------------------------
# serialization

def _fmt(x):
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not np.isfinite(x):
            return json.dumps(str(x))
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialise {type(x).__name__}")


def dumps(obj):
    """JSON text with floats at 17 significant digits."""
    return _fmt(obj) + "\n"


def profile_to_json(profile):
    return dumps({"n": profile.n, "tau": profile.tau, "family": profile.family,
                  "params": profile.params, "s": profile.s, "f": profile.f,
                  "phi": profile.phi})


def profile_from_json(text):
    d = json.loads(text)
    prof = RadialProfile(n=int(d["n"]), s=d["s"], f=d["f"], phi=d["phi"],
                         tau=float(d["tau"]), family=d.get("family", "custom"),
                         params=d.get("params", {}))
    if prof.n >= 3:
        prof = prof.replace(tail=fit_tail(prof))
    return prof
