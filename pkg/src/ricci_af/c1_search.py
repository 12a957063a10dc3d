r"""Search for the minimal-hypersphere energy constant.

A rotationally symmetric metric whose area radius has a first critical
point at ``r = R`` is rescaled so the critical point sits at ``r = 1``.
The rescaled radius ``g`` on ``[0, 1]`` satisfies

    g(0) = 0,  g'(0) = 1,  g'(1) = 0,  g' > 0 on [0, 1),

and the two energies

    E1(g) = int_0^1 |1 - g'^2|^(n/2) / g dr
    E2(g) = int_0^1 |g''|^(n/2) g^(n/2 - 1) dr

are the curvature energy split into the sphere-plane and radial-plane
parts. ``max(E1, E2)`` is bounded below by a positive constant depending
only on ``n``; :func:`estimate_cn` approximates the infimum from above and
:func:`lower_bound_witness` checks the analytic lower-bound chains.

Profiles are parametrised by ``g' = q^2`` where ``q`` is a cubic spline
through ``q(0) = 1``, interior knot values ``theta`` at ``k / (K + 1)`` and
``q(1) = 0``, clamped with ``q'(0) = 0`` and natural at ``r = 1``. The
constraint ``g'(1) = 0`` is then structural and ``g`` is an exact
piecewise polynomial.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, simpson
from scipy.interpolate import CubicSpline, PPoly
from scipy.optimize import brentq, minimize

__all__ = [
    "NeckProfileParams",
    "AnalyticNeck",
    "SearchConfig",
    "SearchResult",
    "neck_energies",
    "neck_objective",
    "default_ceiling",
    "estimate_cn",
    "lower_bound_witness",
    "sweep_csv",
]

EVAL_POINTS = 2001


def _square_ppoly(p):
    """Exact square of a piecewise cubic as a piecewise sextic."""
    c = p.c
    k = c.shape[0]
    out = np.zeros((2 * k - 1, c.shape[1]))
    for j in range(c.shape[1]):
        out[:, j] = np.convolve(c[:, j], c[:, j])
    return PPoly(out, p.x)


class _Neck:
    """Shared evaluation helpers; subclasses provide g and its derivatives."""

    breakpoints = ()

    def grid(self, m=EVAL_POINTS):
        return np.linspace(0.0, 1.0, m)

    @property
    def D(self):
        return float(self.g(1.0))

    def admissible(self, m=EVAL_POINTS):
        r = self.grid(m)
        dg = self.dg(r)
        return bool(np.all(dg[:-1] > 0) and abs(dg[-1]) < 1e-12
                    and abs(self.g(0.0)) < 1e-14 and abs(dg[0] - 1.0) < 1e-12)

    def extended_profile(self, r):
        """Area radius on ``[0, inf)``: neck, mirrored neck, then ``r + c``.

        The mirror ``f(r) = 2D - g(2 - r)`` on ``[1, 2]`` keeps ``f'`` >= 0
        with a single touching zero at ``r = 1``; beyond ``r = 2`` the
        metric is exactly flat.
        """
        r = np.asarray(r, dtype=float)
        D = self.D
        out = np.empty_like(r)
        a = r <= 1.0
        b = (r > 1.0) & (r <= 2.0)
        c = r > 2.0
        out[a] = self.g(r[a])
        out[b] = 2.0 * D - self.g(2.0 - r[b])
        out[c] = 2.0 * D + (r[c] - 2.0)
        return out


@dataclass(frozen=True, eq=False)
class NeckProfileParams(_Neck):
    """Knot values ``theta`` of ``q = sqrt(g')`` at ``k / (K + 1)``."""

    theta: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def K(self):
        return len(self.theta)

    @property
    def knots(self):
        return np.linspace(0.0, 1.0, self.K + 2)

    @property
    def breakpoints(self):
        return tuple(self.knots[1:-1])

    def _splines(self):
        if "q" not in self._cache:
            y = np.concatenate([[1.0], self.theta, [0.0]])
            q = CubicSpline(self.knots, y, bc_type=((1, 0.0), (2, 0.0)))
            dg = _square_ppoly(q)
            self._cache.update(q=q, dg=dg, g=dg.antiderivative(), ddg=dg.derivative())
        return self._cache

    def q(self, r):
        return self._splines()["q"](r)

    def g(self, r):
        return self._splines()["g"](r)

    def dg(self, r):
        return self._splines()["dg"](r)

    def ddg(self, r):
        return self._splines()["ddg"](r)

    def admissible(self, m=EVAL_POINTS):
        if not np.all(np.isfinite(self.theta)):
            return False
        q = self.q(self.grid(m))
        return bool(np.all(q[:-1] > 0))

    def refine(self, K):
        """Same profile in a basis with ``K`` knots, when the knot sets nest."""
        if (K + 1) % (self.K + 1):
            raise ValueError(f"knots of K={self.K} are not contained in K={K}")
        return NeckProfileParams(self.q(np.linspace(0.0, 1.0, K + 2)[1:-1]))


class AnalyticNeck(_Neck):
    """Neck profile given by closed-form ``g, g', g''`` callables."""

    def __init__(self, g, dg, ddg, label=""):
        self.g, self.dg, self.ddg = g, dg, ddg
        self.label = label


def neck_energies(f, df, ddf, R, n, m=EVAL_POINTS):
    """``(E1, E2)`` of a radius ``f`` on ``[0, R]`` by Simpson on ``m`` points.

    The E1 integrand is replaced by its limit 0 at ``r = 0``.
    """
    r = np.linspace(0.0, R, m)
    fv, d1, d2 = f(r), df(r), ddf(r)
    i1 = np.zeros_like(r)
    i2 = np.zeros_like(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        i1[1:] = np.abs((1.0 - d1[1:] ** 2) / fv[1:] ** 2) ** (n / 2.0) * fv[1:] ** (n - 1)
        i2[1:] = np.abs(d2[1:] / fv[1:]) ** (n / 2.0) * fv[1:] ** (n - 1)
    if n == 2:
        i2[0] = abs(d2[0])
    return float(simpson(i1, x=r)), float(simpson(i2, x=r))


def neck_objective(params, n):
    """``max(E1, E2)``; inadmissible parameters give ``inf``."""
    if not params.admissible():
        return float("inf")
    e1, e2 = neck_energies(params.g, params.dg, params.ddg, 1.0, n)
    return max(e1, e2)


def default_ceiling(n):
    """Smallest ``D`` with ``(D^2 - 1)^(n/2) / D = 1``.

    Any neck with ``g(1)`` above this value already has ``E1 >= 1``.
    """
    return brentq(lambda D: (D * D - 1.0) ** (n / 2.0) - D, 1.0 + 1e-12, 10.0,
                  xtol=1e-15)


@dataclass
class SearchConfig:
    basis_dim: int = 5
    sweep_dim: int = 2
    sweep_points: int = 30
    q_range: tuple = (0.05, 2.0)
    starts: int = 4
    budget: int = 400
    seed: int = 0
    ceiling: float = None

    def __post_init__(self):
        if self.basis_dim < 1 or self.sweep_dim < 1 or self.sweep_dim > 3:
            raise ValueError("need basis_dim >= 1 and 1 <= sweep_dim <= 3")
        if (self.basis_dim + 1) % (self.sweep_dim + 1):
            raise ValueError("sweep knots must nest inside the descent basis")
        if self.sweep_points < 2 or self.starts < 1 or self.budget < 0:
            raise ValueError("sweep_points >= 2, starts >= 1, budget >= 0 required")
        lo, hi = self.q_range
        if not 0 < lo < hi:
            raise ValueError("q_range must satisfy 0 < lo < hi")


@dataclass
class SearchResult:
    n: int
    estimate: float
    best: NeckProfileParams
    sweep_min: float
    sweep_best: NeckProfileParams
    descent_min: float
    sweep: list
    starts: int
    evaluations: int

    @property
    def margin(self):
        """Relative gap between the sweep oracle and the refined search."""
        return (self.sweep_min - self.estimate) / self.sweep_min


def _sweep(n, cfg):
    axis = np.linspace(*cfg.q_range, cfg.sweep_points)
    mesh = np.meshgrid(*([axis] * cfg.sweep_dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    rows = []
    for th in pts:
        p = NeckProfileParams(th)
        if p.admissible():
            e1, e2 = neck_energies(p.g, p.dg, p.ddg, 1.0, n)
        else:
            e1 = e2 = float("inf")
        rows.append((tuple(float(x) for x in th), e1, e2, max(e1, e2)))
    return rows


def estimate_cn(n, config=None):
    """Upper-bound estimate of the infimum of ``max(E1, E2)``.

    A brute-force sweep over ``sweep_dim`` knots is the oracle; its best
    point is lifted exactly into the ``basis_dim`` basis and refined by
    Nelder-Mead from several seeded starts. The returned estimate is the
    smallest objective seen and never exceeds the sweep minimum.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {n}")
    cfg = config or SearchConfig()
    rows = _sweep(n, cfg)
    objs = np.array([r[3] for r in rows])
    if not np.any(np.isfinite(objs)):
        raise ValueError("every sweep point is infeasible")
    ib = int(np.argmin(objs))
    sweep_best = NeckProfileParams(rows[ib][0])
    sweep_min = float(objs[ib])

    # the lift is the same function, so its objective is the sweep minimum
    best_x = sweep_best.refine(cfg.basis_dim).theta.copy()
    best_v = sweep_min
    evals = len(rows)
    rng = np.random.default_rng(cfg.seed)
    if cfg.budget > 0:
        x0s = [best_x.copy()]
        for _ in range(cfg.starts - 1):
            x0s.append(best_x * np.exp(0.25 * rng.standard_normal(best_x.shape)))
        for x0 in x0s:
            res = minimize(lambda x: neck_objective(NeckProfileParams(x), n), x0,
                           method="Nelder-Mead",
                           options=dict(maxfev=cfg.budget, xatol=1e-6, fatol=1e-9))
            evals += int(res.nfev)
            if res.fun < best_v:
                best_v, best_x = float(res.fun), np.array(res.x)
    return SearchResult(n=n, estimate=best_v, best=NeckProfileParams(best_x),
                        sweep_min=sweep_min, sweep_best=sweep_best,
                        descent_min=best_v, sweep=rows, starts=cfg.starts,
                        evaluations=evals)


def _quad(fn, pts):
    val, _ = quad(fn, 0.0, 1.0, points=list(pts) or None, limit=400,
                  epsabs=1e-14, epsrel=1e-13)
    return val


def lower_bound_witness(params, n, ceiling=None):
    """Evaluate both analytic lower-bound chains against quadrature.

    Returns a dict with ``D = g(1)``, ``int g'^2``, the boundary term
    ``[g' g^((n-2)/n)]_0^1``, the chains as lists of ``(label, value)``
    pairs ordered from the energy down to the final analytic bound, and
    ``holds`` (every link non-increasing within 1e-8). The E1 chain is
    applied when ``D >= 1`` and the E2 chain when ``D <= ceiling`` and
    ``n > 2``; at ``n = 2`` its prefactor vanishes.
    """
    g, dg, ddg = params.g, params.dg, params.ddg
    pts = getattr(params, "breakpoints", ())
    ceiling = default_ceiling(n) if ceiling is None else ceiling
    D = float(g(1.0))
    I = _quad(lambda r: dg(r) ** 2, pts)
    p = (n - 2.0) / n

    def e1_int(r):
        return 0.0 if r == 0 else abs(1.0 - dg(r) ** 2) ** (n / 2.0) / g(r)

    def e2_int(r):
        return abs(ddg(r)) ** (n / 2.0) * (g(r) ** (n / 2.0 - 1.0) if r > 0 or n == 2 else 0.0)

    E1 = _quad(e1_int, pts)
    E2 = _quad(e2_int, pts)
    boundary = float(dg(1.0) * g(1.0) ** p - dg(0.0) * (g(0.0) ** p if p > 0 else 1.0))
    report = dict(n=n, D=D, int_dg2=I, boundary=boundary, E1=E1, E2=E2,
                  ceiling=ceiling, e1_chain=None, e2_chain=None)
    tol = 1e-8
    holds = True

    if D >= 1.0:
        chain = [("E1", E1),
                 ("(1/D) int|1-g'^2|^(n/2)",
                  _quad(lambda r: abs(1.0 - dg(r) ** 2) ** (n / 2.0), pts) / D),
                 ("(1/D) |int g'^2 - 1|^(n/2)", abs(I - 1.0) ** (n / 2.0) / D),
                 ("(1/D) (D^2 - 1)^(n/2)", (D * D - 1.0) ** (n / 2.0) / D)]
        report["e1_chain"] = chain
        holds &= all(a[1] >= b[1] - tol for a, b in zip(chain, chain[1:]))

    if n > 2 and D <= ceiling:
        ibp = _quad(lambda r: ddg(r) * g(r) ** p if r > 0 else 0.0, pts)
        weighted = _quad(lambda r: dg(r) ** 2 * g(r) ** (p - 1.0) if r > 0 else 0.0, pts)
        chain = [("E2", E2),
                 ("(int |g''| g^p)^(n/2)",
                  _quad(lambda r: abs(ddg(r)) * g(r) ** p if r > 0 else 0.0, pts) ** (n / 2.0)),
                 ("|int g'' g^p|^(n/2)", abs(ibp) ** (n / 2.0)),
                 ("(p int g'^2 g^(p-1))^(n/2)", (p * weighted) ** (n / 2.0)),
                 ("p^(n/2) (int g'^2)^(n/2) / D", p ** (n / 2.0) * I ** (n / 2.0) / D),
                 ("p^(n/2) (int g'^2)^(n/2) / ceiling",
                  p ** (n / 2.0) * I ** (n / 2.0) / ceiling)]
        report["e2_chain"] = chain
        report["ibp_identity_gap"] = abs(ibp - (boundary - p * weighted))
        holds &= all(a[1] >= b[1] - tol for a, b in zip(chain, chain[1:]))
        holds &= report["ibp_identity_gap"] <= tol
    report["holds"] = bool(holds)
    return report


def sweep_csv(result):
    """Sweep record as CSV text: theta columns, E1, E2, objective."""
    k = len(result.sweep[0][0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"theta{i + 1}" for i in range(k)] + ["E1", "E2", "objective"])
    for th, e1, e2, obj in result.sweep:
        w.writerow([format(x, ".17g") for x in (*th, e1, e2, obj)])
    return buf.getvalue()
