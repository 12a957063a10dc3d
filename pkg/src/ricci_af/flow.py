r"""Ricci flow of radial profiles on a frozen coordinate grid.

For ``g = phi^2 ds^2 + f^2 dsigma^2`` the flow ``d/dt g = -2 Ric`` splits
into

    d/dt f   = -f   (nu2 + (n-2) nu1)   = f_rr - (n-2)(1 - f_r^2)/f
    d/dt phi = -phi (n-1) nu2           = (n-1) phi f_rr / f

with ``f_rr`` the arclength second derivative. The coordinate ``s`` never
moves, so no remeshing is needed.

Differencing these two equations directly is unstable at the centre: a
reparametrization of ``s`` changes ``f`` and ``phi`` without changing the
metric, and the discrete operators do not see it as neutral. The rates are
therefore taken from ``c = f_r - 1``, which obeys the closed parabolic
equation

    d/dt c = c_rr + (n-3) f_r c_r / f - (n-2) f_r (2 + c) c / f^2

``c`` lives on cells, read off the profile as ``df / dr - 1`` with ``dr``
the cell arclength of :func:`~ricci_af.geometry.cell_lengths`; the lapse
follows ``d/dt phi = (n-1) phi c_r / f`` at the nodes and ``f`` is rebuilt
by summing ``dr (1 + c)`` over cells. Differences are second order and
the diffusion term is in conservative form, with ``c`` even across the
centre. Time stepping is Heun's method. Every accepted
step can be audited with :func:`ricci_residual`, which compares the metric
change against the coordinate Ricci tensor of
:func:`~ricci_af.geometry.riemann_oracle`.

The optional companion ``u`` solves the heat equation of the evolving
metric with a conservative finite-volume scheme that satisfies a discrete
maximum principle exactly.
"""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .functionals import DiagnosticsRow, diagnostics, volume_integral
from .geometry import (ProfileError, arclength, cell_lengths, curvature, dumps,
                       profile_to_json, riemann_oracle, sphere_area)

__all__ = [
    "FlowError",
    "FlowConfig",
    "FlowState",
    "RunRecord",
    "initial_state",
    "heat_initial",
    "default_eps",
    "ricci_rhs",
    "ricci_step",
    "ricci_residual",
    "heat_step",
    "adapt_dt",
    "run_flow",
    "diagnostics_csv",
    "write_run",
    "atomic_write",
]

OUTER_BCS = ("fixed_tail", "extrapolated")


class FlowError(RuntimeError):
    """A step was rejected (stability bound or loss of positivity)."""


@dataclass(frozen=True)
class FlowConfig:
    """Run parameters.

    ``eps`` switches on the heat companion (0 disables; ``"auto"`` picks
    the default level with :func:`default_eps`). ``sample_times`` are
    extra diagnostic times hit exactly by shortening the step.
    ``mu_horizon`` enables the entropy monitor with scale ``L - t``.
    """

    t_end: float = 1.0
    cfl: float = 0.2
    blowup_threshold: float = 1e6
    eps: object = 0.0
    monitor_every: int = 100
    outer_bc: str = "fixed_tail"
    sample_times: tuple = ()
    decay_levels: tuple = ()
    mu_horizon: float = None
    sobolev: bool = True
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise ValueError("cfl must lie in (0, 1)")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be positive and finite")
        if self.outer_bc not in OUTER_BCS:
            raise ValueError(f"outer_bc must be one of {OUTER_BCS}")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")
        if not self.blowup_threshold > 0:
            raise ValueError("blowup_threshold must be positive")
        if self.eps != "auto" and not (isinstance(self.eps, (int, float)) and self.eps >= 0):
            raise ValueError("eps must be >= 0 or 'auto'")
        if self.mu_horizon is not None and not self.mu_horizon > self.t_end:
            raise ValueError("mu_horizon must exceed t_end")


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    profile: object
    u_eps: np.ndarray = None
    eps: float = 0.0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.u_eps is not None:
            u = np.array(self.u_eps, dtype=float)
            u.setflags(write=False)
            object.__setattr__(self, "u_eps", u)


# ----------------------------------------------------------------------------
# heat companion

def heat_initial(profile, eps):
    """``eps (1 + r^2)^(-(2 + tau)/2)``, a smooth version of ``eps r^(-2-tau)``."""
    r = arclength(profile)
    return eps * (1.0 + r * r) ** (-(2.0 + profile.tau) / 2.0)


def _keps_norm(profile, u, rm2):
    n = profile.n
    return volume_integral(profile, np.sqrt(rm2 + u * u) ** (n / 2.0)) ** (2.0 / n)


def default_eps(profile, excess=0.04, flat_eps=1e-8):
    """Largest ``eps`` (by bisection in log scale) with ``K_eps`` norm within ``excess``.

    The criterion compares ``(int K_eps^(n/2))^(2/n)`` against
    ``(int |Rm|^(n/2))^(2/n)`` at ``t = 0``. A flat profile has nothing to
    compare against and gets ``flat_eps``.
    """
    n = profile.n
    c = curvature(profile)
    base = _keps_norm(profile, np.zeros_like(c.rm2), c.rm2)
    if not base > 0:
        return flat_eps
    shape = heat_initial(profile, 1.0)
    lo, hi = -30.0, 5.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val = _keps_norm(profile, 10.0 ** mid * shape, c.rm2)
        if val <= (1.0 + excess) * base:
            lo = mid
        else:
            hi = mid
    return 10.0 ** lo


def _heat_geometry(profile):
    """Face conductances and control volumes of the radial Laplacian."""
    n = profile.n
    s, f, phi = profile.s, profile.f, profile.phi
    om = sphere_area(n - 1)
    ds = np.diff(s)
    dr = 0.5 * (phi[1:] + phi[:-1]) * ds
    fa, fb = f[:-1], f[1:]
    fm = 0.5 * (fa + fb)

    def mean_pow(a, b):
        # (1/dr) int f^(n-1) dr for f linear between a and b
        return sum(b ** k * a ** (n - 1 - k) for k in range(n)) / n

    half_l = 0.5 * dr * mean_pow(fa, fm)      # left half of each cell
    half_r = 0.5 * dr * mean_pow(fm, fb)      # right half
    vol = np.zeros(len(s))
    vol[:-1] += half_l
    vol[1:] += half_r
    cond = fm ** (n - 1) / dr
    return om * vol, om * cond


def heat_step(state, dt, hold_outer=True):
    """Advance the companion by ``dt`` on the metric of ``state``.

    SSP Heun substeps keep every update a convex combination of
    neighbouring values, so the discrete supremum never increases.
    """
    if state.u_eps is None:
        raise FlowError("state has no heat companion")
    vol, cond = _heat_geometry(state.profile)
    a = np.zeros_like(vol)          # weight of right neighbour
    b = np.zeros_like(vol)          # weight of left neighbour
    a[:-1] = cond / vol[:-1]
    b[1:] = cond / vol[1:]
    lim = 0.9 / float(np.max(a + b))
    k = max(1, int(math.ceil(dt / lim)))
    h = dt / k
    u = np.array(state.u_eps, dtype=float)

    def euler(v):
        out = v.copy()
        out[:-1] += h * a[:-1] * (v[1:] - v[:-1])
        out[1:] += h * b[1:] * (v[:-1] - v[1:])
        if hold_outer:
            out[-1] = v[-1]
        return out

    for _ in range(k):
        v = euler(u)
        u = 0.5 * u + 0.5 * euler(v)
    if not np.all(u > 0):
        raise FlowError("heat companion lost positivity")
    return replace(state, u_eps=u)


# ----------------------------------------------------------------------------
# Ricci flow

def _cells(profile):
    """Cell quantities ``(dr, f_h, c)`` with ``c = f_r - 1``.

    ``dr`` is the cell arclength and ``c = (f_{j+1} - f_j) / dr_j - 1`` the
    arclength average of ``f_r - 1`` over the cell. The map from the
    profile to ``c`` is local and exactly invertible, which is what lets
    the stepper rebuild ``f`` without drift.
    """
    f = profile.f
    dr = cell_lengths(profile.s, profile.phi)
    return dr, 0.5 * (f[1:] + f[:-1]), np.diff(f) / dr - 1.0


def _fsq(f):
    # cell average of f^2 for f linear across the cell; dividing the cell
    # average of c by it is exact to leading order at the centre
    a, b = f[:-1], f[1:]
    return (a * a + a * b + b * b) / 3.0


def _fluxes(profile, dr, c):
    """``c_r`` at the nodes from neighbouring cells; zero at the centre."""
    F = np.zeros(len(profile.s))
    F[1:-1] = np.diff(c) / (0.5 * (dr[1:] + dr[:-1]))
    return F


def _spectral_bound(profile):
    """Gershgorin bound on the spectrum of the linearized ``c`` operator.

    Cells next to the centre dominate: the absorption term there scales
    like ``6 (n-2) / h^2``. The two frozen outer cells are skipped.
    """
    n = profile.n
    dr, fh, c = _cells(profile)
    d = 0.5 * (dr[1:] + dr[:-1])          # node spacing between cells
    inv = np.zeros(len(dr) + 1)
    inv[1:-1] = 1.0 / d                    # no flux through the centre
    ap, am = inv[1:], inv[:-1]
    w = np.abs(1.0 + c)
    rho = (2.0 * (ap + am) / dr + (n - 3) * w * (ap + am) / fh
           + (n - 2) * w * np.abs(2.0 + c) / _fsq(profile.f))
    return float(np.max(rho[:-2]))


def _rates(profile, outer_bc):
    """``(dphi/dt, dc/dt)`` at nodes and cells."""
    n = profile.n
    s, f, phi = profile.s, profile.f, profile.phi
    dr, fh, c = _cells(profile)
    F = _fluxes(profile, dr, c)
    w = 1.0 + c
    crr = np.diff(F) / dr
    cr = 0.5 * (F[1:] + F[:-1])
    dc = crr + (n - 3) * w * cr / fh - (n - 2) * w * (2.0 + c) * c / _fsq(f)
    dphi = np.empty_like(phi)
    dphi[1:-1] = (n - 1) * phi[1:-1] * F[1:-1] / f[1:-1]
    # the rate is even in s: fit A + B s^2 through nodes 1 and 2
    a1, a2 = s[1] ** 2, s[2] ** 2
    dphi[0] = (dphi[1] * a2 - dphi[2] * a1) / (a2 - a1)
    dphi[-1] = 0.0
    if outer_bc == "fixed_tail":
        dphi[-2:] = 0.0
        dc[-2:] = 0.0
    else:
        xs = 0.5 * (s[1:] + s[:-1])
        slope = (dphi[-3] - dphi[-4]) / (s[-3] - s[-4])
        dphi[-2:] = dphi[-3] + slope * (s[-2:] - s[-3])
        slope = (dc[-3] - dc[-4]) / (xs[-3] - xs[-4])
        dc[-2:] = dc[-3] + slope * (xs[-2:] - xs[-3])
    return dphi, dc


def _rebuild(profile, phi, c):
    """Profile with lapse ``phi`` whose cell values of ``f_r - 1`` are ``c``."""
    dr0, _, c0 = _cells(profile)
    dr = cell_lengths(profile.s, phi)
    inc = dr * (1.0 + c) - dr0 * (1.0 + c0)
    f = profile.f.copy()
    f[1:] += np.cumsum(inc)
    return f


def ricci_rhs(profile, outer_bc="fixed_tail"):
    """Time derivatives ``(df/dt, dphi/dt)`` at every node.

    ``df/dt`` sums the cell increments of ``d/dt (phi (1 + c))``, which is
    how :func:`ricci_step` moves ``f``.
    """
    dr, _, c = _cells(profile)
    dphi, dc = _rates(profile, outer_bc)
    ddr = cell_lengths(profile.s, dphi)
    df = np.zeros_like(profile.f)
    df[1:] = np.cumsum(ddr * (1.0 + c) + dr * dc)
    return df, dphi


def min_ph2(profile):
    """``min_i (phi_i h_i)^2`` over cells, with the smaller endpoint lapse."""
    h = np.diff(profile.s)
    return float(np.min(np.minimum(profile.phi[1:], profile.phi[:-1]) * h)) ** 2


def _stable_bound(profile):
    # Heun is stable on the negative real axis up to dt |lambda| = 2
    return 2.0 / _spectral_bound(profile)


def _choose_dt(profile, cfl, sup_rm):
    return min(cfl * min_ph2(profile), _stable_bound(profile), 1.0 / (1.0 + sup_rm))


def adapt_dt(state, config):
    """``cfl min(phi h)^2``, capped by ``1 / (1 + sup|Rm|)``.

    A third cap keeps Heun inside its linear stability region; it binds
    only for ``n >= 4``, where the centre cells are stiffer than the
    diffusive estimate.
    """
    p = state.profile
    rm = math.sqrt(float(np.max(curvature(p).rm2)))
    return _choose_dt(p, config.cfl, rm)


def _advance(profile, c0, dphi, dc, dt):
    try:
        phi = profile.phi + dt * dphi
        f = _rebuild(profile, phi, c0 + dt * dc)
        return profile.replace(f=f, phi=phi)
    except ProfileError as e:
        raise FlowError(f"step lost positivity: {e}") from None


def ricci_step(state, dt, outer_bc="fixed_tail", check=True):
    """One Heun step of the profile (and companion, if present).

    Steps above the stability bound are rejected with :class:`FlowError`,
    as are steps that lose positivity.
    """
    p0 = state.profile
    if check and dt > _stable_bound(p0) * (1.0 + 1e-12):
        raise FlowError(f"dt = {dt:.3g} exceeds the stability bound")
    c0 = _cells(p0)[2]
    k1 = _rates(p0, outer_bc)
    p1 = _advance(p0, c0, *k1, dt)
    k2 = _rates(p1, outer_bc)
    p2 = _advance(p0, c0, 0.5 * (k1[0] + k2[0]), 0.5 * (k1[1] + k2[1]), dt)
    if not (np.all(np.isfinite(p2.f)) and np.all(np.isfinite(p2.phi))):
        raise FlowError("non-finite profile")
    out = replace(state, t=state.t + dt, profile=p2)
    if state.u_eps is not None:
        out = heat_step(replace(out, profile=p0), dt)
        out = replace(out, profile=p2)
    stats = dict(state.stats)
    stats.update(dt=dt, steps=stats.get("steps", 0) + 1)
    return replace(out, stats=stats)


def ricci_residual(before, after, dt, exclude_outer=2):
    """Sup-norm of ``(g1 - g0)/dt + 2 Ric(g_mid)`` on ``phi^2`` and ``f^2``.

    Ric comes from the coordinate oracle at the midpoint state. The last
    ``exclude_outer`` nodes carry the boundary condition and are skipped.
    """
    p0, p1 = before.profile, after.profile
    pm = p0.replace(f=0.5 * (p0.f + p1.f), phi=0.5 * (p0.phi + p1.phi))
    o = riemann_oracle(pm)
    rr = (p1.phi ** 2 - p0.phi ** 2) / dt + 2.0 * o.lam_rad * pm.phi ** 2
    rt = (p1.f ** 2 - p0.f ** 2) / dt + 2.0 * o.lam_sph * pm.f ** 2
    sl = slice(0, len(rr) - exclude_outer)
    return float(max(np.max(np.abs(rr[sl])), np.max(np.abs(rt[sl]))))


# ----------------------------------------------------------------------------
# driver

def initial_state(profile, eps=0.0):
    if profile.n < 3:
        raise ValueError("flow needs n >= 3")
    if eps == "auto":
        eps = default_eps(profile)
    u = heat_initial(profile, eps) if eps and eps > 0 else None
    return FlowState(t=0.0, profile=profile, u_eps=u, eps=float(eps or 0.0),
                     stats=dict(steps=0))


@dataclass
class RunRecord:
    status: str
    states: list
    rows: list
    events: list
    outer_bc: str
    steps: int
    message: str = ""

    @property
    def final(self):
        return self.states[-1]

    @property
    def snapshots(self):
        return [(s.t, s.profile) for s in self.states]


def run_flow(initial, config, monitors=()):
    """Evolve to ``config.t_end`` and sample diagnostics.

    ``initial`` is a profile or a :class:`FlowState`. ``monitors`` are
    callables ``hook(state, row)`` run at every sample after the standard
    diagnostics; they may update the row in place. The status is ``ok``,
    ``blowup`` (sup|Rm| above the threshold) or ``stability_abort``.
    """
    state = initial if isinstance(initial, FlowState) else initial_state(initial, config.eps)
    n = state.profile.n
    rows, states, events = [], [], []
    pending = sorted(t for t in config.sample_times if 0 < t < config.t_end)
    prev_level = None

    def sample(st, dt):
        mu_sigma = None
        if config.mu_horizon is not None:
            mu_sigma = config.mu_horizon - st.t
        row = diagnostics(st.profile, st.t, dt, u_eps=st.u_eps, sobolev=config.sobolev,
                          mu_sigma=mu_sigma)
        for hook in monitors:
            hook(st, row)
        rows.append(row)
        states.append(st)

    def finish(status, msg=""):
        if not states or states[-1] is not state:
            sample(state, state.stats.get("dt", float("nan")))
        return RunRecord(status=status, states=states, rows=rows, events=events,
                         outer_bc=config.outer_bc, steps=state.stats.get("steps", 0),
                         message=msg)

    sample(state, float("nan"))
    steps = 0
    while state.t < config.t_end * (1 - 1e-14):
        c = curvature(state.profile)
        sup = math.sqrt(float(np.max(c.rm2)))
        if not math.isfinite(sup):
            return finish("stability_abort", "non-finite curvature")
        if sup > config.blowup_threshold:
            events.append(dict(kind="blowup", t=state.t, sup_rm=sup))
            return finish("blowup", f"sup|Rm| = {sup:.6g} above threshold")
        level = state.t * sup
        for lv in config.decay_levels:
            if prev_level is not None and (prev_level - lv) * (level - lv) < 0:
                events.append(dict(kind="decay_milestone", t=state.t, level=lv,
                                   direction="down" if level < lv else "up"))
        prev_level = level
        if steps >= config.max_steps:
            return finish("stability_abort", "step budget exhausted")
        dt = min(_choose_dt(state.profile, config.cfl, sup), config.t_end - state.t)
        hit = False
        if pending and state.t + dt >= pending[0]:
            dt = pending[0] - state.t
            pending.pop(0)
            hit = True
        try:
            state = ricci_step(state, dt, config.outer_bc)
        except FlowError as e:
            return finish("stability_abort", str(e))
        steps += 1
        if hit or steps % config.monitor_every == 0:
            sample(state, dt)
    return finish("ok")


# ----------------------------------------------------------------------------
# output

def _cell(v):
    if isinstance(v, tuple):
        return ";".join(format(x, ".17g") for x in v)
    return format(float(v), ".17g")


def diagnostics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DiagnosticsRow.COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, k)) for k in DiagnosticsRow.COLUMNS])
    return buf.getvalue()


def atomic_write(path, text):
    """Write via a temporary file in the same directory and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_run(record, outdir):
    """Snapshots as profile JSON, a manifest, and the diagnostics CSV."""
    snaps = []
    for i, st in enumerate(record.states):
        name = f"snapshot_{i:04d}.json"
        atomic_write(os.path.join(outdir, "snapshots", name), profile_to_json(st.profile))
        snaps.append(dict(t=st.t, file=f"snapshots/{name}"))
    atomic_write(os.path.join(outdir, "diagnostics.csv"), diagnostics_csv(record.rows))
    manifest = dict(status=record.status, outer_bc=record.outer_bc, steps=record.steps,
                    events=record.events, snapshots=snaps)
    atomic_write(os.path.join(outdir, "manifest.json"), dumps(manifest))
    return manifest
