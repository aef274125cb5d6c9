"""Closed-form relaxation times, purity speeds and the weak-field expansion.

Amplitude damping (AD) quantities take an :class:`AdParams`; depolarizing (DP)
ones the three rates ``(gx, gy, gz)``; phase damping (PD) the single rate
``ghat``. Most functions broadcast over a leading axis of states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate as spi
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .bloch import SphericalCoords, to_spherical
from .channels import (AMPLITUDE_DAMPING, DEPOLARIZING, PHASE_DAMPING, LindbladChannel,
                       amplitude_damping, axis_rates, fixed_points)
from .dynamics import IntegratorConfig, evolve_to_ball
from .optim import NelderMeadOptions, nelder_mead

BOUNDARY_SLACK = 1e-12


class WeakFieldError(ValueError):
    pass


@dataclass(frozen=True)
class AdParams:
    gamma: float
    beta: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.beta > 0):
            raise ValueError("amplitude damping needs gamma > 0 and beta > 0")

    @property
    def r_fp(self) -> float:
        return float(np.tanh(self.beta / 2.0))

    @property
    def fixed_point(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.r_fp])

    @property
    def contraction(self) -> float:
        """Transverse decay rate ``gamma / (2 r_fp)``; equals ``1/(1 - r_fp)`` when
        ``gamma = e^beta - 1``."""
        return self.gamma / (2.0 * self.r_fp)

    @classmethod
    def unit_absorption(cls, beta: float) -> "AdParams":
        """``gamma = e^beta - 1``, the family used for all AD numerics."""
        return cls(float(np.expm1(beta)), float(beta))

    def channel(self) -> LindbladChannel:
        return amplitude_damping(self.gamma, self.beta)


# ---------------------------------------------------------------- amplitude damping

def t_free_ad(s0, eps: float, p: AdParams):
    """Uncontrolled time to reach the ``eps``-ball around the AD fixed point.

    Written in the rationalized form ``(r_fp/gamma) ln[(q + sqrt(q^2 + 4 c^2 eps^2)) / (2 eps^2)]``
    with ``q = r_x^2 + r_y^2`` and ``c = r_z + r_fp``, which is finite on the z-axis.
    """
    s0 = np.asarray(s0, dtype=float)
    q = s0[..., 0] ** 2 + s0[..., 1] ** 2
    c = s0[..., 2] + p.r_fp
    inv_u = (q + np.sqrt(q * q + 4.0 * c * c * eps * eps)) / (2.0 * eps * eps)
    with np.errstate(divide="ignore"):
        t = p.r_fp / p.gamma * np.log(inv_u)
    # slack of a few ulps so that states exactly on the sphere count as inside
    t = np.where(q + c * c <= eps * eps * (1.0 + BOUNDARY_SLACK), 0.0, np.maximum(t, 0.0))
    return float(t) if t.ndim == 0 else t


def v_ad(r, theta, p: AdParams):
    """Purity speed ``dP/dt`` of AD at radius ``r`` and polar angle ``theta``."""
    ct = np.cos(theta)
    return -p.gamma * r * (ct + r / (2.0 * p.r_fp) * (1.0 + ct * ct))


def v_cool(r, p: AdParams):
    return p.gamma * r * (1.0 - r / p.r_fp)


def v_heat(r, p: AdParams):
    return -p.gamma * r * (1.0 + r / p.r_fp)


def theta_slowest(r: float, p: AdParams) -> float:
    """Stationary angle ``arccos(-r_fp/r)`` of ``v_ad`` for ``r > r_fp``."""
    if r <= p.r_fp:
        raise ValueError("the interior stationary angle exists only for r > r_fp")
    return float(np.arccos(-p.r_fp / r))


def t_fast_ad(s0, eps: float, p: AdParams):
    """Minimal time with unbounded control (rotate, relax, rotate)."""
    r = np.linalg.norm(np.asarray(s0, dtype=float), axis=-1)
    rf = p.r_fp
    with np.errstate(divide="ignore", invalid="ignore"):
        cool = rf / p.gamma * np.log((rf - r) / eps)
        heat = rf / p.gamma * np.log((rf + r) / (2.0 * rf + eps))
    band = eps * (1.0 + BOUNDARY_SLACK)
    t = np.where(r < rf - band, cool, np.where(r > rf + band, heat, 0.0))
    return float(t) if t.ndim == 0 else t


def worst_case_times_ad(eps: float, p: AdParams) -> tuple[float, float]:
    """Leading-order maxima over initial states ``(T_fast, T_free)``."""
    base = p.r_fp / p.gamma * abs(np.log(eps))
    return base, 2.0 * base


def _disk_grid(resolution: int):
    xs = np.linspace(-1.0, 1.0, resolution)
    X, Z = np.meshgrid(xs, xs, indexing="ij")
    inside = X * X + Z * Z <= 1.0 + 1e-12
    pts = np.stack([X[inside], np.zeros(inside.sum()), Z[inside]], axis=-1)
    return pts


def _refine_max(fun, x0, radius=1.0):
    """Local maximization of ``fun`` over the ball, started at ``x0``."""
    x0 = np.asarray(x0, dtype=float)

    def neg(x):
        n = np.linalg.norm(x)
        if n > radius:
            x = x * (radius / n)
        return -float(fun(x))

    res = nelder_mead(neg, x0, None, NelderMeadOptions(initial_step=0.01, xatol=1e-10,
                                                       max_evals=2000))
    x = res.x
    n = np.linalg.norm(x)
    if n > radius:
        x = x * (radius / n)
    return x, -res.fun


@dataclass(frozen=True)
class WorstCase:
    t_fast_max: float
    t_free_max: float
    argmax_fast: np.ndarray
    argmax_free: np.ndarray

    @property
    def ratio(self) -> float:
        return self.t_free_max / self.t_fast_max


def worst_case_grid_ad(eps: float, p: AdParams, resolution: int = 101,
                       refine: bool = True) -> WorstCase:
    """Grid maxima over the ``r_y = 0`` disk (AD is symmetric about z), then refined."""
    pts = _disk_grid(resolution)
    tf = t_fast_ad(pts, eps, p)
    tr = t_free_ad(pts, eps, p)
    i, j = int(np.argmax(tf)), int(np.argmax(tr))
    best_fast, best_free = (pts[i], float(tf[i])), (pts[j], float(tr[j]))
    if refine:
        x, v = _refine_max(lambda s: t_fast_ad(s, eps, p), best_fast[0])
        if v > best_fast[1]:
            best_fast = (x, v)
        x, v = _refine_max(lambda s: t_free_ad(s, eps, p), best_free[0])
        if v > best_free[1]:
            best_free = (x, v)
    return WorstCase(best_fast[1], best_free[1], best_fast[0], best_free[0])


def theta_stall(r_i: float, p: AdParams) -> float:
    """Polar angle at radius ``r_i <= r_fp`` where the AD purity speed vanishes."""
    rf = p.r_fp
    if not 0.0 < r_i <= rf * (1 + 1e-15):
        raise ValueError(f"stall angle needs 0 < r_i <= r_fp = {rf}")
    x = min(r_i / rf, 1.0)
    # (sqrt(1-x^2) - 1)/x written without cancellation
    c = -x / (1.0 + np.sqrt(1.0 - x * x))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True)
class SphericalRates:
    rdot: float
    thetadot: float
    phidot: float


def spherical_rhs_ad(state: SphericalCoords, h, p: AdParams) -> SphericalRates:
    """Controlled AD equation in spherical coordinates.

    The contraction prefactor is ``gamma/(2 r_fp)`` which reduces to
    ``1/(1 - r_fp)`` on the ``gamma = e^beta - 1`` family. ``phidot`` is NaN at the
    poles when the transverse field makes it undefined.
    """
    r, th, ph = state
    hx, hy, hz = (float(v) for v in h)
    k = p.contraction
    rf = p.r_fp
    st, ct = np.sin(th), np.cos(th)
    sp, cp = np.sin(ph), np.cos(ph)
    rdot = -k * (r * (1.0 + ct * ct) + 2.0 * rf * ct)
    thetadot = k * st * (r * ct + 2.0 * rf) / r + 2.0 * (-hx * sp + hy * cp)
    transverse = hx * cp + hy * sp
    if st == 0.0:
        phidot = 2.0 * hz if transverse == 0.0 else float("nan")
    else:
        phidot = -2.0 * (transverse * ct / st - hz)
    return SphericalRates(float(rdot), float(thetadot), float(phidot))


@dataclass(frozen=True)
class WeakFieldReport:
    T_bar: float          # quadrature of 1/thetadot_0 over theta
    T_hit: float          # event time of the m = 0 run
    A: float
    A_bound: float
    D: float
    gamma_integral: float
    theta_i: float
    theta_bar: float


def weak_field_report(s0, eps: float, p: AdParams, control,
                      cfg: IntegratorConfig = IntegratorConfig(),
                      samples: int = 4001) -> WeakFieldReport:
    """Small-``m`` expansion ``T_m ~ T_bar - m A`` for a CRAB control.

    The ``m = 0`` trajectory (drift only) is integrated once; ``theta`` is used as
    the integration variable, with ``t(theta)`` from a monotone interpolant of the
    densely sampled trajectory. ``control`` is a :class:`~bloch_relax.control.CrabControl`;
    its ``m`` is ignored.
    """
    ch = p.channel()
    drift = control.with_m(0.0)
    fp = p.fixed_point
    traj = evolve_to_ball(ch, drift, s0, fp, eps, cfg.with_horizon(control.tau), record=True)
    if traj.hit_time is None:
        raise WeakFieldError("the uncontrolled trajectory misses the target ball")
    T = traj.hit_time
    if T == 0.0:
        return WeakFieldReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, *[to_spherical(s0).theta] * 2)

    ts = np.linspace(0.0, T, samples)
    states = traj.sample(ts)
    sph = [to_spherical(s) for s in states]
    th = np.array([c.theta for c in sph])
    thdot = np.array([spherical_rhs_ad(c, drift.drift(t), p).thetadot
                      for c, t in zip(sph, ts)])
    if np.any(thdot <= 0.0) or np.any(np.diff(th) <= 0.0):
        raise WeakFieldError("polar angle is not monotone along the uncontrolled "
                             "trajectory (heating configurations can violate this)")
    t_of = PchipInterpolator(th, ts)

    def local(theta):
        t = float(np.clip(t_of(theta), 0.0, T))
        c = to_spherical(traj.at(t))
        rates = spherical_rhs_ad(c, drift.drift(t), p)
        return t, c, rates

    def inv_thdot(theta):
        return 1.0 / local(theta)[2].thetadot

    def gamma_term(theta):
        t, c, rates = local(theta)
        hc = control.unit_control(t)
        g = 2.0 * (-hc[0] * np.sin(c.phi) + hc[1] * np.cos(c.phi))
        return g / rates.thetadot ** 2

    def bound_term(theta):
        t, c, rates = local(theta)
        g = 2.0 * (abs(np.sin(c.phi)) + abs(np.cos(c.phi))) * control.envelope(t)
        return g / rates.thetadot ** 2

    # kinks of |sin(2 pi n t / tau)| inside the window
    kinks = sorted({k * control.tau / (2 * n) for n in range(1, control.n_modes + 1)
                    for k in range(1, int(2 * n * T / control.tau) + 1)
                    if 0 < k * control.tau / (2 * n) < T})
    pts = [to_spherical(traj.at(t)).theta for t in kinks][:400]
    th_i, th_bar = float(th[0]), float(th[-1])
    quad = dict(limit=800, epsabs=1e-13, epsrel=1e-10)
    T_bar = spi.quad(inv_thdot, th_i, th_bar, **quad)[0]
    I = spi.quad(gamma_term, th_i, th_bar, points=pts or None, **quad)[0]
    J = spi.quad(bound_term, th_i, th_bar, points=pts or None, **quad)[0]

    end = sph[-1]
    end_rates = spherical_rhs_ad(end, drift.drift(T), p)
    D = (end_rates.rdot * (end.r + p.r_fp * np.cos(end.theta))
         / (end_rates.thetadot * end.r * p.r_fp * np.sin(end.theta)))
    if abs(1.0 - D) < 1e-6:
        raise WeakFieldError(f"1 - D = {1 - D:.2e} is numerically singular")
    return WeakFieldReport(float(T_bar), float(T), float(I / (1.0 - D)),
                           float(J / (1.0 - D)), float(D), float(I), th_i, th_bar)


@dataclass(frozen=True)
class SlopeSensitivity:
    T: float        # hitting time of the drift-only run
    A: float        # -dT/dm for the given control shape
    A_max: float    # largest -dT/dm over all shapes inside the CRAB envelope


def _cross_matrix(h) -> np.ndarray:
    return np.array([[0.0, -h[2], h[1]], [h[2], 0.0, -h[0]], [-h[1], h[0], 0.0]])


def slope_sensitivity(ch: LindbladChannel, s0, eps: float, control, center=None,
                      cfg: IntegratorConfig = IntegratorConfig()) -> SlopeSensitivity:
    """Exact first-order response of the hitting time to the control bound ``m``.

    Linearizes the full Bloch equation around the drift-only run and integrates
    the adjoint backwards from the hitting time, so no coordinate is frozen. With
    ``lam`` the adjoint, ``-dT/dm = int 2 h_C . (r x lam) dt``; bounding each
    control component by the CRAB envelope gives ``A_max``.
    """
    M, b = ch.affine
    drift = control.with_m(0.0)
    center = fixed_points(ch).base if center is None else np.asarray(center, dtype=float)
    traj = evolve_to_ball(ch, drift, s0, center, eps, cfg.with_horizon(control.tau),
                          record=True)
    T = traj.hit_time
    if T is None:
        raise WeakFieldError("the uncontrolled trajectory misses the target ball")
    if T == 0.0:
        return SlopeSensitivity(0.0, 0.0, 0.0)
    rT = traj.at(T)
    normal = (rT - center) / np.linalg.norm(rT - center)
    speed = normal @ (2.0 * np.cross(drift.drift(T), rT) + M @ rT + b)
    if not speed < 0.0:
        raise WeakFieldError("trajectory touches the ball tangentially; slope undefined")

    def adjoint_rhs(t, lam):
        return -(2.0 * _cross_matrix(drift.drift(t)) + M).T @ lam

    adj = spi.solve_ivp(adjoint_rhs, (T, 0.0), normal / speed, method="DOP853",
                        rtol=1e-11, atol=1e-13, dense_output=True)
    kinks = sorted({k * control.tau / (2 * n) for n in range(1, control.n_modes + 1)
                    for k in range(1, int(2 * n * T / control.tau) + 1)
                    if 0 < k * control.tau / (2 * n) < T})[:400]
    quad = dict(limit=800, epsabs=1e-13, epsrel=1e-10, points=kinks or None)

    def lever(t):
        return np.cross(traj.at(t), adj.sol(t))

    A = spi.quad(lambda t: 2.0 * control.unit_control(t) @ lever(t), 0.0, T, **quad)[0]
    A_max = spi.quad(lambda t: 2.0 * control.envelope(t) * np.abs(lever(t)).sum(),
                     0.0, T, **quad)[0]
    return SlopeSensitivity(float(T), float(A), float(A_max))


# ---------------------------------------------------------------- depolarizing

def _dp_rates(gx, gy, gz) -> np.ndarray:
    return np.array([gy + gz, gx + gz, gx + gy], dtype=float)


def t_free_dp(s0, eps: float, gx: float, gy: float, gz: float) -> float:
    """Root of ``|r(t)| = eps`` for the uncontrolled DP solution (Brent's method).

    Returns ``inf`` if a non-decaying component keeps the state outside the ball.
    """
    s0 = np.asarray(s0, dtype=float)
    G = _dp_rates(gx, gy, gz)
    r = float(np.linalg.norm(s0))
    if r <= eps:
        return 0.0
    moving = np.abs(s0) > 0
    frozen = np.linalg.norm(s0[~moving | (G == 0)])
    if frozen >= eps:
        return float("inf")
    gmin = G[moving & (G > 0)].min()

    def f(t):
        return float(np.linalg.norm(np.exp(-2.0 * G * t) * s0)) - eps

    hi = np.log(r / eps) / (2.0 * gmin)
    if f(hi) > 0:  # frozen components make the bracket loose
        hi *= 2.0
        while f(hi) > 0:
            hi *= 2.0
    return float(brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-12, maxiter=500))


def t_free_dp_batch(points, eps: float, gx: float, gy: float, gz: float,
                    iters: int = 80) -> np.ndarray:
    """Vectorized bisection version of :func:`t_free_dp` for many states."""
    pts = np.asarray(points, dtype=float)
    G = _dp_rates(gx, gy, gz)
    if np.any(G <= 0):
        raise ValueError("batch solver needs all axis rates positive")
    r = np.linalg.norm(pts, axis=-1)
    out = np.zeros(r.shape)
    live = r > eps
    p = pts[live]
    lo = np.log(r[live] / eps) / (2.0 * G.max())
    hi = np.log(r[live] / eps) / (2.0 * G.min())
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = np.linalg.norm(np.exp(-2.0 * G * mid[:, None]) * p, axis=-1) <= eps
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    out[live] = 0.5 * (lo + hi)
    return out


def v_dp(r, theta, phi, gx: float, gy: float, gz: float):
    Gx, Gy, Gz = _dp_rates(gx, gy, gz)
    return -r * r * (2.0 * Gz + ((Gx + Gy - 2.0 * Gz) + (Gx - Gy) * np.cos(2.0 * phi))
                     * np.sin(theta) ** 2)


def t_fast_dp(s0, eps: float, gx: float, gy: float, gz: float):
    r = np.linalg.norm(np.asarray(s0, dtype=float), axis=-1)
    G_max = _dp_rates(gx, gy, gz).max()
    with np.errstate(divide="ignore"):
        t = np.where(r > eps, np.log(r / eps) / (2.0 * G_max), 0.0)
    return float(t) if t.ndim == 0 else t


def worst_case_times_dp(eps: float, gx, gy, gz) -> tuple[float, float]:
    G = _dp_rates(gx, gy, gz)
    return abs(np.log(eps)) / (2.0 * G.max()), abs(np.log(eps)) / (2.0 * G.min())


def worst_case_grid_dp(eps: float, gx, gy, gz, resolution: int = 101) -> WorstCase:
    """Maxima over a cubic grid of the ball (no rotational symmetry to exploit)."""
    xs = np.linspace(-1.0, 1.0, resolution)
    X, Y, Z = np.meshgrid(xs, xs, xs, indexing="ij")
    inside = X * X + Y * Y + Z * Z <= 1.0 + 1e-12
    pts = np.stack([X[inside], Y[inside], Z[inside]], axis=-1)
    tf = t_fast_dp(pts, eps, gx, gy, gz)
    tr = t_free_dp_batch(pts, eps, gx, gy, gz)
    i, j = int(np.argmax(tf)), int(np.argmax(tr))
    return WorstCase(float(tf[i]), float(tr[j]), pts[i], pts[j])


# ---------------------------------------------------------------- phase damping

def t_free_pd(s0, eps: float, ghat: float):
    s0 = np.asarray(s0, dtype=float)
    q = np.hypot(s0[..., 0], s0[..., 1])
    with np.errstate(divide="ignore"):
        t = np.log(q / eps) / (2.0 * ghat)
    t = np.maximum(np.where(q > 0, t, 0.0), 0.0)
    return float(t) if t.ndim == 0 else t


def t_fast_pd(s0, eps: float, ghat: float):
    """Optimal time towards the natural fixed point ``(0, 0, r_z)``."""
    s0 = np.asarray(s0, dtype=float)
    r = np.linalg.norm(s0, axis=-1)
    with np.errstate(divide="ignore"):
        t = np.log(r / (np.abs(s0[..., 2]) + eps)) / (2.0 * ghat)
    t = np.maximum(t, 0.0)
    return float(t) if t.ndim == 0 else t


# ---------------------------------------------------------------- dispatch helpers

def natural_target(ch: LindbladChannel, s0) -> np.ndarray:
    """Fixed point the uncontrolled dynamics relaxes ``s0`` to."""
    fps = fixed_points(ch)
    return fps.project(np.asarray(s0, dtype=float)) if fps.directions else fps.base


def park_direction(ch: LindbladChannel, s0) -> np.ndarray:
    """Direction of the largest purity-changing speed for the relaxation task."""
    s0 = np.asarray(s0, dtype=float)
    if ch.kind == AMPLITUDE_DAMPING:
        return np.array([0.0, 0.0, -1.0 if np.linalg.norm(s0) < ch.r_fp else 1.0])
    if ch.kind == DEPOLARIZING:
        return np.eye(3)[int(np.argmax(axis_rates(ch)))]
    if ch.kind == PHASE_DAMPING:
        phi = np.arctan2(s0[1], s0[0]) if np.hypot(s0[0], s0[1]) > 0 else 0.0
        return np.array([np.cos(phi), np.sin(phi), 0.0])
    raise ValueError(f"no optimal strategy known for {ch.kind} channels")


def t_free(ch: LindbladChannel, s0, eps: float) -> float:
    p = ch.params
    if ch.kind == AMPLITUDE_DAMPING:
        return t_free_ad(s0, eps, AdParams(p["gamma"], p["beta"]))
    if ch.kind == DEPOLARIZING:
        return t_free_dp(s0, eps, p["gx"], p["gy"], p["gz"])
    if ch.kind == PHASE_DAMPING:
        return t_free_pd(s0, eps, p["ghat"])
    raise ValueError(f"no closed form for {ch.kind} channels")


def t_fast(ch: LindbladChannel, s0, eps: float) -> float:
    p = ch.params
    if ch.kind == AMPLITUDE_DAMPING:
        return t_fast_ad(s0, eps, AdParams(p["gamma"], p["beta"]))
    if ch.kind == DEPOLARIZING:
        return t_fast_dp(s0, eps, p["gx"], p["gy"], p["gz"])
    if ch.kind == PHASE_DAMPING:
        return t_fast_pd(s0, eps, p["ghat"])
    raise ValueError(f"no closed form for {ch.kind} channels")


def ad_params(ch: LindbladChannel) -> Optional[AdParams]:
    if ch.kind != AMPLITUDE_DAMPING:
        return None
    return AdParams(ch.params["gamma"], ch.params["beta"])
