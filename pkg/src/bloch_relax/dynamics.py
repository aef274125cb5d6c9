"""Time evolution of the controlled Bloch equation.

    dr/dt = 2 h(t) x r + dissipator_velocity(r)

Fields may be ``None`` (no control), a constant 3-vector, an object exposing
``packed()`` (see :class:`bloch_relax.control.CrabControl`) or any callable
``t -> h``. The first three run through the compiled integrator.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import integrator as _int
from .bloch import as_state, purity, rotation_between, rotate
from .channels import (AMPLITUDE_DAMPING, DEPOLARIZING, PHASE_DAMPING, LindbladChannel,
                       dissipator_velocity)

FieldLike = Union[None, np.ndarray, Callable[[float], np.ndarray]]

HORIZON = "horizon"
BALL_HIT = "ball_hit"
STALLED = "stalled"


class IntegrationError(RuntimeError):
    pass


class NotStallableError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: float = np.inf
    t_max: float = 10.0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("integrator tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not self.t_max >= 0:
            raise ValueError("t_max must be non-negative")

    def with_horizon(self, t_max: float) -> "IntegratorConfig":
        return IntegratorConfig(self.rel_tol, self.abs_tol, self.max_step, float(t_max))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Accepted integrator steps plus the quartic dense output of every step."""

    times: np.ndarray
    states: np.ndarray
    steps: np.ndarray
    dense: np.ndarray
    accepted: int
    rejected: int
    reason: str
    hit_time: Optional[float] = None

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside trajectory span "
                             f"[{self.times[0]}, {self.times[-1]}]")
        if len(self.steps) == 0:
            return self.states[0].copy()
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.steps) - 1)
        s = (t - self.times[k]) / self.steps[k]
        return _int.dense_eval(self.states[k], self.steps[k], self.dense[k], s)

    def sample(self, ts) -> np.ndarray:
        return np.array([self.at(float(t)) for t in np.atleast_1d(ts)])

    def rows(self):
        for t, s in zip(self.times, self.states):
            yield (float(t), float(s[0]), float(s[1]), float(s[2]), purity(s))

    def write_csv(self, fh=None) -> str:
        """CSV with columns t, r_x, r_y, r_z, purity at 17 significant digits."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "r_x", "r_y", "r_z", "purity"])
        for row in self.rows():
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue() if fh is None else ""


def _pack(field: FieldLike):
    if field is None:
        return np.zeros(6), np.zeros((3, 0))
    if hasattr(field, "packed"):
        return field.packed()
    if callable(field):
        return field
    h = np.asarray(field, dtype=float).reshape(3)
    fp = np.zeros(6)
    fp[:3] = h
    return fp, np.zeros((3, 0))


def _run(ch: LindbladChannel, field, s0, cfg: IntegratorConfig, *, event=_int.EVENT_NONE,
         center=None, level=0.0, eps=0.0, record=True) -> Trajectory:
    M, b = ch.affine
    ts, ys, hs, Qs, acc, rej, status, t_hit = _int.integrate(
        M, b, _pack(field), as_state(s0), cfg.t_max, rtol=cfg.rel_tol, atol=cfg.abs_tol,
        max_step=cfg.max_step, event=event, center=center, level=level, eps=eps,
        record=record)
    if status == _int.STATUS_FAILED:
        raise IntegrationError(
            f"step size underflow or step budget exhausted near t={ts[-1]:.6g} "
            f"({acc} accepted, {rej} rejected steps, state {ys[-1]})")
    hit = status == _int.STATUS_HIT
    return Trajectory(ts.copy(), ys.copy(), hs.copy(), Qs.copy(), int(acc), int(rej),
                      BALL_HIT if hit else HORIZON, float(t_hit) if hit else None)


def evolve(ch: LindbladChannel, field: FieldLike, s0, cfg: IntegratorConfig = IntegratorConfig()
           ) -> Trajectory:
    """Integrate from ``s0`` over ``[0, cfg.t_max]`` recording every accepted step."""
    return _run(ch, field, s0, cfg)


def time_to_ball(ch: LindbladChannel, field: FieldLike, s0, center, eps: float,
                 cfg: IntegratorConfig = IntegratorConfig()) -> Optional[float]:
    """First time with ``|r(t) - center| <= eps``; ``None`` if not reached by ``t_max``."""
    return evolve_to_ball(ch, field, s0, center, eps, cfg).hit_time


def evolve_to_ball(ch, field, s0, center, eps, cfg=IntegratorConfig(), record=False):
    if not eps > 0:
        raise ValueError("eps must be positive")
    return _run(ch, field, s0, cfg, event=_int.EVENT_BALL,
                center=np.asarray(center, dtype=float), eps=eps, record=record)


def time_to_shell(ch: LindbladChannel, field: FieldLike, s0, radius: float, eps: float,
                  cfg: IntegratorConfig = IntegratorConfig()) -> Optional[float]:
    """First time with ``||r(t)| - radius| <= eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return _run(ch, field, s0, cfg, event=_int.EVENT_SHELL, level=radius, eps=eps,
                record=False).hit_time


# closed-form uncontrolled solutions; t may be a scalar or an array

def closed_form_ad(s0, t, gamma: float, beta: float) -> np.ndarray:
    r_fp = np.tanh(beta / 2.0)
    x, y, z = np.asarray(s0, dtype=float)
    t = np.asarray(t, dtype=float)
    half = np.exp(-gamma * t / (2.0 * r_fp))
    out = np.stack([half * x, half * y, half * half * (z + r_fp) - r_fp], axis=-1)
    return out


def closed_form_dp(s0, t, gx: float, gy: float, gz: float) -> np.ndarray:
    G = np.array([gy + gz, gx + gz, gx + gy])
    t = np.asarray(t, dtype=float)[..., None]
    return np.exp(-2.0 * G * t) * np.asarray(s0, dtype=float)


def closed_form_pd(s0, t, ghat: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)[..., None]
    decay = np.exp(-2.0 * ghat * t)
    x, y, z = np.asarray(s0, dtype=float)
    return np.concatenate([decay * x, decay * y, np.broadcast_to(z, decay.shape)], axis=-1)


def closed_form(ch: LindbladChannel, s0, t) -> np.ndarray:
    p = ch.params
    if ch.kind == AMPLITUDE_DAMPING:
        return closed_form_ad(s0, t, p["gamma"], p["beta"])
    if ch.kind == DEPOLARIZING:
        return closed_form_dp(s0, t, p["gx"], p["gy"], p["gz"])
    if ch.kind == PHASE_DAMPING:
        return closed_form_pd(s0, t, p["ghat"])
    raise ValueError(f"no closed form for {ch.kind} channels")


def stall_control(ch: LindbladChannel, s, tol: float = 1e-9) -> np.ndarray:
    """Constant field that turns ``s`` into an equilibrium of the controlled dynamics.

    Only possible when the dissipative velocity at ``s`` is tangent to the sphere;
    the minimum-norm solution of ``2 h x s = -v`` is ``h = (v x s) / (2 |s|^2)``.
    """
    s = as_state(s)
    v = dissipator_velocity(ch, s)
    r2 = float(s @ s)
    if r2 == 0.0:
        if np.linalg.norm(v) > tol:
            raise NotStallableError("the origin is not stationary and cannot be rotated")
        return np.zeros(3)
    radial = float(v @ s) / np.sqrt(r2)
    if abs(radial) > tol:
        raise NotStallableError(f"radial velocity {radial:.3e} at {s} cannot be "
                                "compensated by a rotation")
    return np.cross(v, s) / (2.0 * r2)


def hold(ch: LindbladChannel, s, cfg: IntegratorConfig = IntegratorConfig()):
    """Apply :func:`stall_control` at ``s`` and integrate; returns ``(h, trajectory)``."""
    h = stall_control(ch, s)
    traj = evolve(ch, h, s, cfg)
    stalled = Trajectory(traj.times, traj.states, traj.steps, traj.dense, traj.accepted,
                         traj.rejected, STALLED)
    return h, stalled


@dataclass(frozen=True)
class ProtocolResult:
    time: Optional[float]
    parked: np.ndarray
    before_final_rotation: Optional[np.ndarray]
    final: Optional[np.ndarray]


def rotate_decay_rotate(ch: LindbladChannel, s0, eps: float, park, target,
                        cfg: IntegratorConfig = IntegratorConfig()) -> ProtocolResult:
    """Idealized bang-off-bang protocol with instantaneous rotations.

    ``s0`` is rotated onto the direction ``park``, left to relax without control
    until its radius is within ``eps`` of ``|target|``, and then rotated onto the
    direction of ``target``. Rotations are exact discrete events.
    """
    s0 = as_state(s0)
    target = np.asarray(target, dtype=float)
    r_i = float(np.linalg.norm(s0))
    level = float(np.linalg.norm(target))
    park = np.asarray(park, dtype=float)
    parked = r_i * park / np.linalg.norm(park)

    def final_rotation(x):
        if level == 0.0 or np.linalg.norm(x) == 0.0:
            return x
        axis, angle = rotation_between(x, target)
        return rotate(x, axis, angle)

    if abs(r_i - level) <= eps:
        return ProtocolResult(0.0, parked, s0, final_rotation(s0))
    traj = _run(ch, None, parked, cfg, event=_int.EVENT_SHELL, level=level, eps=eps,
                record=False)
    if traj.hit_time is None:
        return ProtocolResult(None, parked, None, None)
    before = traj.final
    return ProtocolResult(traj.hit_time, parked, before, final_rotation(before))

