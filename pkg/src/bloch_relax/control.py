"""Bounded open-loop control: CRAB fields and hitting-time minimization.

The applied field is ``h(t) = h_D(t) + m * clamp(h_C(t))`` with drift
``h_D(t) = (omega/2) e_z + (t/tau)(e_x + e_y + e_z)`` and the chopped Fourier
control

    h_C(t) = t/(tau N_c) * sum_{mu,n} c[mu, n] sin(2 pi n t / tau) e_mu,

coefficients restricted to (-1, 1); ``clamp`` rescales ``h_C`` to norm 1 when
it exceeds it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bloch import as_state
from .channels import LindbladChannel, fixed_points
from .dynamics import IntegratorConfig, evolve_to_ball
from .integrator import packed_field
from .optim import NelderMeadOptions, nelder_mead

log = logging.getLogger(__name__)

AXES = 3


@dataclass(frozen=True, eq=False)
class CrabControl:
    coeffs: np.ndarray  # shape (3, n_modes)
    tau: float
    m: float = 0.0
    omega: float = 0.0
    drift_ramp: bool = True

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c.reshape(AXES, -1)
        if c.shape[0] != AXES or c.shape[1] < 1:
            raise ValueError(f"coefficients must have shape (3, N_c), got {c.shape}")
        if np.any(np.abs(c) >= 1.0):
            raise ValueError("CRAB coefficients must lie strictly inside (-1, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.m >= 0:
            raise ValueError("field bound m must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, n_modes: int, tau: float, **kw) -> "CrabControl":
        return cls(np.zeros((AXES, n_modes)), tau, **kw)

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[1]

    def with_coeffs(self, x) -> "CrabControl":
        return replace(self, coeffs=np.asarray(x, dtype=float).reshape(AXES, -1))

    def with_m(self, m: float) -> "CrabControl":
        return replace(self, m=float(m))

    def packed(self):
        fp = np.array([0.0, 0.0, 0.5 * self.omega, 1.0 if self.drift_ramp else 0.0,
                       self.tau, self.m])
        return fp, np.asarray(self.coeffs)

    def drift(self, t: float) -> np.ndarray:
        h = np.array([0.0, 0.0, 0.5 * self.omega])
        if self.drift_ramp:
            h += t / self.tau
        return h

    def raw_control(self, t: float) -> np.ndarray:
        """Unclamped Fourier control ``h_C(t)``."""
        n = np.arange(1, self.n_modes + 1)
        s = np.sin(2.0 * np.pi * n * t / self.tau)
        return (t / (self.tau * self.n_modes)) * (self.coeffs @ s)

    def unit_control(self, t: float) -> np.ndarray:
        hc = self.raw_control(t)
        nrm = float(np.linalg.norm(hc))
        return hc / nrm if nrm > 1.0 else hc

    def envelope(self, t: float) -> float:
        """Largest per-axis magnitude any coefficient choice gives at time ``t``."""
        n = np.arange(1, self.n_modes + 1)
        return float(t / self.tau * np.mean(np.abs(np.sin(2.0 * np.pi * n * t / self.tau))))

    def __call__(self, t: float) -> np.ndarray:
        return control_field(self, t)


def control_field(c: CrabControl, t: float) -> np.ndarray:
    if not 0.0 <= t <= c.tau * (1 + 1e-12):
        raise ValueError(f"t={t} outside the control horizon [0, {c.tau}]")
    fp, coeffs = c.packed()
    return np.array(packed_field(float(t), fp, coeffs))


@dataclass(frozen=True)
class OptimizeConfig:
    """Everything needed to evaluate and optimize the hitting time ``T_m``."""

    channel: LindbladChannel
    s0: tuple
    eps: float
    tau: float
    n_modes: int
    omega: float
    drift_ramp: bool = True
    integrator: IntegratorConfig = IntegratorConfig()
    nelder_mead: NelderMeadOptions = NelderMeadOptions()
    center: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "s0", tuple(float(v) for v in as_state(self.s0)))
        if self.center is None:
            base = fixed_points(self.channel).base
            object.__setattr__(self, "center", tuple(float(v) for v in base))
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")

    def control(self, m: float, coeffs=None) -> CrabControl:
        if coeffs is None:
            coeffs = np.zeros((AXES, self.n_modes))
        return CrabControl(np.asarray(coeffs, dtype=float).reshape(AXES, self.n_modes),
                           self.tau, m=m, omega=self.omega, drift_ramp=self.drift_ramp)


def hitting_time(c: CrabControl, ch: LindbladChannel, s0, center, eps: float,
                 cfg: IntegratorConfig = IntegratorConfig()):
    """``(T or None, state at the end)`` for the controlled run over ``[0, tau]``."""
    traj = evolve_to_ball(ch, c, s0, center, eps, cfg.with_horizon(c.tau))
    return traj.hit_time, traj.final


def hitting_time_objective(c: CrabControl, ch: LindbladChannel, s0, eps: float,
                           cfg: IntegratorConfig = IntegratorConfig(), center=None) -> float:
    """Hitting time, or ``tau + |r(tau) - center|`` when the ball is missed."""
    if center is None:
        center = fixed_points(ch).base
    t, final = hitting_time(c, ch, s0, center, eps, cfg)
    if t is not None:
        return t
    return c.tau + float(np.linalg.norm(final - np.asarray(center)))


@dataclass
class RestartOutcome:
    start: list
    coeffs: list
    objective: float
    evals: int
    converged: bool


@dataclass
class OptimizeReport:
    m: float
    best_coeffs: list
    T_m: Optional[float]
    objective: float
    evaluations: int
    restarts: int
    seed: int
    outcomes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _restart(args):
    cfg, m, x0 = args
    ch = cfg.channel
    center = np.asarray(cfg.center)
    bounds = [(-1.0, 1.0)] * x0.size
    template = cfg.control(m)

    def obj(x):
        return hitting_time_objective(template.with_coeffs(x), ch, cfg.s0, cfg.eps,
                                      cfg.integrator, center)

    res = nelder_mead(obj, x0, bounds, cfg.nelder_mead)
    return RestartOutcome(x0.tolist(), res.x.tolist(), res.fun, res.evals, res.converged)


def restart_starts(n_coeffs: int, restarts: int, seed: int) -> list[np.ndarray]:
    """Initial coefficient vectors, one independent stream per restart."""
    seqs = np.random.SeedSequence(seed).spawn(restarts)
    return [np.random.default_rng(s).uniform(-1.0, 1.0, n_coeffs) for s in seqs]


def optimize_T_m(m: float, cfg: OptimizeConfig, restarts: int = 16, seed: int = 0,
                 jobs: int = 1) -> OptimizeReport:
    """Best of ``restarts`` Nelder-Mead runs over the CRAB coefficients at bound ``m``."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    starts = restart_starts(AXES * cfg.n_modes, restarts, seed)
    tasks = [(cfg, float(m), x0) for x0 in starts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_restart, tasks))
    else:
        outcomes = [_restart(t) for t in tasks]
    # ties resolved by restart index, so the result is independent of scheduling
    best = min(range(len(outcomes)), key=lambda k: (outcomes[k].objective, k))
    ob = outcomes[best]
    t_hit, _ = hitting_time(cfg.control(m, ob.coeffs), cfg.channel, cfg.s0,
                            cfg.center, cfg.eps, cfg.integrator)
    log.info("m=%g: T_m=%s after %d evaluations", m, t_hit,
             sum(o.evals for o in outcomes))
    return OptimizeReport(float(m), ob.coeffs, t_hit, ob.objective,
                          sum(o.evals for o in outcomes), restarts, seed, outcomes)


def sweep_m(m_list: Sequence[float], cfg: OptimizeConfig, restarts: int = 16, seed: int = 0,
            jobs: int = 1) -> list[OptimizeReport]:
    """Independent :func:`optimize_T_m` runs, all started from the same seed."""
    m_list = [float(m) for m in m_list]
    if any(b < a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be sorted ascending")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(optimize_T_m, m, cfg, restarts, seed) for m in m_list]
            return [f.result() for f in futs]
    return [optimize_T_m(m, cfg, restarts, seed) for m in m_list]


@dataclass(frozen=True)
class SlopeFit:
    T_bar: float
    A: float
    r2: float


def fit_slope(ms, Ts) -> SlopeFit:
    """Least-squares fit of ``T = T_bar - A m``."""
    ms = np.asarray(ms, dtype=float)
    Ts = np.asarray(Ts, dtype=float)
    if ms.size < 3 or np.unique(ms).size < 2:
        raise ValueError("slope fit needs at least 3 points with distinct m")
    X = np.column_stack([np.ones_like(ms), -ms])
    (T_bar, A), *_ = np.linalg.lstsq(X, Ts, rcond=None)
    resid = Ts - X @ np.array([T_bar, A])
    ss_tot = float(np.sum((Ts - Ts.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(T_bar), float(A), r2)
