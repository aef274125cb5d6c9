"""JSON run configuration shared by the CLI and the experiment scripts.

Times (``t_max``, ``max_step``, ``tau``) are absolute unless ``natural_units`` is
set, in which case they are multiples of ``1/rate`` with ``rate`` the channel's
reference rate (``gamma`` for amplitude damping, ``ghat`` for phase damping and
the largest of ``gx, gy, gz`` for depolarizing channels).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

import numpy as np

from .channels import LindbladChannel, channel_from_config
from .control import CrabControl, OptimizeConfig
from .dynamics import IntegratorConfig
from .optim import NelderMeadOptions

FORMATS = ("csv", "json")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: Optional[float] = None  # None means unbounded
    t_max: float = 10.0


@dataclass(frozen=True)
class ControlSettings:
    tau: float = 10.0
    n_modes: int = 10
    omega: Optional[float] = None  # required for anything that builds a drift
    drift_ramp: bool = True
    m: float = 0.0
    coeffs: Optional[list] = None


@dataclass(frozen=True)
class OptimizerSettings:
    restarts: int = 16
    seed: int = 0
    m_list: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 5.0, 10.0])
    slope_m_list: list = field(default_factory=lambda: [0.0, 0.01, 0.02, 0.03, 0.04, 0.05])
    max_evals: int = 4000
    xatol: float = 1e-8
    initial_step: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    channel: dict
    s0: list
    eps: float = 0.04
    center: Optional[list] = None
    natural_units: bool = False
    integrator: IntegratorSettings = IntegratorSettings()
    control: ControlSettings = ControlSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    grid_resolution: int = 101
    out: Optional[str] = None
    format: str = "json"

    def __post_init__(self):
        if len(self.s0) != 3:
            raise ConfigError("s0 must have three components")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.grid_resolution < 16:
            raise ConfigError("grid_resolution must be >= 16")
        try:
            self.build_channel()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # ------------------------------------------------------------ building blocks

    def build_channel(self) -> LindbladChannel:
        return channel_from_config(self.channel)

    @property
    def time_scale(self) -> float:
        """Factor converting configured times to absolute times."""
        return 1.0 / self.build_channel().reference_rate if self.natural_units else 1.0

    def integrator_config(self, t_max: Optional[float] = None) -> IntegratorConfig:
        it = self.integrator
        k = self.time_scale
        return IntegratorConfig(it.rel_tol, it.abs_tol,
                                math.inf if it.max_step is None else it.max_step * k,
                                (it.t_max if t_max is None else t_max) * k)

    def require_omega(self) -> float:
        if self.control.omega is None:
            raise ConfigError("control.omega (drift frequency) must be given explicitly")
        return float(self.control.omega)

    def crab(self, m: Optional[float] = None) -> CrabControl:
        c = self.control
        n = c.n_modes
        coeffs = np.zeros((3, n)) if c.coeffs is None else np.asarray(c.coeffs, float)
        try:
            return CrabControl(coeffs.reshape(3, n), c.tau * self.time_scale,
                               m=c.m if m is None else m, omega=self.require_omega(),
                               drift_ramp=c.drift_ramp)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def optimize_config(self) -> OptimizeConfig:
        o = self.optimizer
        nm = NelderMeadOptions(initial_step=o.initial_step, xatol=o.xatol, max_evals=o.max_evals)
        try:
            return OptimizeConfig(self.build_channel(), tuple(self.s0), self.eps,
                                  self.control.tau * self.time_scale, self.control.n_modes,
                                  self.require_omega(), self.control.drift_ramp,
                                  self.integrator_config(), nm,
                                  None if self.center is None else tuple(self.center))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    # ------------------------------------------------------------ serialization

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        nested = {"integrator": IntegratorSettings, "control": ControlSettings,
                  "optimizer": OptimizerSettings}
        kw = _checked(cls, d)
        for key, sub in nested.items():
            if key in kw:
                kw[key] = sub(**_checked(sub, kw[key]))
        if "channel" not in kw or "s0" not in kw:
            raise ConfigError("configuration needs 'channel' and 's0'")
        kw["s0"] = [float(v) for v in kw["s0"]]
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def _checked(cls, d) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(d)


def thermal_control_config(**kw: Any) -> RunConfig:
    """Amplitude damping at beta = 2 with the bounded-control settings of the m sweep."""
    beta = kw.pop("beta", 2.0)
    base = dict(channel={"kind": "amplitude_damping", "gamma": math.expm1(beta), "beta": beta},
                s0=[0.38, -0.22, -0.46], eps=0.04,
                control=ControlSettings(tau=10.0, n_modes=10, omega=1.0))
    base.update(kw)
    return RunConfig(**base)
