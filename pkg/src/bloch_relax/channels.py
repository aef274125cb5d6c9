"""Markovian qubit dissipators in traceless Lindblad form.

Each jump operator is ``L_a = sqrt(gamma_a) * l_a . sigma`` with complex unit
vectors ``l_a`` that are mutually orthonormal (``l_a . conj(l_b) = delta_ab``).
In Bloch coordinates the dissipator is the affine field

    v(r) = 2 * sum_a gamma_a [Re((l_a . r) conj(l_a)) - r + i (l_a x conj(l_a))]

which is what the integrators consume (see :attr:`LindbladChannel.affine`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .bloch import to_spherical

ORTHO_TOL = 1e-12
RANK_TOL = 1e-10

AMPLITUDE_DAMPING = "amplitude_damping"
DEPOLARIZING = "depolarizing"
PHASE_DAMPING = "phase_damping"
GENERIC = "generic"
KINDS = (AMPLITUDE_DAMPING, DEPOLARIZING, PHASE_DAMPING, GENERIC)


class ChannelError(ValueError):
    pass


class NoFixedPointError(ChannelError):
    pass


@dataclass(frozen=True, eq=False)
class LindbladChannel:
    rates: tuple[float, ...]
    vectors: np.ndarray  # complex, shape (k, 3)
    kind: str = GENERIC
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=complex).reshape(-1, 3)
        rates = tuple(float(g) for g in self.rates)
        if len(rates) != vecs.shape[0]:
            raise ChannelError("one rate per Lindblad vector required")
        if len(rates) > 3:
            raise ChannelError("a qubit dissipator needs at most 3 Lindblad operators")
        if any(not np.isfinite(g) or g < 0 for g in rates):
            raise ChannelError(f"rates must be finite and non-negative, got {rates}")
        gram = vecs @ vecs.conj().T
        if not np.allclose(gram, np.eye(len(rates)), atol=ORTHO_TOL, rtol=0.0):
            raise ChannelError("Lindblad vectors are not orthonormal")
        if self.kind not in KINDS:
            raise ChannelError(f"unknown channel kind {self.kind!r}")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "params", dict(self.params))

    def __repr__(self):
        p = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"LindbladChannel({self.kind}, {p or self.rates})"

    @cached_property
    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """``(M, b)`` with ``dissipator_velocity(r) == M @ r + b``."""
        M = np.zeros((3, 3))
        b = np.zeros(3)
        for g, l in zip(self.rates, self.vectors):
            M += 2.0 * g * (np.real(np.outer(l.conj(), l)) - np.eye(3))
            b += 2.0 * g * np.real(1j * np.cross(l, l.conj()))
        return M, b

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))

    @property
    def reference_rate(self) -> float:
        """Rate used for natural time units and default horizons."""
        if self.kind == AMPLITUDE_DAMPING:
            return float(self.params["gamma"])
        if self.kind == PHASE_DAMPING:
            return float(self.params["ghat"])
        if self.kind == DEPOLARIZING:
            return float(max(self.params["gx"], self.params["gy"], self.params["gz"]))
        return self.total_rate

    @property
    def r_fp(self) -> float:
        if self.kind != AMPLITUDE_DAMPING:
            raise ChannelError("r_fp is defined for amplitude damping only")
        return float(np.tanh(self.params["beta"] / 2.0))

    @property
    def jump_rates(self) -> tuple[float, float]:
        """Squared prefactors of sigma_+ and sigma_- for amplitude damping."""
        if self.kind != AMPLITUDE_DAMPING:
            raise ChannelError("jump_rates is defined for amplitude damping only")
        g, beta = self.params["gamma"], self.params["beta"]
        return float(g / np.expm1(beta)), float(-g / np.expm1(-beta))


def amplitude_damping(gamma: float, beta: float) -> LindbladChannel:
    """Generalized amplitude damping at inverse temperature ``beta``.

    The unit vectors ``(1, +-i, 0)/sqrt(2)`` reproduce ``sigma_+`` and ``sigma_-``
    with no extra phase; the normalization puts a factor 1/2 into the term rates,
    so ``rates == jump_rates / 2``.
    """
    if not gamma > 0:
        raise ChannelError("gamma must be positive")
    if not beta > 0:
        raise ChannelError("beta must be positive (beta = 0 gives divergent rates)")
    up = gamma / np.expm1(beta)
    down = -gamma / np.expm1(-beta)
    s = 1.0 / np.sqrt(2.0)
    vecs = np.array([[s, 1j * s, 0.0], [s, -1j * s, 0.0]])
    return LindbladChannel((0.5 * up, 0.5 * down), vecs, AMPLITUDE_DAMPING,
                           {"gamma": float(gamma), "beta": float(beta)})


def depolarizing(gx: float, gy: float, gz: float) -> LindbladChannel:
    rates = (float(gx), float(gy), float(gz))
    if any(g < 0 for g in rates) or not any(g > 0 for g in rates):
        raise ChannelError("depolarizing rates must be >= 0 with at least one positive")
    return LindbladChannel(rates, np.eye(3, dtype=complex), DEPOLARIZING,
                           {"gx": rates[0], "gy": rates[1], "gz": rates[2]})


def phase_damping(ghat: float) -> LindbladChannel:
    if not ghat > 0:
        raise ChannelError("phase damping rate must be positive")
    return LindbladChannel((float(ghat),), np.array([[0.0, 0.0, 1.0]], dtype=complex),
                           PHASE_DAMPING, {"ghat": float(ghat)})


def generic(rates, vectors) -> LindbladChannel:
    return LindbladChannel(tuple(rates), np.asarray(vectors, dtype=complex), GENERIC)


def axis_rates(ch: LindbladChannel) -> np.ndarray:
    """``(Gamma_x, Gamma_y, Gamma_z)`` of a depolarizing channel."""
    if ch.kind != DEPOLARIZING:
        raise ChannelError("axis rates are defined for the depolarizing channel only")
    gx, gy, gz = ch.params["gx"], ch.params["gy"], ch.params["gz"]
    return np.array([gy + gz, gx + gz, gx + gy])


def dissipator_velocity(ch: LindbladChannel, s) -> np.ndarray:
    r = np.asarray(s, dtype=float)
    v = np.zeros(3)
    for g, l in zip(ch.rates, ch.vectors):
        v += g * (np.real((l @ r) * l.conj()) - r + np.real(1j * np.cross(l, l.conj())))
    return 2.0 * v


@dataclass(frozen=True)
class FixedPointSet:
    base: np.ndarray
    directions: tuple[np.ndarray, ...] = ()

    @property
    def dimension(self) -> int:
        return len(self.directions)

    def point(self, *coords: float) -> np.ndarray:
        p = np.array(self.base, dtype=float)
        for c, d in zip(coords, self.directions):
            p = p + c * d
        return p

    def project(self, s) -> np.ndarray:
        """Closest member of the affine set to ``s``."""
        s = np.asarray(s, dtype=float)
        p = np.array(self.base, dtype=float)
        for d in self.directions:
            p = p + float((s - self.base) @ d) * d
        return p


def fixed_points(ch: LindbladChannel) -> FixedPointSet:
    """Solve ``M r + b = 0``, reporting the null space when ``M`` is singular."""
    M, b = ch.affine
    U, sv, Vt = np.linalg.svd(M)
    scale = max(float(sv[0]), 1.0) if sv.size else 1.0
    rank = int(np.sum(sv > RANK_TOL * scale))
    base, *_ = np.linalg.lstsq(M, -b, rcond=RANK_TOL)
    if np.linalg.norm(M @ base + b) > RANK_TOL * scale:
        raise NoFixedPointError(f"{ch!r}: stationarity equations are inconsistent")
    directions = tuple(Vt[k].copy() for k in range(rank, 3))
    for d in directions:
        # sign convention: first nonzero component positive
        nz = np.flatnonzero(np.abs(d) > 1e-12)
        if nz.size and d[nz[0]] < 0:
            d *= -1.0
    if directions:
        # minimum-norm representative; lstsq already returns it up to roundoff
        P = np.array(directions)
        base = base - P.T @ (P @ base)
    base[np.abs(base) < 1e-15] = 0.0
    if np.linalg.norm(base) > 1.0 + 1e-9:
        raise NoFixedPointError(f"{ch!r}: fixed point {base} lies outside the Bloch ball")
    return FixedPointSet(base, directions)


@dataclass(frozen=True)
class DissipatorCoefficients:
    a_plus: float
    a_minus: float
    b: float
    c: complex
    d_plus: complex
    d_minus: complex


def coefficients(ch: LindbladChannel) -> DissipatorCoefficients:
    a_p = a_m = b = 0.0
    c = d_p = d_m = 0j
    for g, l in zip(ch.rates, ch.vectors):
        lp = l[0] + 1j * l[1]
        lm = l[0] - 1j * l[1]
        lz = l[2]
        a_p += g * abs(lp) ** 2
        a_m += g * abs(lm) ** 2
        b += g * (1.0 + abs(lz) ** 2)
        c += g * np.conj(lp) * lm
        d_p += g * np.conj(lp) * lz
        d_m += g * np.conj(lm) * lz
    return DissipatorCoefficients(float(a_p), float(a_m), float(b), complex(c),
                                  complex(d_p), complex(d_m))


def purity_speed_spherical(co: DissipatorCoefficients, r: float, theta: float,
                           phi: float) -> float:
    """dP/dt from the coefficient form, in spherical coordinates."""
    eip = np.exp(1j * phi)
    re_c2 = float(np.real(co.c * eip * eip))
    lin = (-(co.a_plus - co.a_minus) * np.cos(theta)
           + 2.0 * np.real((co.d_plus - np.conj(co.d_minus)) * eip) * np.sin(theta))
    quad = (-(co.b + co.a_plus + co.a_minus) + re_c2
            + (co.b - co.a_plus - co.a_minus - re_c2) * np.cos(2.0 * theta)
            + 2.0 * np.real((co.d_plus + np.conj(co.d_minus)) * eip) * np.sin(2.0 * theta))
    return float(r * (lin + 0.5 * r * quad))


def purity_speed(ch: LindbladChannel, s) -> float:
    r, theta, phi = to_spherical(s)
    return purity_speed_spherical(coefficients(ch), r, theta, phi)


def channel_from_config(cfg: Mapping[str, Any]) -> LindbladChannel:
    """Build a channel from ``{"kind": ..., <parameters>}``."""
    kind = cfg.get("kind")
    try:
        if kind == AMPLITUDE_DAMPING:
            return amplitude_damping(float(cfg["gamma"]), float(cfg["beta"]))
        if kind == DEPOLARIZING:
            return depolarizing(float(cfg.get("gx", 0.0)), float(cfg.get("gy", 0.0)),
                                float(cfg.get("gz", 0.0)))
        if kind == PHASE_DAMPING:
            return phase_damping(float(cfg["ghat"]))
        if kind == GENERIC:
            vecs = [[complex(re, im) for re, im in v] for v in cfg["vectors"]]
            return generic(cfg["rates"], vecs)
    except KeyError as exc:
        raise ChannelError(f"channel config for {kind!r} is missing {exc}") from None
    raise ChannelError(f"unknown channel kind {kind!r}")


def channel_to_config(ch: LindbladChannel) -> dict[str, Any]:
    if ch.kind == GENERIC:
        return {"kind": GENERIC, "rates": list(ch.rates),
                "vectors": [[[z.real, z.imag] for z in v] for v in ch.vectors]}
    return {"kind": ch.kind, **ch.params}
