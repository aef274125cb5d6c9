"""Box-constrained Nelder-Mead simplex search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# bounds are treated as the closed interval shrunk by this margin
BOUND_MARGIN = 1e-9


@dataclass(frozen=True)
class NelderMeadOptions:
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5
    initial_step: float = 0.2
    xatol: float = 1e-8  # simplex diameter
    max_evals: int = 4000


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    evals: int
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def nelder_mead(fun: Callable[[np.ndarray], float], x0, bounds: Optional[Sequence] = None,
                opts: NelderMeadOptions = NelderMeadOptions()) -> NelderMeadResult:
    """Minimize ``fun`` starting from ``x0``.

    ``bounds`` is a sequence of ``(lo, hi)`` pairs (open intervals); every trial
    point is projected coordinate-wise onto ``[lo + 1e-9, hi - 1e-9]``. The best
    vertex is only replaced on strict improvement, so a constant objective
    returns ``x0`` unchanged.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    n = x0.size
    if bounds is None:
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
    else:
        b = np.asarray(bounds, dtype=float).reshape(n, 2)
        lo = b[:, 0] + BOUND_MARGIN
        hi = b[:, 1] - BOUND_MARGIN

    def project(x):
        return np.minimum(np.maximum(x, lo), hi)

    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return float(fun(x))

    x0 = project(x0)
    f0 = f(x0)
    if not np.isfinite(f0):
        raise ValueError(f"objective is not finite at the starting point ({f0})")

    simplex = [x0]
    values = [f0]
    for i in range(n):
        x = x0.copy()
        step = opts.initial_step if x0[i] == 0 else opts.initial_step * max(1.0, abs(x0[i]))
        if x[i] + step > hi[i]:
            step = -step
        x[i] += step
        x = project(x)
        simplex.append(x)
        values.append(f(x))
    sim = np.array(simplex)
    fs = np.array(values)

    it = 0
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        diam = float(np.max(np.linalg.norm(sim[1:] - sim[0], axis=1))) if n else 0.0
        if diam < opts.xatol:
            converged = True
            break
        if evals >= opts.max_evals:
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = project(centroid + opts.reflect * (centroid - sim[-1]))
        fr = f(xr)
        if fr < fs[0]:
            xe = project(centroid + opts.expand * (xr - centroid))
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = project(centroid + opts.contract * (xr - centroid))
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = project(centroid + opts.contract * (sim[-1] - centroid))
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        # shrink towards the best vertex
        for k in range(1, n + 1):
            sim[k] = project(sim[0] + opts.shrink * (sim[k] - sim[0]))
            fs[k] = f(sim[k])
    return NelderMeadResult(sim[0].copy(), float(fs[0]), evals, it, converged)
