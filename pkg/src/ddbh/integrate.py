"""Adaptive Dormand-Prince 4(5) driver shared by the DNLS, SOE and Gutzwiller tiers.

scipy's ``RK45`` does the stepping and local error control. This wrapper adds
what the tiers need on top: sampling a projection of the state on an output
grid (so large states are never stored whole), locating extrema of one
tracked amplitude on the dense interpolant, an overflow guard and a wall-clock
budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
OVERFLOW_GUARD = 1e6


class IntegrationError(RuntimeError):
    """The step size collapsed (stiff blow-up or a singular right-hand side)."""

    def __init__(self, message: str, t_fail: float):
        super().__init__(f"{message} (t = {t_fail:.6g})")
        self.t_fail = t_fail


@dataclass
class Extremum:
    t: float
    value: float
    profile: np.ndarray


@dataclass
class Trajectory:
    t: np.ndarray
    samples: np.ndarray
    final: np.ndarray
    t_final: float
    status: str = "ok"  # ok | diverged | timeout
    maxima: List[Extremum] = field(default_factory=list)
    minima: List[Extremum] = field(default_factory=list)
    n_steps: int = 0
    n_rhs: int = 0
    elapsed: float = 0.0
    n_first: Optional[int] = None  # leading sample columns holding first moments

    @property
    def first(self) -> np.ndarray:
        """Sampled first moments (the whole sample when no split is set)."""
        return self.samples if self.n_first is None else self.samples[:, : self.n_first]

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"


def _refine_extremum(fun, dense, idx, t0, t1, s0):
    def slope(t):
        y = dense(t)
        return float(np.real(np.conj(y[idx]) * fun(t, y)[idx]))

    try:
        return brentq(slope, t0, t1, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    except ValueError:
        return t1 if abs(s0) > 0 else t0


def integrate(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_end: float,
    *,
    t_eval: Optional[np.ndarray] = None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    track: Optional[Tuple[int, Callable[[np.ndarray], np.ndarray]]] = None,
    track_after: float = 0.0,
    guard_slice: Optional[slice] = None,
    guard: float = OVERFLOW_GUARD,
    max_step: float = np.inf,
    wall_budget: Optional[float] = None,
) -> Trajectory:
    """Integrate ``dy/dt = fun(t, y)`` from 0 to ``t_end``.

    ``track=(index, profile_fn)`` records every local maximum and minimum of
    ``|y[index]|`` (for ``t >= track_after``), located to ~1e-13 in time by
    root-finding ``d|y|^2/dt`` on the step interpolant, together with
    ``profile_fn`` evaluated there.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    y0 = np.asarray(y0)
    if project is None:
        project = lambda y: y  # noqa: E731
    if t_eval is None:
        t_eval = np.array([0.0, t_end])
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.size and (t_eval[0] < 0 or t_eval[-1] > t_end * (1 + 1e-12)):
        raise ValueError("t_eval outside [0, t_end]")
    if guard_slice is None:
        guard_slice = slice(None)

    start = time.perf_counter()
    n_rhs = 0

    def counted(t, y):
        nonlocal n_rhs
        n_rhs += 1
        return fun(t, y)

    solver = RK45(counted, 0.0, y0, t_end, rtol=rtol, atol=atol, max_step=max_step)
    first = project(y0)
    samples = np.empty((t_eval.size,) + np.shape(first), dtype=np.result_type(first))
    k = 0
    while k < t_eval.size and t_eval[k] <= 0.0:
        samples[k] = first
        k += 1

    maxima: List[Extremum] = []
    minima: List[Extremum] = []
    if track is not None:
        idx, profile_fn = track
        slope_prev = float(np.real(np.conj(y0[idx]) * solver.f[idx]))
    status = "ok"
    n_steps = 0
    while solver.status == "running":
        t_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(msg or "integration failed", solver.t)
        n_steps += 1
        dense = None
        if k < t_eval.size and t_eval[k] <= solver.t:
            dense = solver.dense_output()
            while k < t_eval.size and t_eval[k] <= solver.t:
                samples[k] = project(dense(t_eval[k]))
                k += 1
        if track is not None:
            slope = float(np.real(np.conj(solver.y[idx]) * solver.f[idx]))
            crossed = slope_prev * slope < 0 or (slope == 0 and slope_prev != 0)
            if crossed and solver.t >= track_after:
                dense = dense or solver.dense_output()
                t_star = _refine_extremum(counted, dense, idx, t_prev, solver.t, slope_prev)
                y_star = dense(t_star)
                ext = Extremum(t_star, float(abs(y_star[idx])), profile_fn(y_star))
                (maxima if slope_prev > 0 else minima).append(ext)
            slope_prev = slope
        if not np.all(np.isfinite(solver.y)) or np.max(np.abs(solver.y[guard_slice])) > guard:
            status = "diverged"
            break
        if wall_budget is not None and time.perf_counter() - start > wall_budget:
            status = "timeout"
            break

    return Trajectory(
        t=t_eval[:k],
        samples=samples[:k],
        final=solver.y.copy(),
        t_final=float(solver.t),
        status=status,
        maxima=maxima,
        minima=minima,
        n_steps=n_steps,
        n_rhs=n_rhs,
        elapsed=time.perf_counter() - start,
    )


def sample_grid(t_end: float, dt: float) -> np.ndarray:
    n = int(round(t_end / dt))
    grid = np.linspace(0.0, n * dt, n + 1)
    return grid[grid <= t_end * (1 + 1e-12)]
