"""Convergence verdicts for trajectories and the regime classifier.

A run is steady when the summed first-moment change over a window of length
``dt`` stays below ``tol``; otherwise consecutive maxima of the centre-site
amplitude are compared site by site to detect a time-periodic state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.signal import find_peaks

from .integrate import Trajectory

STEADY_TOL = 1e-7
PERIODIC_TOL = 1e-7
STEADY_DT = 1.0
BURN_IN = 20.0
FLAT_TOL = 1e-5
MIN_OSCILLATION = 1e-6
PEAK_PROMINENCE = 0.05  # fraction of the profile range
BACKGROUND_FLATNESS = 0.25

LABELS = ("homogeneous", "ripple", "stationary_soliton", "oscillating_soliton", "unknown")


class TooFewExtrema(ValueError):
    """Fewer than three maxima of the centre amplitude were found."""


@dataclass
class SteadyVerdict:
    status: str  # steady | periodic | transient | diverged
    residual: float
    period: Optional[float] = None
    extremal_profiles: Optional[Tuple[np.ndarray, np.ndarray]] = None  # (at t_min, at t_max)
    t_converged: Optional[float] = None
    amplitude_range: Optional[Tuple[float, float]] = None  # centre (min, max) over a period

    def mean_profile(self) -> Optional[np.ndarray]:
        if self.extremal_profiles is None:
            return None
        lo, hi = self.extremal_profiles
        return 0.5 * (lo + hi)


def _window_index(t: np.ndarray, dt: float) -> int:
    spacing = np.diff(t)
    h = float(np.median(spacing))
    lag = int(round(dt / h))
    if lag < 1 or not np.allclose(spacing, h, rtol=1e-6, atol=1e-12) or abs(lag * h - dt) > 1e-6 * dt:
        raise ValueError("sample grid must be uniform with dt a multiple of its spacing")
    return lag


def window_residuals(trajectory: Trajectory, dt: float = STEADY_DT) -> Tuple[np.ndarray, np.ndarray]:
    """``sum_n |a_n(t) - a_n(t + dt)|`` at every window start ``t`` on the sample grid."""
    t = trajectory.t
    if t.size < 2 or t[-1] - t[0] < dt * (1 - 1e-9):
        raise ValueError(f"trajectory too short for a window of length {dt}")
    lag = _window_index(t, dt)
    a = trajectory.first
    res = np.sum(np.abs(a[lag:] - a[:-lag]), axis=1)
    return t[:-lag], res


def detect_steady(
    trajectory: Trajectory,
    dt: float = STEADY_DT,
    tol: float = STEADY_TOL,
    burn_in: float = BURN_IN,
    periodic_tol: float = PERIODIC_TOL,
) -> SteadyVerdict:
    """Steady, periodic, transient or diverged.

    The windowed criterion must hold for the final window and is only
    trusted after ``burn_in`` (a run shorter than that is judged on its
    last window alone). ``t_converged`` is the start of the run of passing
    windows that reaches the end.
    """
    if trajectory.diverged:
        return SteadyVerdict("diverged", float("inf"))
    starts, res = window_residuals(trajectory, dt)
    last = float(res[-1])
    if last <= tol:
        ok = res <= tol
        ok &= starts >= min(burn_in, starts[-1])
        idx = len(ok) - 1
        while idx > 0 and ok[idx - 1]:
            idx -= 1
        return SteadyVerdict("steady", last, t_converged=float(starts[idx]))
    try:
        verdict = detect_periodic(trajectory, tol=periodic_tol)
    except TooFewExtrema:
        return SteadyVerdict("transient", last)
    if verdict.status == "transient":
        verdict.residual = last
    return verdict


def _sampled_maxima(trajectory: Trajectory, site: int):
    """Fallback when the integrator did not track extrema: parabolic peaks of sampled |a_c|."""
    amp = np.abs(trajectory.first[:, site])
    prof = np.abs(trajectory.first)
    t = trajectory.t
    out = []
    for i in range(1, len(amp) - 1):
        if amp[i] > amp[i - 1] and amp[i] >= amp[i + 1]:
            out.append((float(t[i]), float(amp[i]), prof[i]))
    return out


def detect_periodic(
    trajectory: Trajectory,
    tol: float = PERIODIC_TOL,
    site: Optional[int] = None,
    min_oscillation: float = MIN_OSCILLATION,
) -> SteadyVerdict:
    """Compare site-amplitude profiles at consecutive maxima of the centre site.

    Uses the refined extrema recorded during integration when present.
    Raises :class:`TooFewExtrema` with fewer than three maxima.
    """
    if trajectory.diverged:
        return SteadyVerdict("diverged", float("inf"))
    n = trajectory.first.shape[1]
    c = n // 2 if site is None else site
    if trajectory.maxima:
        maxima = [(e.t, e.value, np.asarray(e.profile)) for e in trajectory.maxima]
        minima = [(e.t, e.value, np.asarray(e.profile)) for e in trajectory.minima]
    else:
        maxima = _sampled_maxima(trajectory, c)
        minima = []
    if len(maxima) < 3:
        raise TooFewExtrema(f"found {len(maxima)} maxima, need 3")
    (t0, v0, p0), (t1, v1, p1) = maxima[-2], maxima[-1]
    distance = float(np.sum(np.abs(p1 - p0)))
    period = t1 - t0
    between = [m for m in minima if t0 <= m[0] <= t1]
    if between:
        lo = min(between, key=lambda m: m[1])
        lo_profile, lo_value = lo[2], lo[1]
    else:
        window = (trajectory.t >= t0) & (trajectory.t <= t1)
        amp = np.abs(trajectory.first[window, c])
        if amp.size == 0:
            lo_profile, lo_value = p1, v1
        else:
            i = int(np.argmin(amp))
            lo_profile, lo_value = np.abs(trajectory.first[window][i]), float(amp[i])
    swing = v1 - lo_value
    if distance <= tol and period > 0 and swing > min_oscillation:
        return SteadyVerdict(
            "periodic",
            distance,
            period=float(period),
            extremal_profiles=(np.asarray(lo_profile), np.asarray(p1)),
            amplitude_range=(float(lo_value), float(v1)),
        )
    return SteadyVerdict("transient", distance)


def _prominent_maxima(profile: np.ndarray, boundary: str) -> np.ndarray:
    p = np.asarray(profile, dtype=float)
    n = p.size
    span = p.max() - p.min()
    if boundary == "periodic":
        ext = np.concatenate([p, p, p])
        peaks, _ = find_peaks(ext, prominence=PEAK_PROMINENCE * span)
        return np.unique(peaks[(peaks >= n) & (peaks < 2 * n)] - n)
    # open chain: pad with a floor so edge sites can count as maxima
    ext = np.concatenate([[p.min() - span], p, [p.min() - span]])
    peaks, _ = find_peaks(ext, prominence=PEAK_PROMINENCE * span)
    return peaks - 1


def _localized(profile: np.ndarray, boundary: str) -> bool:
    """The global maximum stands on a flat far field (sites further than N/4 away)."""
    p = np.asarray(profile, dtype=float)
    n = p.size
    c = int(np.argmax(p))
    dist = np.abs(np.arange(n) - c)
    if boundary == "periodic":
        dist = np.minimum(dist, n - dist)
    far = p[dist > n / 4]
    if far.size == 0:
        return False
    height = p[c] - np.median(far)
    return height > 0 and (far.max() - far.min()) < BACKGROUND_FLATNESS * height


def classify_mode(verdict: SteadyVerdict, profile, boundary: str = "periodic") -> str:
    """Label a converged state from its site-amplitude profile.

    For periodic verdicts pass the mean of the two extremal profiles
    (``verdict.mean_profile()``).
    """
    if verdict.status not in ("steady", "periodic"):
        return "unknown"
    p = np.asarray(profile, dtype=float)
    if p.size == 0 or not np.all(np.isfinite(p)):
        return "unknown"
    if p.max() - p.min() < FLAT_TOL:
        return "homogeneous"
    if verdict.status == "steady":
        if _localized(p, boundary):
            return "stationary_soliton"
        if len(_prominent_maxima(p, boundary)) >= 2:
            return "ripple"
        return "unknown"
    if _localized(p, boundary):
        return "oscillating_soliton"
    return "unknown"
