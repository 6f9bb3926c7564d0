"""Gutzwiller (product-state) dynamics: one truncated-Fock density matrix per site.

Each site evolves under its own Lindblad equation with the effective Hamiltonian

    H_n = dw a^+a + A (a^+ + a) + U/2 a^+a^+aa - J (s_n^* a + s_n a^+),
    s_n = <a_{n-1}> + <a_{n+1}>,

where the neighbour means are taken from the current state inside every
right-hand-side evaluation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import gammaln

from .dnls import ConvergenceError
from .integrate import Trajectory, integrate, sample_grid
from .model import GutzwillerState, ModelParams, hopping_matrix

log = logging.getLogger(__name__)

N_MAX = 15
TRUNCATION_THRESHOLD = 1e-6
GW_RTOL = 1e-9
GW_ATOL = 1e-12
BACKGROUND_T = 200.0
BACKGROUND_TOL = 1e-7


class TruncationError(RuntimeError):
    """Top Fock level is populated beyond the validity threshold."""


@dataclass(frozen=True)
class FockOperators:
    a: np.ndarray
    a_dag: np.ndarray
    n: np.ndarray

    @classmethod
    def build(cls, n_max: int) -> "FockOperators":
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        a = np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(complex)
        a_dag = a.conj().T.copy()
        return cls(a, a_dag, a_dag @ a)

    @property
    def dim(self) -> int:
        return self.a.shape[0]


def coherent_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    """Untruncated-normalisation Fock amplitudes e^{-|a|^2/2} a^m / sqrt(m!), m <= n_max."""
    m = np.arange(n_max + 1)
    r = abs(alpha)
    if r == 0:
        c = np.zeros(n_max + 1, complex)
        c[0] = 1.0
        return c
    logmag = -0.5 * r**2 + m * np.log(r) - 0.5 * gammaln(m + 1)
    return np.exp(logmag) * np.exp(1j * m * np.angle(alpha))


def truncation_error(alpha: complex, n_max: int) -> float:
    """Poisson weight of a coherent state lying above ``n_max``."""
    return float(max(0.0, 1.0 - np.sum(np.abs(coherent_amplitudes(alpha, n_max)) ** 2)))


def coherent_state_rho(alpha: complex, n_max: int = N_MAX) -> np.ndarray:
    """|alpha><alpha| truncated at ``n_max`` and renormalised to unit trace."""
    nbar = abs(alpha) ** 2
    if nbar >= n_max:
        raise ValueError(f"|alpha|^2 = {nbar:.3g} must be below n_max = {n_max}")
    if nbar > n_max / 2:
        warnings.warn(
            f"|alpha|^2 = {nbar:.3g} exceeds n_max/2; truncation error {truncation_error(alpha, n_max):.2e}",
            stacklevel=2,
        )
    c = coherent_amplitudes(alpha, n_max)
    c = c / np.linalg.norm(c)
    return np.outer(c, c.conj())


def fock_rho(m: int, n_max: int = N_MAX) -> np.ndarray:
    rho = np.zeros((n_max + 1, n_max + 1), complex)
    rho[m, m] = 1.0
    return rho


def product_state(rhos) -> GutzwillerState:
    return GutzwillerState(np.array(rhos, dtype=complex))


def rhs_function(params: ModelParams, n_max: int):
    """Fast ``f(t, y)`` on the flattened stack of site density matrices.

    The derivative is assembled as Z + Z^H, so it is Hermitian to the last bit.
    """
    ops = FockOperators.build(n_max)
    a, ad, num = ops.a, ops.a_dag, ops.n
    n, d = params.n_sites, ops.dim
    k = hopping_matrix(params)
    h0 = params.delta_omega * num + params.a * (ad + a) + 0.5 * params.u * (ad @ ad @ a @ a)
    g = params.gamma
    j = params.j
    at = a.T.copy()

    def f(t, y):
        r = y.reshape(n, d, d)
        mean_a = np.einsum("nij,ij->n", r, at)
        s = k @ mean_a
        h = h0[None] - j * (s.conj()[:, None, None] * a[None] + s[:, None, None] * ad[None])
        z = -1j * (h @ r) + g * (0.5 * (a @ r @ ad) - 0.5 * (num @ r))
        return (z + np.conj(np.swapaxes(z, 1, 2))).ravel()

    return f


def site_means(state: GutzwillerState) -> np.ndarray:
    """<a_n> = tr(rho_n a) for every site."""
    ops = FockOperators.build(state.n_max)
    return np.einsum("nij,ji->n", state.rhos, ops.a)


def site_densities(state: GutzwillerState) -> np.ndarray:
    ops = FockOperators.build(state.n_max)
    return np.real(np.einsum("nij,ji->n", state.rhos, ops.n))


def _check_state(state: GutzwillerState, tol: float = 1e-8):
    herm = np.max(np.abs(state.rhos - np.conj(np.swapaxes(state.rhos, 1, 2))))
    tr = np.max(np.abs(state.traces() - 1.0))
    if herm > tol or tr > tol:
        raise ValueError(f"invalid density matrices (hermiticity {herm:.2e}, trace {tr:.2e})")


def gutzwiller_rhs(state: GutzwillerState, params: ModelParams) -> GutzwillerState:
    """Time derivative of every site density matrix with self-consistent neighbour means."""
    if state.n_sites != params.n_sites:
        raise ValueError("state and params disagree on n_sites")
    _check_state(state)
    dy = rhs_function(params, state.n_max)(0.0, state.pack())
    return GutzwillerState.unpack(dy, state.n_sites, state.n_max)


@dataclass
class GutzwillerRun:
    """Site observables sampled along a Gutzwiller evolution."""

    t: np.ndarray
    mean_a: np.ndarray  # (T, N) complex
    density: np.ndarray  # (T, N)
    top_population: np.ndarray  # (T, N)
    trace: np.ndarray  # (T, N)
    min_eigenvalue: np.ndarray  # (T,)
    purity: np.ndarray  # (T, N)
    final: GutzwillerState
    threshold: float
    status: str
    trajectory: Trajectory
    snapshots: Optional[List[GutzwillerState]] = None

    @property
    def valid(self) -> bool:
        """Truncation respected at every sampled time."""
        return bool(np.all(self.top_population < self.threshold))

    @property
    def max_top_population(self) -> float:
        return float(np.max(self.top_population))

    def trace_drift_rate(self) -> float:
        """max |tr rho - 1| divided by elapsed time."""
        span = self.t[-1] - self.t[0]
        drift = float(np.max(np.abs(self.trace - 1.0)))
        return drift / span if span > 0 else drift


def evolve_gutzwiller(
    initial: GutzwillerState,
    params: ModelParams,
    t_end: float,
    tol: float = GW_RTOL,
    atol: float = GW_ATOL,
    dt: float = 0.1,
    threshold: float = TRUNCATION_THRESHOLD,
    strict: bool = True,
    keep_snapshots: bool = False,
    wall_budget: Optional[float] = None,
) -> GutzwillerRun:
    """Integrate the coupled site master equations.

    With ``strict`` a top-level population above ``threshold`` in the
    initial state raises :class:`TruncationError`; otherwise the run goes
    ahead and ``valid`` reports the breach. Sampled density matrices are
    Hermitian-symmetrised before observables are taken.
    """
    if initial.n_sites != params.n_sites:
        raise ValueError("initial state and params disagree on n_sites")
    _check_state(initial)
    top0 = float(np.max(initial.top_population()))
    if top0 >= threshold:
        msg = f"initial top-level population {top0:.2e} exceeds threshold {threshold:.0e}"
        if strict:
            raise TruncationError(msg)
        log.warning("%s; run will be flagged invalid", msg)

    n, nm = params.n_sites, initial.n_max
    d = nm + 1
    ops = FockOperators.build(nm)
    snaps: List[GutzwillerState] = []

    def project(y):
        r = y.reshape(n, d, d)
        r = 0.5 * (r + np.conj(np.swapaxes(r, 1, 2)))
        if keep_snapshots:
            snaps.append(GutzwillerState(r.copy()))
        mean = np.einsum("nij,ji->n", r, ops.a)
        dens = np.einsum("nij,ji->n", r, ops.n)
        top = r[:, -1, -1]
        tr = np.einsum("nii->n", r)
        pur = np.einsum("nij,nji->n", r, r)
        mineig = np.min(np.linalg.eigvalsh(r))
        return np.concatenate([mean, dens, top, tr, pur, [mineig]])

    traj = integrate(
        rhs_function(params, nm),
        initial.pack(),
        t_end,
        t_eval=sample_grid(t_end, dt),
        rtol=tol,
        atol=atol,
        project=project,
        guard=np.inf,
        wall_budget=wall_budget,
    )
    traj.n_first = n
    s = traj.samples
    final = GutzwillerState.unpack(traj.final, n, nm)
    return GutzwillerRun(
        t=traj.t,
        mean_a=s[:, :n],
        density=s[:, n : 2 * n].real,
        top_population=s[:, 2 * n : 3 * n].real,
        trace=s[:, 3 * n : 4 * n].real,
        min_eigenvalue=s[:, -1].real,
        purity=s[:, 4 * n : 5 * n].real,
        final=final,
        threshold=threshold,
        status=traj.status,
        trajectory=traj,
        snapshots=snaps if keep_snapshots else None,
    )


def homogeneous_background(
    params: ModelParams,
    n_max: int = N_MAX,
    initial: Optional[np.ndarray] = None,
    t_end: float = BACKGROUND_T,
    tol: float = BACKGROUND_TOL,
) -> np.ndarray:
    """Self-consistent translation-invariant fixed point, returned as one site's rho.

    A single site is evolved with both neighbour means equal to its own mean.
    Raises :class:`ConvergenceError` if the final derivative exceeds ``tol``.
    """
    single = ModelParams(1, params.j, params.u, params.a, params.delta_omega, params.gamma, "periodic")
    rho0 = fock_rho(0, n_max) if initial is None else np.asarray(initial, dtype=complex)
    f = rhs_function(single, n_max)
    traj = integrate(f, rho0.ravel(), t_end, rtol=1e-10, atol=1e-13, guard=np.inf)
    rho = traj.final.reshape(n_max + 1, n_max + 1)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    res = float(np.max(np.abs(f(0.0, rho.ravel()))))
    if res > tol:
        raise ConvergenceError("homogeneous background not stationary", res, traj.n_steps, rho)
    return rho


@dataclass
class LocalizationDecay:
    t: np.ndarray
    contrast: np.ndarray
    plateau: Optional[float]
    t_plateau: Optional[float]
    half_life: float  # inf when the contrast never halves within the run
    censored: bool


def localization_contrast(run: GutzwillerRun, center: Optional[int] = None, reference: int = 0) -> LocalizationDecay:
    """Contrast n_c(t) - n_ref(t) and its half-life.

    The plateau is the contrast at the first local maximum that follows the
    first local minimum (the rebound after the abrupt initial drop); the
    half-life is the first later time at which the contrast falls below half
    of it.
    """
    c = run.density.shape[1] // 2 if center is None else center
    contrast = run.density[:, c] - run.density[:, reference]
    t = run.t
    i_min = next((i for i in range(1, len(contrast) - 1) if contrast[i] < contrast[i - 1] and contrast[i] <= contrast[i + 1]), None)
    if i_min is None:
        return LocalizationDecay(t, contrast, None, None, float("inf"), True)
    i_max = next((i for i in range(i_min + 1, len(contrast) - 1) if contrast[i] > contrast[i - 1] and contrast[i] >= contrast[i + 1]), None)
    if i_max is None:
        return LocalizationDecay(t, contrast, None, None, float("inf"), True)
    plateau = float(contrast[i_max])
    below = np.nonzero(contrast[i_max:] < 0.5 * plateau)[0]
    if below.size == 0:
        return LocalizationDecay(t, contrast, plateau, float(t[i_max]), float("inf"), True)
    i = i_max + int(below[0])
    # linear interpolation of the crossing
    c0, c1 = contrast[i - 1], contrast[i]
    half = 0.5 * plateau
    t_half = t[i - 1] + (t[i] - t[i - 1]) * (c0 - half) / (c0 - c1) if c0 != c1 else t[i]
    return LocalizationDecay(t, contrast, plateau, float(t[i_max]), float(t_half), False)


@dataclass
class ProtocolResult:
    j: float
    run: GutzwillerRun
    decay: LocalizationDecay
    background_density: float
    initial_center_density: float
    plateau_center_density: Optional[float]


def localization_protocol(
    j: float,
    n_sites: int = 15,
    n_max: int = N_MAX,
    kick_density: float = 8.8,
    t_end: float = 100.0,
    dt: float = 0.1,
    base: Optional[ModelParams] = None,
) -> ProtocolResult:
    """Homogeneous steady background with a coherent kick on the centre site.

    The kicked site exceeds the truncation threshold by construction, so the
    run is flagged rather than aborted.
    """
    from .model import star_params

    params = (base or star_params(n_sites)).replace(n_sites=n_sites).with_hopping(j)
    bg = homogeneous_background(params, n_max)
    rhos = np.repeat(bg[None], n_sites, axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rhos[params.center] = coherent_state_rho(np.sqrt(kick_density), n_max)
    run = evolve_gutzwiller(GutzwillerState(rhos), params, t_end, dt=dt, strict=False)
    decay = localization_contrast(run)
    plateau_nc = None
    if decay.t_plateau is not None:
        plateau_nc = float(run.density[np.searchsorted(run.t, decay.t_plateau), params.center])
    return ProtocolResult(
        j=float(j),
        run=run,
        decay=decay,
        background_density=float(np.real(np.trace(bg @ FockOperators.build(n_max).n))),
        initial_center_density=float(run.density[0, params.center]),
        plateau_center_density=plateau_nc,
    )
