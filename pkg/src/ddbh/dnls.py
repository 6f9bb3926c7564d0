"""Classical limit: the driven-dissipative discrete nonlinear Schroedinger equation.

    i dphi_n/dt = dw phi_n + U |phi_n|^2 phi_n - J (phi_{n+1} + phi_{n-1}) + A - i (gamma/2) phi_n
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, Trajectory, integrate, sample_grid
from .model import ModelParams, as_field, hopping_matrix

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
ROOT_DEDUP = 1e-9
J_STEP = 0.05


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int, last=None):
        super().__init__(f"{message}: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations
        self.last = last


def rhs_function(params: ModelParams):
    """Fast ``f(t, phi)`` closure for the integrator (no validation)."""
    k = hopping_matrix(params)
    lin = params.delta_omega - 0.5j * params.gamma
    u, j, a = params.u, params.j, params.a

    def f(t, phi):
        return -1j * (lin * phi + u * (phi.real**2 + phi.imag**2) * phi - j * (k @ phi) + a)

    return f


def dnls_rhs(field_, params: ModelParams) -> np.ndarray:
    """Time derivative of the classical field."""
    phi = as_field(field_, params)
    return rhs_function(params)(0.0, phi)


def norm(field_) -> float:
    return float(np.sum(np.abs(field_) ** 2))


def energy(field_, params: ModelParams) -> float:
    """Hamiltonian of the conservative part (drive included, loss excluded)."""
    phi = np.asarray(field_, dtype=complex)
    k = hopping_matrix(params)
    dens = np.abs(phi) ** 2
    hop = np.real(np.vdot(phi, k @ phi))
    return float(
        params.delta_omega * dens.sum()
        + 0.5 * params.u * np.sum(dens**2)
        - params.j * hop
        + 2.0 * params.a * np.sum(phi.real)
    )


def integrate_dnls(
    initial,
    params: ModelParams,
    t_end: float,
    tol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    dt: float = 0.1,
    track_center: bool = False,
) -> Trajectory:
    """Integrate the DNLS; ``samples`` holds the field on a grid of spacing ``dt``."""
    phi0 = as_field(initial, params)
    track = (params.center, np.abs) if track_center else None
    return integrate(
        rhs_function(params),
        phi0,
        t_end,
        t_eval=sample_grid(t_end, dt),
        rtol=tol,
        atol=atol,
        track=track,
    )


@dataclass(frozen=True)
class SingleSiteRoot:
    intensity: float
    amplitude: complex


def _check_single_site(params: ModelParams):
    if params.n_sites != 1 or params.j != 0:
        raise ValueError("single-site analysis needs n_sites=1 and J=0 (use params.single_site())")


def single_site_intensities(params: ModelParams) -> List[SingleSiteRoot]:
    """All stationary states of one driven cavity, sorted by intensity.

    The intensity solves ``I [(dw + U I)^2 + gamma^2/4] = A^2`` and the
    amplitude follows as ``phi = -A / (dw + U I - i gamma/2)``.
    """
    _check_single_site(params)
    dw, u, g, a = params.delta_omega, params.u, params.gamma, params.a
    if a == 0:
        return [SingleSiteRoot(0.0, 0j)]
    lin = dw**2 + 0.25 * g**2
    if u == 0:
        if lin == 0:
            raise ValueError("resonant lossless linear cavity has no stationary state")
        intensities = [a**2 / lin]
    else:
        roots = np.roots([u**2, 2 * dw * u, lin, -(a**2)])
        poly = lambda x: x * ((dw + u * x) ** 2 + 0.25 * g**2) - a**2  # noqa: E731
        dpoly = lambda x: 3 * u**2 * x**2 + 4 * dw * u * x + lin  # noqa: E731
        intensities = []
        scale = max(1.0, np.max(np.abs(roots)))
        for r in roots:
            if abs(r.imag) > 1e-6 * scale or r.real <= 0:
                continue
            x = r.real
            for _ in range(3):
                d = dpoly(x)
                if d == 0:
                    break
                x -= poly(x) / d
            intensities.append(x)
        intensities.sort()
        dedup: List[float] = []
        for x in intensities:
            if not dedup or abs(x - dedup[-1]) > ROOT_DEDUP:
                dedup.append(x)
        intensities = dedup
    return [SingleSiteRoot(float(x), complex(-a / (dw + u * x - 0.5j * g))) for x in intensities]


def jacobian(field_, params: ModelParams) -> np.ndarray:
    """Real 2N x 2N Jacobian of the DNLS vector field in (Re phi, Im phi)."""
    phi = np.asarray(field_, dtype=complex)
    n = phi.size
    k = hopping_matrix(params)
    dens = np.abs(phi) ** 2
    # dh = P dphi + Q dphi*  =>  dh/dx = P + Q, dh/dy = i (P - Q)
    p = -1j * (np.diag(params.delta_omega + 2 * params.u * dens) - params.j * k) - 0.5 * params.gamma * np.eye(n)
    q = np.diag(-1j * params.u * phi**2)
    dx = p + q
    dy = 1j * (p - q)
    return np.block([[dx.real, dy.real], [dx.imag, dy.imag]])


def linear_stability(stationary, params: ModelParams) -> np.ndarray:
    """Eigenvalues of the linearisation about a stationary field (stable iff all Re < 0)."""
    phi = as_field(stationary, params)
    return np.linalg.eigvals(jacobian(phi, params))


def spectral_abscissa(eigenvalues) -> float:
    return float(np.max(np.real(eigenvalues)))


def newton_stationary(
    guess,
    params: ModelParams,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> np.ndarray:
    """Stationary field near ``guess``; residual infinity-norm below ``tol``.

    Raises :class:`ConvergenceError` (carrying the last residual) otherwise.
    """
    phi = as_field(guess, params).copy()
    f = rhs_function(params)
    n = phi.size
    res = f(0.0, phi)
    rnorm = float(np.max(np.abs(res)))
    for it in range(max_iter):
        if rnorm < tol:
            return phi
        jac = jacobian(phi, params)
        try:
            step = np.linalg.solve(jac, -np.concatenate([res.real, res.imag]))
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Jacobian", rnorm, it, phi) from None
        dphi = step[:n] + 1j * step[n:]
        lam = 1.0
        while True:
            trial = phi + lam * dphi
            tres = f(0.0, trial)
            tnorm = float(np.max(np.abs(tres)))
            if np.isfinite(tnorm) and (tnorm < rnorm or lam < 1e-3):
                break
            lam *= 0.5
        phi, res, rnorm = trial, tres, tnorm
        if not np.isfinite(rnorm) or np.max(np.abs(phi)) > 1e6:
            raise ConvergenceError("Newton diverged", rnorm, it + 1, phi)
    if rnorm < tol:
        return phi
    raise ConvergenceError("Newton did not converge", rnorm, max_iter, phi)


def anti_continuous_soliton(params: ModelParams, site: Optional[int] = None) -> np.ndarray:
    """J=0 seed: one site on the highest single-site root, the rest on the lowest."""
    roots = single_site_intensities(params.single_site())
    if len(roots) < 2:
        raise ValueError("single site has a unique state; no anti-continuous soliton exists")
    phi = np.full(params.n_sites, roots[0].amplitude, dtype=complex)
    phi[params.center if site is None else site] = roots[-1].amplitude
    return phi


def homogeneous_seed(params: ModelParams, which: int = 0) -> np.ndarray:
    """Flat field on a single-site root of the effective detuning dw - 2J (periodic lattice)."""
    eff = params.single_site()
    eff = ModelParams(1, 0.0, eff.u, eff.a, params.delta_omega - 2 * params.j, eff.gamma)
    roots = single_site_intensities(eff)
    return np.full(params.n_sites, roots[which].amplitude, dtype=complex)


@dataclass
class BranchPoint:
    j: float
    field: np.ndarray
    stable: bool
    residual: float
    abscissa: float
    min_abs_eigenvalue: float


@dataclass
class StationaryBranch:
    points: List[BranchPoint] = field(default_factory=list)
    step: float = J_STEP
    tol: float = NEWTON_TOL
    end_j: Optional[float] = None  # last converged J when the branch terminated early
    failed_j: Optional[float] = None  # first J at which Newton failed

    @property
    def j(self) -> np.ndarray:
        return np.array([p.j for p in self.points])

    @property
    def terminated(self) -> bool:
        return self.failed_j is not None

    def center_amplitudes(self) -> np.ndarray:
        return np.array([abs(p.field[len(p.field) // 2]) for p in self.points])


def _branch_point(j, phi, params, tol):
    ev = linear_stability(phi, params)
    res = float(np.max(np.abs(rhs_function(params)(0.0, phi))))
    return BranchPoint(
        j=float(j),
        field=phi,
        stable=bool(np.all(ev.real < 0)),
        residual=res,
        abscissa=spectral_abscissa(ev),
        min_abs_eigenvalue=float(np.min(np.abs(ev))),
    )


def continue_branch(
    seed,
    params: ModelParams,
    j_path: Sequence[float],
    tol: float = NEWTON_TOL,
    min_step: float = J_STEP / 64,
) -> StationaryBranch:
    """Natural-parameter continuation of a stationary field along ``j_path``.

    Each point is seeded by the previous solution. When Newton fails, the
    interval is bisected down to ``min_step`` before the branch is declared
    terminated; ``end_j`` and ``failed_j`` bracket the end.
    """
    j_path = [float(x) for x in j_path]
    if not j_path:
        return StationaryBranch(tol=tol)
    step = j_path[1] - j_path[0] if len(j_path) > 1 else J_STEP
    branch = StationaryBranch(step=step, tol=tol)
    p0 = params.with_hopping(j_path[0])
    phi = newton_stationary(seed, p0, tol)  # raises on immediate failure
    branch.points.append(_branch_point(j_path[0], phi, p0, tol))

    for target in j_path[1:]:
        j_cur = branch.points[-1].j
        while j_cur < target - 1e-14 or j_cur > target + 1e-14:
            trial_j = target
            while True:
                p = params.with_hopping(trial_j)
                try:
                    phi_new = newton_stationary(phi, p, tol)
                    break
                except ConvergenceError:
                    if abs(trial_j - j_cur) <= min_step:
                        branch.end_j = j_cur
                        branch.failed_j = trial_j
                        log.info("branch terminated between J=%.6f and J=%.6f", j_cur, trial_j)
                        return branch
                    trial_j = 0.5 * (j_cur + trial_j)
            phi = phi_new
            j_cur = trial_j
            if abs(j_cur - target) > 1e-14:
                branch.points.append(_branch_point(j_cur, phi, p, tol))
        branch.points.append(_branch_point(target, phi, params.with_hopping(target), tol))
    return branch
