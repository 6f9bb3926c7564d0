"""Second-order cumulant expansion (SOE) of the driven-dissipative Bose-Hubbard lattice.

The state is the set of first moments <a_n>, the normal matrix
M[l, n] = <a_l^+ a_n> and the anomalous matrix S[l, n] = <a_l a_n>. Every
four-operator average in their equations of motion is closed with

    <A1 A2 A3 A4> ~ sum_{j<k} <Aj Ak> <Al> <Am> - 5 <A1><A2><A3><A4>

i.e. the product of means plus all single-fluctuation-pair corrections.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .dnls import ConvergenceError, single_site_intensities
from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, Trajectory, integrate, sample_grid
from .model import CorrelationState, ModelParams, hopping_matrix

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
DEDUP_TOL = 1e-6
SYMMETRY_TOL = 1e-8
T_EVOL = 100.0


class Op(NamedTuple):
    """A bosonic ladder operator on one site; ``dag`` marks the creation operator."""

    dag: bool
    site: int


def create(site: int) -> Op:
    return Op(True, site)


def annihilate(site: int) -> Op:
    return Op(False, site)


def _check_op(op, n):
    if not isinstance(op, tuple) or len(op) != 2 or not isinstance(op[0], (bool, np.bool_)):
        raise ValueError(f"invalid operator label {op!r}")
    if not 0 <= int(op[1]) < n:
        raise IndexError(f"site {op[1]} out of range for {n} sites")


def mean(op: Op, state: CorrelationState) -> complex:
    value = state.first[op.site]
    return np.conj(value) if op.dag else value


def pair(op1: Op, op2: Op, state: CorrelationState) -> complex:
    """<op1 op2> in the written order, mapped onto the stored matrices.

    The anti-normal-ordered case uses [a_i, a_j^+] = delta_ij.
    """
    i, j = op1.site, op2.site
    if op1.dag and not op2.dag:
        return state.normal[i, j]
    if not op1.dag and not op2.dag:
        return state.anomalous[i, j]
    if op1.dag and op2.dag:
        return np.conj(state.anomalous[i, j])
    return state.normal[j, i] + (1.0 if i == j else 0.0)


def closure_fourth(ops: Sequence[Op], state: CorrelationState) -> complex:
    """Second-order closure of a four-operator average, keeping operator order in each pair."""
    if len(ops) != 4:
        raise ValueError("closure_fourth needs exactly four operators")
    for op in ops:
        _check_op(op, state.n_sites)
    ops = [Op(bool(o[0]), int(o[1])) for o in ops]
    means = [mean(o, state) for o in ops]
    total = 0j
    for j, k in combinations(range(4), 2):
        l, m = (x for x in range(4) if x not in (j, k))
        total += pair(ops[j], ops[k], state) * means[l] * means[m]
    return total - 5.0 * means[0] * means[1] * means[2] * means[3]


def closed_moments(first, normal, anomalous):
    """Vectorised closures of the three four-operator families.

    Returns ``(T1, Q)`` with ``T1[l, n] = <a_l^+ a_n^+ a_n a_n>`` and
    ``Q[l, n] = <a_l^+ a_l a_l a_n>``; the remaining family
    ``<a_l^+ a_l^+ a_l a_n>`` is ``T1^H``.
    """
    p = first
    pc = p.conj()
    dm = np.diag(normal)
    ds = np.diag(anomalous)
    pl = p[:, None]
    plc = pc[:, None]
    pn = p[None, :]
    pnc = pc[None, :]
    t1 = (
        anomalous.conj() * pn**2
        + 2.0 * normal * pnc * pn
        + 2.0 * dm[None, :] * plc * pn
        + ds[None, :] * plc * pnc
        - 5.0 * plc * pnc * pn**2
    )
    q = (
        2.0 * dm[:, None] * pl * pn
        + normal * pl**2
        + ds[:, None] * plc * pn
        + 2.0 * anomalous * plc * pl
        - 5.0 * plc * pl**2 * pn
    )
    return t1, q


def rhs_function(params: ModelParams):
    """Fast ``f(t, y)`` on the packed state ``[first, M.ravel(), S.ravel()]``.

    Each matrix derivative is assembled as X - X^H (normal) or X + X^T
    (anomalous) so the storage symmetries are preserved to the last bit.
    """
    n = params.n_sites
    nn = n * n
    k = hopping_matrix(params)
    dw, u, j, a, g = params.delta_omega, params.u, params.j, params.a, params.gamma
    lin1 = dw - 0.5j * g
    lin2 = 2.0 * dw - 1j * g
    diag = np.diag_indices(n)

    def f(t, y):
        p = y[:n]
        m = y[n : n + nn].reshape(n, n)
        s = y[n + nn :].reshape(n, n)
        pc = p.conj()
        dm = np.diag(m)
        ds = np.diag(s)
        out = np.empty_like(y)

        # i d<a_n>/dt
        dp = lin1 * p + a - j * (k @ p) + u * (2.0 * dm * p + ds * pc - 2.0 * p * p * pc)
        out[:n] = -1j * dp

        t1, q = closed_moments(p, m, s)

        # i d<a_l^+ a_n>/dt = X - X^H, X anti-Hermitian part builder
        km = k @ m
        drive = a * pc
        x = -0.5j * g * m + j * km + u * t1
        xm = (x - x.conj().T) + (drive[:, None] - drive.conj()[None, :])
        out[n : n + nn] = (-1j * xm).ravel()

        # i d<a_l a_n>/dt
        z = 0.5 * lin2 * s + a * p[:, None] - j * (k @ s) + u * q
        zs = z + z.T
        zs[diag] += u * ds
        out[n + nn :] = (-1j * zs).ravel()
        return out

    return f


def soe_rhs(state: CorrelationState, params: ModelParams) -> CorrelationState:
    """Time derivative of a correlation state."""
    if state.n_sites != params.n_sites:
        raise ValueError("state and params disagree on n_sites")
    err = state.symmetry_error()
    if err > SYMMETRY_TOL:
        raise ValueError(f"state violates Hermitian/symmetric storage by {err:.3e}")
    dy = rhs_function(params)(0.0, state.pack())
    return CorrelationState.unpack(dy, params.n_sites)


def _project(n):
    def project(y):
        return np.concatenate([y[:n], y[n : n + n * n : n + 1]])

    return project


def _profile(n):
    return lambda y: np.abs(y[:n])


def integrate_soe(
    initial: CorrelationState,
    params: ModelParams,
    t_end: float = T_EVOL,
    tol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    dt: float = 0.1,
    track_center: bool = True,
    wall_budget: Optional[float] = None,
) -> Trajectory:
    """Integrate the closed moment equations.

    ``samples[:, :N]`` are the first moments and ``samples[:, N:]`` the
    on-site densities; ``final`` is the packed end state. Runs whose first
    moments exceed the overflow guard stop with status ``diverged``.
    """
    if initial.n_sites != params.n_sites:
        raise ValueError("initial state and params disagree on n_sites")
    n = params.n_sites
    traj = integrate(
        rhs_function(params),
        initial.pack(),
        t_end,
        t_eval=sample_grid(t_end, dt),
        rtol=tol,
        atol=atol,
        project=_project(n),
        track=(params.center, _profile(n)) if track_center else None,
        guard_slice=slice(0, n),
        wall_budget=wall_budget,
    )
    traj.n_first = n
    return traj


def final_state(traj: Trajectory, n_sites: int) -> CorrelationState:
    return CorrelationState.unpack(traj.final, n_sites).symmetrized()


# ---------------------------------------------------------------------------
# stationary states

class _Layout:
    """Index maps between the packed complex state and its independent real unknowns."""

    _cache: dict = {}

    def __init__(self, n):
        iu = np.triu_indices(n)
        off = np.triu_indices(n, 1)
        base_s = n + n * n
        self.n = n
        self.first = np.arange(n)
        self.m_diag = n + np.arange(n) * (n + 1)
        self.m_off = n + off[0] * n + off[1]
        self.m_off_t = n + off[1] * n + off[0]
        self.s_up = base_s + iu[0] * n + iu[1]
        self.s_up_t = base_s + iu[1] * n + iu[0]
        self.size = 2 * n * n + 3 * n

    @classmethod
    def get(cls, n):
        if n not in cls._cache:
            cls._cache[n] = cls(n)
        return cls._cache[n]

    def to_real(self, y):
        f, mo, su = y[self.first], y[self.m_off], y[self.s_up]
        return np.concatenate([f.real, f.imag, y[self.m_diag].real, mo.real, mo.imag, su.real, su.imag])

    def from_real(self, x):
        n = self.n
        n_off = self.m_off.size
        n_up = self.s_up.size
        y = np.zeros(n + 2 * n * n, complex)
        y[self.first] = x[:n] + 1j * x[n : 2 * n]
        i = 2 * n
        y[self.m_diag] = x[i : i + n]
        i += n
        mo = x[i : i + n_off] + 1j * x[i + n_off : i + 2 * n_off]
        i += 2 * n_off
        y[self.m_off] = mo
        y[self.m_off_t] = mo.conj()
        su = x[i : i + n_up] + 1j * x[i + n_up : i + 2 * n_up]
        y[self.s_up_t] = su
        y[self.s_up] = su
        return y


def to_real(state: CorrelationState) -> np.ndarray:
    """Independent real unknowns: Re/Im first, upper-triangular M (real diagonal), upper-triangular S."""
    return _Layout.get(state.n_sites).to_real(state.pack())


def from_real(x: np.ndarray, n: int) -> CorrelationState:
    return CorrelationState.unpack(_Layout.get(n).from_real(np.asarray(x, dtype=float)), n)


def _residual_real(f, n):
    lay = _Layout.get(n)

    def res(x):
        return lay.to_real(f(0.0, lay.from_real(x)))

    return res


def _fd_jacobian(res, x, r0=None, eps=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        cols.append((res(x + e) - res(x - e)) / (2 * eps))
    return np.column_stack(cols)


def newton_steady_soe(
    guess: CorrelationState,
    params: ModelParams,
    tol: float = NEWTON_TOL,
    max_iter: int = 50,
) -> CorrelationState:
    """Stationary correlation state near ``guess`` (finds unstable states too).

    Iterates on the 2N^2 + 3N independent real unknowns with a
    finite-difference Jacobian and backtracking. Raises
    :class:`ConvergenceError` with the last iterate in ``.last``; the loop
    is bounded by ``max_iter``.
    """
    n = params.n_sites
    if guess.n_sites != n:
        raise ValueError("guess and params disagree on n_sites")
    res = _residual_real(rhs_function(params), n)
    x = to_real(guess.symmetrized())
    if not np.all(np.isfinite(x)):
        raise ValueError("guess has non-finite entries")
    r = res(x)
    rnorm = float(np.max(np.abs(r)))
    for it in range(max_iter):
        if rnorm < tol:
            return from_real(x, n)
        jac = _fd_jacobian(res, x)
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, -r, rcond=None)[0]
        lam = 1.0
        while True:
            xt = x + lam * dx
            rt = res(xt)
            tnorm = float(np.max(np.abs(rt)))
            if np.isfinite(tnorm) and (tnorm < rnorm or lam < 1e-3):
                break
            lam *= 0.5
        x, r, rnorm = xt, rt, tnorm
        if not np.isfinite(rnorm) or np.max(np.abs(x)) > 1e6:
            raise ConvergenceError("SOE Newton diverged", rnorm, it + 1, from_real(x, n))
    if rnorm < tol:
        return from_real(x, n)
    raise ConvergenceError("SOE Newton did not converge", rnorm, max_iter, from_real(x, n))


def stationary_residual(state: CorrelationState, params: ModelParams) -> float:
    return float(np.max(np.abs(rhs_function(params)(0.0, state.pack()))))


def soe_jacobian(state: CorrelationState, params: ModelParams) -> np.ndarray:
    """Finite-difference Jacobian in the independent real unknowns."""
    res = _residual_real(rhs_function(params), params.n_sites)
    return _fd_jacobian(res, to_real(state))


def soe_spectrum(state: CorrelationState, params: ModelParams) -> np.ndarray:
    return np.linalg.eigvals(soe_jacobian(state, params))


@dataclass
class SingleSiteCount:
    count: int
    solutions: List[CorrelationState]
    n_starts: int
    n_converged: int

    @property
    def first_moments(self) -> List[complex]:
        return [complex(s.first[0]) for s in self.solutions]


def soe_single_site_count(
    params: ModelParams, grid: int = 11, tol: float = NEWTON_TOL, max_iter: int = 25
) -> SingleSiteCount:
    """Distinct stationary single-site SOE states from a multistart Newton grid.

    Starts cover |<a>| in [0, 2 sqrt(I_max)] (I_max: largest classical
    intensity) and phases in [0, 2 pi), with coherent-state fluctuations.
    """
    if params.n_sites != 1 or params.j != 0:
        raise ValueError("single-site count needs n_sites=1 and J=0")
    i_max = max(r.intensity for r in single_site_intensities(params))
    radii = np.linspace(0.0, 2.0 * np.sqrt(i_max), grid)
    phases = 2 * np.pi * np.arange(grid) / grid
    solutions: List[CorrelationState] = []
    keys: List[np.ndarray] = []
    n_conv = 0
    n_starts = 0
    for r in radii:
        for ph in phases if r > 0 else phases[:1]:
            n_starts += 1
            alpha = r * np.exp(1j * ph)
            try:
                sol = newton_steady_soe(CorrelationState.factorized([alpha]), params, tol=tol, max_iter=max_iter)
            except ConvergenceError:
                continue
            n_conv += 1
            key = to_real(sol)
            if all(np.max(np.abs(key - k)) > DEDUP_TOL for k in keys):
                keys.append(key)
                solutions.append(sol)
    if n_conv == 0:
        raise ConvergenceError("no multistart converged", float("nan"), n_starts)
    order = np.argsort([s.densities()[0] for s in solutions])
    solutions = [solutions[i] for i in order]
    return SingleSiteCount(len(solutions), solutions, n_starts, n_conv)


def single_site_steady(params: ModelParams, t_end: float = 200.0) -> CorrelationState:
    """Long-time single-site state (the attractor reached from the vacuum)."""
    traj = integrate_soe(CorrelationState.vacuum(1), params, t_end, track_center=False, dt=t_end)
    state = final_state(traj, 1)
    try:
        return newton_steady_soe(state, params)
    except ConvergenceError:
        return state


# ---------------------------------------------------------------------------
# translation-invariant states

def _circulant_index(n):
    return (np.arange(n)[None, :] - np.arange(n)[:, None]) % n


def homogeneous_from_reduced(z: np.ndarray, n: int) -> CorrelationState:
    """Expand ``(phi, m_0..m_{N-1}, s_0..s_{N-1})`` into circulant matrices."""
    idx = _circulant_index(n)
    return CorrelationState(np.full(n, z[0]), z[1 : n + 1][idx], z[n + 1 :][idx])


def _reduced(y, n):
    return np.concatenate([[y[0]], y[n : 2 * n], y[n + n * n : n + n * n + n]])


def homogeneous_states(
    params: ModelParams,
    n_starts: int = 12,
    seed: int = 0,
    t_end: float = 300.0,
    tol: float = NEWTON_TOL,
) -> List[CorrelationState]:
    """Distinct translation-invariant stationary states (periodic lattice).

    Relaxes the dynamics restricted to circulant states from coherent
    homogeneous starts (the classical homogeneous solutions plus
    ``n_starts`` random ones), then polishes with Newton in the same reduced space.
    Returned sorted by on-site density. Stability is not assessed here.
    """
    if params.boundary != "periodic":
        raise ValueError("homogeneous states need periodic boundaries")
    n = params.n_sites
    f = rhs_function(params)

    def fr(t, z):
        return _reduced(f(t, homogeneous_from_reduced(z, n).pack()), n)

    def real_res(x):
        z = x[: x.size // 2] + 1j * x[x.size // 2 :]
        r = fr(0.0, z)
        return np.concatenate([r.real, r.imag])

    rng = np.random.default_rng(seed)
    i_max = max(r.intensity for r in single_site_intensities(params.single_site()))
    # classical homogeneous solutions first, then random coherent starts
    eff = ModelParams(1, 0.0, params.u, params.a, params.delta_omega - 2 * params.j, params.gamma)
    starts = [r.amplitude for r in single_site_intensities(eff)]
    starts += [
        rng.uniform(0, 1.5 * np.sqrt(i_max) + 0.5) * np.exp(2j * np.pi * rng.uniform()) for _ in range(n_starts)
    ]
    found: List[np.ndarray] = []
    for alpha in starts:
        z0 = np.concatenate([[alpha], np.full(n, abs(alpha) ** 2, complex), np.full(n, alpha**2)])
        traj = integrate(fr, z0, t_end, rtol=1e-10, atol=1e-12, guard_slice=slice(0, 1))
        if traj.status != "ok":
            continue
        x = np.concatenate([traj.final.real, traj.final.imag])
        for _ in range(20):
            r = real_res(x)
            if np.max(np.abs(r)) < tol:
                break
            x = x + np.linalg.lstsq(_fd_jacobian(real_res, x), -r, rcond=None)[0]
        if np.max(np.abs(real_res(x))) > 1e3 * tol:
            continue
        z = x[: x.size // 2] + 1j * x[x.size // 2 :]
        if all(np.max(np.abs(z - w)) > DEDUP_TOL for w in found):
            found.append(z)
    found.sort(key=lambda z: z[1].real)
    return [homogeneous_from_reduced(z, n) for z in found]


def kicked(state: CorrelationState, site: int, factor: float) -> CorrelationState:
    """Scale the coherent amplitude at ``site`` by ``factor``, keeping all cumulants unchanged."""
    return displaced(state, site, (factor - 1.0) * state.first[site])


def displaced(state: CorrelationState, site: int, eps: complex) -> CorrelationState:
    """Apply the displacement a_site -> a_site + eps (a unitary, so all moments stay consistent)."""
    first = state.first.copy()
    normal = state.normal.copy()
    anomalous = state.anomalous.copy()
    phi = state.first
    col_m = phi.conj() * eps
    normal[:, site] += col_m
    normal[site, :] += col_m.conj()
    normal[site, site] += abs(eps) ** 2
    col_s = phi * eps
    anomalous[:, site] += col_s
    anomalous[site, :] += col_s
    anomalous[site, site] += eps**2
    first[site] += eps
    return CorrelationState(first, normal, anomalous)


def perturbed(state: CorrelationState, rng: np.random.Generator, magnitude: float, site: Optional[int] = None) -> CorrelationState:
    """Random displacement of size ``magnitude`` on one site (or on every site if ``site`` is None)."""
    sites = range(state.n_sites) if site is None else [site]
    for n in sites:
        state = displaced(state, n, magnitude * np.exp(2j * np.pi * rng.uniform()))
    return state
