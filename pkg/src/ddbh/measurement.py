"""Momentum-space correlators and their mapping onto output-field correlations.

Momentum modes use the unitary transform a_k = N^{-1/2} sum_n e^{-i k x_n} a_n
with x_n = n d and k_m = 2 pi m / (N d), m = 0..N-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CorrelationState


@dataclass(frozen=True)
class MomentumCorrelators:
    k_grid: np.ndarray
    first_k: np.ndarray  # <a_k>
    normal_k: np.ndarray  # <a_k^+ a_k'>
    anomalous_k: np.ndarray  # <a_k a_k'>

    @property
    def n_sites(self) -> int:
        return self.first_k.size


def k_grid(n_sites: int, d: float = 1.0) -> np.ndarray:
    return 2 * np.pi * np.arange(n_sites) / (n_sites * d)


def dft_matrix(n_sites: int) -> np.ndarray:
    """F[k, n] = exp(-i k_m n) / sqrt(N)."""
    return np.fft.fft(np.eye(n_sites), norm="ortho", axis=0)


def to_momentum(state: CorrelationState, boundary: str = "periodic", d: float = 1.0) -> MomentumCorrelators:
    if boundary != "periodic":
        raise ValueError("momentum modes need periodic boundaries")
    f = dft_matrix(state.n_sites)
    return MomentumCorrelators(
        k_grid=k_grid(state.n_sites, d),
        first_k=f @ state.first,
        normal_k=f.conj() @ state.normal @ f.T,
        anomalous_k=f @ state.anomalous @ f.T,
    )


def from_momentum(mom: MomentumCorrelators) -> CorrelationState:
    f = dft_matrix(mom.n_sites)
    return CorrelationState(
        first=f.conj().T @ mom.first_k,
        normal=f.T @ mom.normal_k @ f.conj(),
        anomalous=f.conj().T @ mom.anomalous_k @ f.conj(),
    )


def connected_correlator(state: CorrelationState, include_offset: bool = False, boundary: str = "periodic") -> np.ndarray:
    """f[k, k'] = <a_k a_k'^+> - <a_k><a_k'^+>.

    ``<a_k a_k'^+>`` is taken as ``<a_k'^+ a_k>``, plus ``delta_kk'`` when
    ``include_offset`` is set. With the offset excluded the map vanishes
    identically on factorized states.
    """
    if boundary != "periodic":
        raise ValueError("momentum modes need periodic boundaries")
    # transform the real-space connected part so factorized states give exact zeros
    conn = state.normal - np.outer(state.first.conj(), state.first)
    fm = dft_matrix(state.n_sites)
    f = (fm.conj() @ conn @ fm.T).T
    if include_offset:
        f = f + np.eye(state.n_sites)
    return f


def correlator_metadata(include_offset: bool, gamma_tl: float = 1.0, v: float = 1.0, d: float = 1.0) -> dict:
    return {
        "quantity": "f(a_k, a_k'^+) = <a_k a_k'^+> - <a_k><a_k'^+>",
        "ordering": "<a_k a_k'^+> = <a_k'^+ a_k>" + (" + delta_kk'" if include_offset else " (commutator offset excluded)"),
        "include_offset": include_offset,
        "k_grid": "k_m = 2 pi m / (N d), m = 0..N-1",
        "gamma_tl": gamma_tl,
        "v": v,
        "d": d,
    }


def output_field_correlator(
    normal_entry: complex,
    k: float,
    k_prime: float,
    t1: float,
    t2: float,
    gamma_tl: float = 1.0,
    v: float = 1.0,
    d: float = 1.0,
    n_sites: int = 1,
) -> complex:
    """Right-moving output correlation <r_out^{k+}(t1) r_out^{k'}(t2)> for vacuum input."""
    if k <= 0 or k_prime <= 0:
        raise ValueError("k and k' must be positive (right-moving modes)")
    if gamma_tl <= 0 or v <= 0 or d <= 0 or n_sites < 1:
        raise ValueError("gamma_tl, v, d and n_sites must be positive")
    pref = gamma_tl * v / (n_sites * np.sqrt(k * k_prime)) / d**2
    return complex(pref * np.exp(1j * v * (k * t1 - k_prime * t2) / d) * normal_entry)


@dataclass(frozen=True)
class RectangleTable:
    omega: np.ndarray
    exact: np.ndarray  # complex lattice sum
    rectangle: np.ndarray  # height N inside the window, 0 outside
    half_width: float  # in units of omega / v


def lattice_sum(q: np.ndarray, n_sites: int, d: float = 1.0) -> np.ndarray:
    """sum_{n=0}^{N-1} exp(-i q x_n)."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    x = d * np.arange(n_sites)
    return np.exp(-1j * np.outer(q, x)).sum(axis=1)


def first_zero(n_sites: int, d: float = 1.0) -> float:
    """Offset in q of the first zeros of the lattice sum."""
    return 2 * np.pi / (n_sites * d)


def rectangle_sum_check(n_sites: int, k: float, omega_grid, v: float = 1.0, d: float = 1.0) -> RectangleTable:
    """Exact lattice sum at q = omega/v - k/d next to its width-2pi/N rectangle."""
    if n_sites < 2:
        raise ValueError("n_sites must be >= 2")
    omega = np.asarray(omega_grid, dtype=float)
    q = omega / v - k / d
    half = np.pi / (n_sites * d)
    exact = lattice_sum(q, n_sites, d)
    rect = np.where(np.abs(q) <= half, float(n_sites), 0.0)
    return RectangleTable(omega, exact, rect, half)


def sinc_factor(y: float, n_sites: int) -> float:
    """sin(y pi / N) / (y pi / N)."""
    x = y * np.pi / n_sites
    return float(np.sinc(x / np.pi))
