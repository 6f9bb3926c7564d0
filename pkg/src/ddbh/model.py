"""Model parameters, lattice geometry and the state containers shared by all tiers.

Everything is dimensionless (hbar = 1, rates in units of a reference frequency).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Tuple

import numpy as np

PERIODIC = "periodic"
OPEN = "open"

# Default parameter point: U=-1, A=2, gamma=2, detuning 3 + 2J.
STAR = {"u": -1.0, "a": 2.0, "gamma": 2.0}
SCHEDULE_OFFSET = 3.0


class ConfigError(ValueError):
    """Raised for invalid or incomplete model configuration."""


@dataclass(frozen=True)
class ModelParams:
    n_sites: int
    j: float
    u: float
    a: float
    delta_omega: float
    gamma: float
    boundary: str = PERIODIC
    detuning_schedule: bool = False

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ConfigError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        if self.j < 0:
            raise ConfigError(f"hopping must be >= 0, got {self.j}")
        if self.a < 0:
            raise ConfigError(f"drive must be >= 0, got {self.a}")
        if self.gamma < 0:
            raise ConfigError(f"loss rate must be >= 0, got {self.gamma}")
        if self.boundary not in (PERIODIC, OPEN):
            raise ConfigError(f"boundary must be 'periodic' or 'open', got {self.boundary!r}")
        for name in ("j", "u", "a", "delta_omega", "gamma"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.detuning_schedule and self.delta_omega != SCHEDULE_OFFSET + 2.0 * self.j:
            raise ConfigError("delta_omega inconsistent with the 3 + 2J detuning schedule")

    @property
    def center(self) -> int:
        return self.n_sites // 2

    def with_hopping(self, j: float) -> "ModelParams":
        """Copy at a new hopping; the detuning follows the schedule when it is active."""
        j = float(j)
        if self.detuning_schedule:
            return replace(self, j=j, delta_omega=SCHEDULE_OFFSET + 2.0 * j)
        return replace(self, j=j)

    def replace(self, **changes) -> "ModelParams":
        if self.detuning_schedule and "j" in changes and "delta_omega" not in changes:
            changes["delta_omega"] = SCHEDULE_OFFSET + 2.0 * float(changes["j"])
        return replace(self, **changes)

    def single_site(self) -> "ModelParams":
        """Decoupled single site (J=0) with the detuning this lattice would have at J=0."""
        dw = SCHEDULE_OFFSET if self.detuning_schedule else self.delta_omega
        return ModelParams(1, 0.0, self.u, self.a, dw, self.gamma, self.boundary, False)

    def as_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "j": self.j,
            "u": self.u,
            "a": self.a,
            "delta_omega": self.delta_omega,
            "gamma": self.gamma,
            "boundary": self.boundary,
            "detuning_schedule": self.detuning_schedule,
        }


CONFIG_ALIASES = {
    "n": "n_sites",
    "N": "n_sites",
    "n_sites": "n_sites",
    "j": "j",
    "J": "j",
    "u": "u",
    "U": "u",
    "a": "a",
    "A": "a",
    "gamma": "gamma",
    "γ": "gamma",
    "delta_omega": "delta_omega",
    "δω": "delta_omega",
    "detuning": "delta_omega",
    "schedule": "detuning_schedule",
    "detuning_schedule": "detuning_schedule",
    "boundary": "boundary",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _as_float(key: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: non-numeric value {value!r}") from None


def build_params(config: Mapping) -> ModelParams:
    """Validate a flat key-value map and build :class:`ModelParams`.

    Accepts lower-case keys (``n_sites, j, u, a, gamma, delta_omega``) or the
    symbols ``N, J, U, A, γ, δω``. With ``schedule``/``detuning_schedule`` on,
    the detuning is set to ``3 + 2J`` and any explicit ``delta_omega`` must agree.
    Unknown keys are ignored so a full run config can be passed straight in.
    """
    cfg = {}
    for key, value in config.items():
        canon = CONFIG_ALIASES.get(key)
        if canon is not None:
            cfg[canon] = value

    schedule = _as_bool(cfg.get("detuning_schedule", False))
    required = ["n_sites", "j", "u", "a", "gamma"]
    if not schedule:
        required.append("delta_omega")
    missing = [k for k in required if k not in cfg]
    if missing:
        raise ConfigError(f"missing key(s): {', '.join(missing)}")

    n_raw = _as_float("n_sites", cfg["n_sites"])
    if n_raw != int(n_raw):
        raise ConfigError(f"n_sites must be an integer, got {cfg['n_sites']!r}")
    j = _as_float("j", cfg["j"])
    if schedule:
        dw = SCHEDULE_OFFSET + 2.0 * j
        if "delta_omega" in cfg and _as_float("delta_omega", cfg["delta_omega"]) != dw:
            raise ConfigError("delta_omega conflicts with the detuning schedule")
    else:
        dw = _as_float("delta_omega", cfg["delta_omega"])
    return ModelParams(
        n_sites=int(n_raw),
        j=j,
        u=_as_float("u", cfg["u"]),
        a=_as_float("a", cfg["a"]),
        delta_omega=dw,
        gamma=_as_float("gamma", cfg["gamma"]),
        boundary=str(cfg.get("boundary", PERIODIC)).strip().lower(),
        detuning_schedule=schedule,
    )


def star_params(n_sites: int = 30, j: float = 0.0, boundary: str = PERIODIC) -> ModelParams:
    """The default working point with the 3 + 2J detuning schedule."""
    return build_params({"n_sites": n_sites, "j": j, **STAR, "schedule": True, "boundary": boundary})


def neighbors(site: int, params: ModelParams) -> Tuple[Optional[int], Optional[int]]:
    """Left and right neighbour of ``site``; ``None`` past an open edge."""
    n = params.n_sites
    if not 0 <= site < n:
        raise IndexError(f"site {site} out of range for {n} sites")
    if params.boundary == PERIODIC:
        return (site - 1) % n, (site + 1) % n
    left = site - 1 if site > 0 else None
    right = site + 1 if site < n - 1 else None
    return left, right


def hopping_matrix(params: ModelParams) -> np.ndarray:
    """Adjacency K with (K x)_n = x_{n-1} + x_{n+1}, built from :func:`neighbors`.

    Coincident neighbours (N=1 or N=2 periodic) are counted twice, as the
    wraparound sum prescribes.
    """
    n = params.n_sites
    k = np.zeros((n, n))
    for site in range(n):
        for nb in neighbors(site, params):
            if nb is not None:
                k[site, nb] += 1.0
    return k


def as_field(values, params: ModelParams) -> np.ndarray:
    """Validate a classical field (one complex amplitude per site)."""
    field_ = np.asarray(values, dtype=complex)
    if field_.shape != (params.n_sites,):
        raise ValueError(f"field must have shape ({params.n_sites},), got {field_.shape}")
    if not np.all(np.isfinite(field_)):
        raise ValueError("field has non-finite entries")
    return field_


@dataclass(frozen=True)
class CorrelationState:
    """First moments <a_n>, normal <a_l^+ a_n> and anomalous <a_l a_n> matrices."""

    first: np.ndarray
    normal: np.ndarray
    anomalous: np.ndarray

    def __post_init__(self):
        first = np.asarray(self.first, dtype=complex)
        n = first.shape[0]
        normal = np.asarray(self.normal, dtype=complex)
        anomalous = np.asarray(self.anomalous, dtype=complex)
        if first.ndim != 1 or normal.shape != (n, n) or anomalous.shape != (n, n):
            raise ValueError("inconsistent CorrelationState shapes")
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "anomalous", anomalous)

    @property
    def n_sites(self) -> int:
        return self.first.shape[0]

    @classmethod
    def factorized(cls, field_) -> "CorrelationState":
        """Classical (coherent) state: <a^+ a> = phi* phi, <a a> = phi phi."""
        phi = np.asarray(field_, dtype=complex)
        return cls(phi.copy(), np.outer(phi.conj(), phi), np.outer(phi, phi))

    @classmethod
    def vacuum(cls, n_sites: int) -> "CorrelationState":
        z = np.zeros((n_sites, n_sites), complex)
        return cls(np.zeros(n_sites, complex), z, z.copy())

    @classmethod
    def homogeneous(cls, n_sites: int, first: complex, density: float, pair: complex) -> "CorrelationState":
        """Translation-invariant state with no inter-site connected correlations."""
        state = cls.factorized(np.full(n_sites, first, dtype=complex))
        normal = state.normal.copy()
        anomalous = state.anomalous.copy()
        idx = np.diag_indices(n_sites)
        normal[idx] = density
        anomalous[idx] = pair
        return cls(state.first, normal, anomalous)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.first, self.normal.ravel(), self.anomalous.ravel()])

    @classmethod
    def unpack(cls, y: np.ndarray, n_sites: int) -> "CorrelationState":
        n = n_sites
        return cls(y[:n].copy(), y[n : n + n * n].reshape(n, n).copy(), y[n + n * n :].reshape(n, n).copy())

    def symmetrized(self) -> "CorrelationState":
        return CorrelationState(
            self.first,
            0.5 * (self.normal + self.normal.conj().T),
            0.5 * (self.anomalous + self.anomalous.T),
        )

    def shifted(self, shift: int) -> "CorrelationState":
        """Cyclic translation of every site index by ``shift``."""
        roll = lambda m: np.roll(np.roll(m, shift, axis=0), shift, axis=1)  # noqa: E731
        return CorrelationState(np.roll(self.first, shift), roll(self.normal), roll(self.anomalous))

    def symmetry_error(self) -> float:
        return float(
            max(
                np.max(np.abs(self.normal - self.normal.conj().T), initial=0.0),
                np.max(np.abs(self.anomalous - self.anomalous.T), initial=0.0),
            )
        )

    def densities(self) -> np.ndarray:
        return np.real(np.diag(self.normal)).copy()


@dataclass(frozen=True)
class GutzwillerState:
    """Per-site density matrices in a Fock space truncated at ``n_max``."""

    rhos: np.ndarray
    n_max: int = field(init=False)

    def __post_init__(self):
        rhos = np.asarray(self.rhos, dtype=complex)
        if rhos.ndim != 3 or rhos.shape[1] != rhos.shape[2]:
            raise ValueError("rhos must have shape (n_sites, d, d)")
        object.__setattr__(self, "rhos", rhos)
        object.__setattr__(self, "n_max", rhos.shape[1] - 1)

    @property
    def n_sites(self) -> int:
        return self.rhos.shape[0]

    def pack(self) -> np.ndarray:
        return self.rhos.ravel().copy()

    @classmethod
    def unpack(cls, y: np.ndarray, n_sites: int, n_max: int) -> "GutzwillerState":
        return cls(np.asarray(y).reshape(n_sites, n_max + 1, n_max + 1).copy())

    def traces(self) -> np.ndarray:
        return np.einsum("nii->n", self.rhos)

    def top_population(self) -> np.ndarray:
        return np.real(self.rhos[:, -1, -1]).copy()
