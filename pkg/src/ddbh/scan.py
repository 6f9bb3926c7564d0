"""Parameter sweeps: regime classification along J and single-site counts over (U, A)."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from . import dnls, gutzwiller, soe
from .dnls import ConvergenceError
from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, IntegrationError
from .model import CorrelationState, GutzwillerState, ModelParams
from .steady import LABELS, SteadyVerdict, classify_mode, detect_steady

log = logging.getLogger(__name__)

TIERS = ("dnls", "soe", "gutzwiller")
MODES = ("adiabatic", "cold")
SEED = 42
PERTURBATION = 1e-3
KICK = 2.5
WALL_BUDGET = 300.0
REFINE_DJ = 0.01


@dataclass
class PhaseRecord:
    j: float
    tier: str
    label: str
    status: str  # verdict status, or failed / timeout
    center_amplitude: float
    center_max: Optional[float] = None
    center_min: Optional[float] = None
    period: Optional[float] = None
    residual: Optional[float] = None
    t_converged: Optional[float] = None
    elapsed: float = 0.0
    error: Optional[str] = None
    profile: List[float] = field(default_factory=list)
    refinement: bool = False

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")


@dataclass
class Transition:
    name: Optional[str]  # J1..J4 for the named bifurcations
    j_low: float
    j_high: float
    label_low: str
    label_high: str

    @property
    def estimate(self) -> float:
        return 0.5 * (self.j_low + self.j_high)


@dataclass
class ScanResult:
    records: List[PhaseRecord]
    transitions: List[Transition] = field(default_factory=list)
    refinement_records: List[PhaseRecord] = field(default_factory=list)
    elapsed: float = 0.0

    def named(self) -> Dict[str, float]:
        return {t.name: t.estimate for t in self.transitions if t.name}

    def label_at(self, j: float, tol: float = 1e-9) -> Optional[str]:
        for r in self.records:
            if abs(r.j - j) <= tol:
                return r.label
        return None


# ---------------------------------------------------------------------------
# tiers


class _Tier:
    name = ""

    def start(self, params: ModelParams, mode: str, kick: float):
        raise NotImplementedError

    def perturb(self, state, params: ModelParams, rng: np.random.Generator, magnitude: float):
        raise NotImplementedError

    def run(self, state, params, t_end, dt, tol, atol, wall_budget):
        """Return (trajectory, final state)."""
        raise NotImplementedError

    def to_array(self, state) -> np.ndarray:
        raise NotImplementedError

    def from_array(self, arr: np.ndarray, params: ModelParams):
        raise NotImplementedError


class _DnlsTier(_Tier):
    name = "dnls"

    def start(self, params, mode, kick):
        if mode == "cold":
            phi = dnls.homogeneous_seed(params, 0)
            phi[params.center] *= kick
            return phi
        single = params.single_site()
        traj = dnls.integrate_dnls([0j], single, 200.0, dt=200.0)
        return np.full(params.n_sites, traj.final[0], dtype=complex)

    def perturb(self, state, params, rng, magnitude):
        phi = np.array(state, dtype=complex)
        phi[params.center] += magnitude * np.exp(2j * np.pi * rng.uniform())
        return phi

    def run(self, state, params, t_end, dt, tol, atol, wall_budget):
        traj = dnls.integrate_dnls(state, params, t_end, tol=tol, atol=atol, dt=dt, track_center=True)
        return traj, traj.final.copy()

    def to_array(self, state):
        return np.asarray(state, dtype=complex)

    def from_array(self, arr, params):
        return np.asarray(arr, dtype=complex)


class _SoeTier(_Tier):
    name = "soe"

    def start(self, params, mode, kick):
        if mode == "cold":
            background = soe.homogeneous_states(params, n_starts=0)[0]
            return soe.kicked(background, params.center, kick)
        s = soe.single_site_steady(params.single_site())
        return CorrelationState.homogeneous(params.n_sites, s.first[0], s.normal[0, 0].real, s.anomalous[0, 0])

    def perturb(self, state, params, rng, magnitude):
        return soe.perturbed(state, rng, magnitude, site=params.center)

    def run(self, state, params, t_end, dt, tol, atol, wall_budget):
        traj = soe.integrate_soe(state, params, t_end, tol=tol, atol=atol, dt=dt, wall_budget=wall_budget)
        return traj, soe.final_state(traj, params.n_sites)

    def to_array(self, state):
        return state.pack()

    def from_array(self, arr, params):
        return CorrelationState.unpack(np.asarray(arr, dtype=complex), params.n_sites)


class _GutzwillerTier(_Tier):
    name = "gutzwiller"

    def __init__(self, n_max: int = gutzwiller.N_MAX, kick_density: float = 8.8):
        self.n_max = n_max
        self.kick_density = kick_density

    def start(self, params, mode, kick):
        bg = gutzwiller.homogeneous_background(params, self.n_max)
        rhos = np.repeat(bg[None], params.n_sites, axis=0)
        if mode == "cold":
            rhos[params.center] = gutzwiller.coherent_state_rho(np.sqrt(self.kick_density), self.n_max)
        return GutzwillerState(rhos)

    def perturb(self, state, params, rng, magnitude):
        ops = gutzwiller.FockOperators.build(state.n_max)
        eps = magnitude * np.exp(2j * np.pi * rng.uniform())
        disp = expm(eps * ops.a_dag - np.conj(eps) * ops.a)
        rhos = state.rhos.copy()
        c = params.center
        rhos[c] = disp @ rhos[c] @ disp.conj().T
        rhos[c] = 0.5 * (rhos[c] + rhos[c].conj().T)
        rhos[c] /= np.trace(rhos[c]).real
        return GutzwillerState(rhos)

    def run(self, state, params, t_end, dt, tol, atol, wall_budget):
        run = gutzwiller.evolve_gutzwiller(state, params, t_end, tol=tol, atol=atol, dt=dt, strict=False, wall_budget=wall_budget)
        return run.trajectory, run.final

    def to_array(self, state):
        return state.pack()

    def from_array(self, arr, params):
        d = int(round(np.sqrt(arr.size / params.n_sites)))
        return GutzwillerState.unpack(arr, params.n_sites, d - 1)


def make_tier(name: str, **kwargs) -> _Tier:
    if name == "dnls":
        return _DnlsTier()
    if name == "soe":
        return _SoeTier()
    if name == "gutzwiller":
        return _GutzwillerTier(**kwargs)
    raise ValueError(f"unknown tier {name!r}; choose from {TIERS}")


# ---------------------------------------------------------------------------
# single point


@dataclass
class _PointConfig:
    tier: str
    t_end: float
    dt: float
    tol: float
    atol: float
    wall_budget: Optional[float]
    boundary: str
    t_max: Optional[float] = None  # extend transient runs in chunks of t_end up to this horizon


def point_rng(seed: int, j: float) -> np.random.Generator:
    """Per-point generator keyed on (seed, J) so resumed or reordered scans reproduce bit for bit."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round(abs(j) * 1e6))]))


def record_from_trajectory(traj, j: float, tier: str, boundary: str = "periodic", elapsed: float = 0.0) -> PhaseRecord:
    """Run the detectors on a finished trajectory and fill a record."""
    n = traj.first.shape[1]
    c = n // 2
    if traj.status == "timeout":
        amp = float(abs(traj.first[-1, c])) if len(traj.t) else float("nan")
        return PhaseRecord(j, tier, "unknown", "timeout", amp, elapsed=elapsed, error="wall-clock budget exceeded")
    verdict: SteadyVerdict = detect_steady(traj)
    if verdict.status == "periodic":
        profile = verdict.mean_profile()
        lo, hi = verdict.amplitude_range
        amp = 0.5 * (lo + hi)
    else:
        profile = np.abs(traj.first[-1])
        lo = hi = None
        amp = float(profile[c])
    label = classify_mode(verdict, profile, boundary)
    return PhaseRecord(
        j=float(j),
        tier=tier,
        label=label,
        status=verdict.status,
        center_amplitude=float(amp),
        center_max=hi,
        center_min=lo,
        period=verdict.period,
        residual=verdict.residual,
        t_converged=verdict.t_converged,
        elapsed=elapsed,
        profile=[float(x) for x in profile],
    )


def run_point(tier: _Tier, state, params: ModelParams, cfg: _PointConfig) -> Tuple[PhaseRecord, object]:
    """Evolve one parameter point and classify it; failures become records, never exceptions."""
    start = time.perf_counter()
    try:
        t_total = 0.0
        while True:
            budget = None if cfg.wall_budget is None else max(cfg.wall_budget - (time.perf_counter() - start), 1e-3)
            traj, final = tier.run(state, params, cfg.t_end, cfg.dt, cfg.tol, cfg.atol, budget)
            t_total += traj.t_final
            rec = record_from_trajectory(traj, params.j, tier.name, cfg.boundary, time.perf_counter() - start)
            if rec.status != "transient" or cfg.t_max is None or t_total + cfg.t_end > cfg.t_max + 1e-9:
                break
            state = final
        if t_total > cfg.t_end and rec.t_converged is not None:
            rec.t_converged += t_total - traj.t_final
        return rec, final
    except (IntegrationError, ConvergenceError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("J=%.4f failed: %s", params.j, exc)
        rec = PhaseRecord(params.j, tier.name, "unknown", "failed", float("nan"), elapsed=time.perf_counter() - start, error=str(exc))
        return rec, None


def _cold_point(args):
    tier_name, tier_kwargs, params, cfg, seed, perturbation, kick = args
    tier = make_tier(tier_name, **tier_kwargs)
    try:
        state = tier.start(params, "cold", kick)
    except (ConvergenceError, ValueError, IntegrationError) as exc:
        return PhaseRecord(params.j, tier_name, "unknown", "failed", float("nan"), error=str(exc)), None
    if perturbation > 0:
        state = tier.perturb(state, params, point_rng(seed, params.j), perturbation)
    rec, final = run_point(tier, state, params, cfg)
    return rec, None if final is None else tier.to_array(final)


# ---------------------------------------------------------------------------
# checkpointing


class _Checkpoint:
    def __init__(self, directory, meta: dict):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "states").mkdir(exist_ok=True)
        meta_path = self.dir / "meta.json"
        if meta_path.exists():
            old = json.loads(meta_path.read_text())
            if old != meta:
                raise ValueError(f"checkpoint in {self.dir} belongs to a different scan configuration")
        else:
            meta_path.write_text(json.dumps(meta, indent=2))
        self.records_path = self.dir / "records.jsonl"

    def load(self) -> List[Tuple[PhaseRecord, Optional[np.ndarray]]]:
        out = []
        if not self.records_path.exists():
            return out
        for line in self.records_path.read_text().splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            idx = data.pop("index")
            if idx != len(out):
                break
            state_path = self.dir / "states" / f"state_{idx:04d}.npy"
            arr = np.load(state_path) if state_path.exists() else None
            out.append((PhaseRecord(**data), arr))
        return out

    def save(self, index: int, record: PhaseRecord, state: Optional[np.ndarray]) -> None:
        if state is not None:
            np.save(self.dir / "states" / f"state_{index:04d}.npy", state)
        with open(self.records_path, "a") as fh:
            fh.write(json.dumps({"index": index, **asdict(record)}) + "\n")


# ---------------------------------------------------------------------------
# J scan


def _label_changes(records: Sequence[PhaseRecord]) -> List[Tuple[int, int]]:
    """Index pairs (in sweep order) of consecutive records with different labels."""
    return [(i, i + 1) for i in range(len(records) - 1) if records[i].label != records[i + 1].label]


def name_transitions(records: Sequence[PhaseRecord]) -> Dict[str, Tuple[int, int]]:
    """Map J1..J4 onto label changes along increasing J.

    J1: first departure from homogeneous; J2: first ripple -> stationary
    soliton; J3: first stationary -> oscillating soliton; J4: first return
    to homogeneous after J1.
    """
    order = sorted(range(len(records)), key=lambda i: records[i].j)
    names: Dict[str, Tuple[int, int]] = {}
    for a, b in zip(order, order[1:]):
        la, lb = records[a].label, records[b].label
        if la == lb:
            continue
        if "J1" not in names and la == "homogeneous":
            names["J1"] = (a, b)
        elif "J2" not in names and la == "ripple" and lb == "stationary_soliton":
            names["J2"] = (a, b)
        elif "J3" not in names and la == "stationary_soliton" and lb == "oscillating_soliton":
            names["J3"] = (a, b)
        elif "J4" not in names and "J1" in names and lb == "homogeneous":
            names["J4"] = (a, b)
    return names


def scan_j(
    template: ModelParams,
    j_values: Sequence[float],
    tier: str = "soe",
    mode: str = "adiabatic",
    *,
    t_end: float = soe.T_EVOL,
    t_max: Optional[float] = None,
    dt: float = 0.1,
    tol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    seed: int = SEED,
    perturbation: float = PERTURBATION,
    kick: float = KICK,
    wall_budget: Optional[float] = WALL_BUDGET,
    checkpoint=None,
    initial=None,
    refine: bool = True,
    refine_dj: float = REFINE_DJ,
    workers: int = 1,
    tier_options: Optional[dict] = None,
    progress: Optional[Callable[[PhaseRecord], None]] = None,
) -> ScanResult:
    """Classify the long-time state at every J.

    ``adiabatic``: each point starts from the previous converged state plus
    a random kick of size ``perturbation`` on the centre site (``j_values``
    must be monotonic); the first point starts from ``initial`` or the
    homogeneous single-site steady state. Runs still transient at
    ``t_end`` are continued in chunks of ``t_end`` up to ``t_max`` when it
    is given. ``cold``: each point starts from
    the lowest homogeneous state with its centre amplitude scaled by
    ``kick``. Label changes that match J1..J4 are refined by bisection to
    ``refine_dj``.
    """
    started = time.perf_counter()
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    j_values = [float(j) for j in j_values]
    if not j_values:
        return ScanResult([])
    if mode == "adiabatic":
        steps = np.diff(j_values)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("adiabatic sweeps need strictly monotonic j_values")
    tier_options = tier_options or {}
    tr = make_tier(tier, **tier_options)
    cfg = _PointConfig(tier, t_end, dt, tol, atol, wall_budget, template.boundary, t_max)
    meta = {
        "params": template.as_dict(),
        "j_values": j_values,
        "tier": tier,
        "mode": mode,
        "t_end": t_end,
        "t_max": t_max,
        "dt": dt,
        "tol": tol,
        "atol": atol,
        "seed": seed,
        "perturbation": perturbation,
        "kick": kick,
        "initial": initial is not None,
    }
    ckpt = _Checkpoint(checkpoint, meta) if checkpoint is not None else None
    done = ckpt.load() if ckpt else []
    records = [r for r, _ in done]
    states: List[Optional[np.ndarray]] = [s for _, s in done]

    if mode == "cold":
        todo = list(range(len(records), len(j_values)))
        jobs = [(tier, tier_options, template.with_hopping(j_values[i]), cfg, seed, perturbation, kick) for i in todo]
        if workers > 1 and jobs:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_cold_point, jobs))
        else:
            results = []
            for job in jobs:
                results.append(_cold_point(job))
                if progress:
                    progress(results[-1][0])
        for i, (rec, arr) in zip(todo, results):
            records.append(rec)
            states.append(arr)
            if ckpt:
                ckpt.save(i, rec, arr)
    else:
        state = None
        last_good = next((s for s in reversed(states) if s is not None), None)
        if last_good is not None:
            state = tr.from_array(last_good, template)
        for i in range(len(records), len(j_values)):
            params = template.with_hopping(j_values[i])
            if state is None:
                state = initial if initial is not None else tr.start(params, mode, kick)
            start_state = tr.perturb(state, params, point_rng(seed, params.j), perturbation) if perturbation > 0 else state
            rec, final = run_point(tr, start_state, params, cfg)
            arr = None if final is None else tr.to_array(final)
            if final is not None:
                state = final
            records.append(rec)
            states.append(arr)
            if ckpt:
                ckpt.save(i, rec, arr)
            if progress:
                progress(rec)

    result = ScanResult(records)
    names = name_transitions(records)
    by_pair = {tuple(sorted(v)): k for k, v in names.items()}
    for a, b in _label_changes(records):
        name = by_pair.get(tuple(sorted((a, b))))
        ra, rb = records[a], records[b]
        lo_j, hi_j = ra.j, rb.j
        if refine and name is not None and abs(hi_j - lo_j) > refine_dj:
            lo_j, hi_j = _bisect(tr, template, cfg, mode, ra, rb, states[a], seed, perturbation, kick, refine_dj, result, tier_options)
        low, high = sorted([(lo_j, ra.label), (hi_j, rb.label)])
        result.transitions.append(Transition(name, low[0], high[0], low[1], high[1]))
    result.elapsed = time.perf_counter() - started
    return result


def _bisect(tr, template, cfg, mode, ra, rb, state_a, seed, perturbation, kick, dj, result, tier_options):
    """Shrink [ra.j, rb.j] until it is at most ``dj`` wide; returns the bracket in sweep order."""
    ja, jb = ra.j, rb.j
    state = None if state_a is None else tr.from_array(state_a, template)
    while abs(jb - ja) > dj:
        jm = 0.5 * (ja + jb)
        params = template.with_hopping(jm)
        if mode == "cold" or state is None:
            rec, arr = _cold_point((tr.name, tier_options, params, cfg, seed, perturbation, kick))
            final = None if arr is None else tr.from_array(arr, params)
        else:
            start = tr.perturb(state, params, point_rng(seed, jm), perturbation) if perturbation > 0 else state
            rec, final = run_point(tr, start, params, cfg)
        rec.refinement = True
        result.refinement_records.append(rec)
        if rec.label == ra.label:
            ja = jm
            if final is not None:
                state = final
        else:
            jb = jm
    return ja, jb


def parse_range(text: str) -> List[float]:
    """``start:stop:step`` (inclusive stop) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] == 0:
            raise ValueError(f"bad range {text!r}; use start:stop:step")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        if n < 1:
            return []
        return [round(start + i * step, 12) for i in range(n)]
    if not text:
        return []
    return [float(x) for x in text.split(",")]


# ---------------------------------------------------------------------------
# (U, A) map


@dataclass
class UAGrid:
    u: np.ndarray
    a: np.ndarray
    dnls: np.ndarray  # counts, shape (len(u), len(a))
    soe: np.ndarray  # counts, -1 for unresolved cells

    def rows(self):
        for i, u in enumerate(self.u):
            for k, a in enumerate(self.a):
                yield float(u), float(a), int(self.dnls[i, k]), int(self.soe[i, k])


def scan_ua(
    u_values: Sequence[float],
    a_values: Sequence[float],
    delta_omega: float = 3.0,
    gamma: float = 2.0,
    tiers: Sequence[str] = ("dnls", "soe"),
    grid: int = 11,
    j: float = 0.0,
) -> UAGrid:
    """Single-site solution counts on a (U, A) grid (J must be 0)."""
    if j != 0:
        raise ValueError("the (U, A) map is a single-site analysis; J must be 0")
    u = np.asarray(u_values, dtype=float)
    a = np.asarray(a_values, dtype=float)
    dn = np.full((u.size, a.size), -1, dtype=int)
    so = np.full((u.size, a.size), -1, dtype=int)
    for i, uu in enumerate(u):
        for k, aa in enumerate(a):
            params = ModelParams(1, 0.0, uu, aa, delta_omega, gamma)
            if "dnls" in tiers:
                try:
                    dn[i, k] = len(dnls.single_site_intensities(params))
                except ValueError:
                    pass
            if "soe" in tiers:
                try:
                    so[i, k] = soe.soe_single_site_count(params, grid=grid).count
                except ConvergenceError:
                    log.info("unresolved SOE cell U=%g A=%g", uu, aa)
    return UAGrid(u, a, dn, so)
