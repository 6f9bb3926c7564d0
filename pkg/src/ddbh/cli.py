"""Command-line interface: ``ddbh <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
import time
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, dnls, gutzwiller, io, measurement, soe
from .integrate import DEFAULT_ATOL, DEFAULT_RTOL
from .model import CONFIG_ALIASES, STAR, ConfigError, CorrelationState, GutzwillerState, ModelParams, build_params
from .scan import KICK, PERTURBATION, SEED, WALL_BUDGET, parse_range, scan_j, scan_ua
from .steady import classify_mode, detect_steady

log = logging.getLogger("ddbh")

DEFAULTS = {"n_sites": 30, "j": 0.0, **STAR, "detuning_schedule": True, "boundary": "periodic"}


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _add_model_flags(p: argparse.ArgumentParser, with_j: bool = True) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--config", help="flat key = value file; flags override it")
    g.add_argument("--n", "--n-sites", dest="n_sites", type=int)
    if with_j:
        g.add_argument("--j", dest="j", type=float)
    g.add_argument("--u", dest="u", type=float)
    g.add_argument("--a", dest="a", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--delta-omega", dest="delta_omega", type=float, help="fixed detuning (turns the 3+2J schedule off)")
    g.add_argument("--schedule", dest="detuning_schedule", action="store_true", default=None, help="detuning 3 + 2J")
    g.add_argument("--no-schedule", dest="detuning_schedule", action="store_false")
    g.add_argument("--boundary", choices=["periodic", "open"])


def _add_run_flags(p: argparse.ArgumentParser, t_end: float = soe.T_EVOL) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--t-end", type=float, default=None, help=f"evolution horizon (default {t_end:g})")
    g.add_argument("--dt", type=float, default=None, help="output sampling step (default 0.1)")
    g.add_argument("--tol", type=float, default=None, help=f"relative tolerance (default {DEFAULT_RTOL:g})")
    g.add_argument("--atol", type=float, default=None, help=f"absolute tolerance (default {DEFAULT_ATOL:g})")
    g.add_argument("--seed", type=int, default=None, help=f"random seed (default {SEED})")
    p.set_defaults(default_t_end=t_end)


def _add_out(p: argparse.ArgumentParser, default: str) -> None:
    p.add_argument("--out", default=default, help=f"output directory (default {default})")


def _read_file(args) -> Dict[str, str]:
    if not getattr(args, "config", None):
        return {}
    try:
        return io.read_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    except Exception as exc:  # configparser syntax errors
        raise ConfigError(f"malformed config {args.config}: {exc}") from None


def _params(args) -> ModelParams:
    """Defaults, then the config file, then flags; a fixed detuning switches the schedule off."""
    cfg: Dict[str, object] = dict(DEFAULTS)
    explicit_dw = False
    file_cfg = {CONFIG_ALIASES.get(k, k): v for k, v in _read_file(args).items()}
    if "delta_omega" in file_cfg:
        explicit_dw = True
        if "detuning_schedule" not in file_cfg:
            cfg["detuning_schedule"] = False
    cfg.update({k: v for k, v in file_cfg.items() if k in DEFAULTS or k == "delta_omega"})
    for key in ("n_sites", "j", "u", "a", "gamma", "boundary"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "delta_omega", None) is not None:
        cfg["delta_omega"] = args.delta_omega
        explicit_dw = True
        if getattr(args, "detuning_schedule", None) is None:
            cfg["detuning_schedule"] = False
    if getattr(args, "detuning_schedule", None) is not None:
        cfg["detuning_schedule"] = args.detuning_schedule
    if not explicit_dw:
        cfg.pop("delta_omega", None)
    return build_params(cfg)


def _run_option(args, name, fallback):
    value = getattr(args, name, None)
    if value is not None:
        return value
    cfg = _read_file(args)
    if name in cfg:
        try:
            return type(fallback)(cfg[name]) if fallback is not None else cfg[name]
        except ValueError:
            raise ConfigError(f"{name}: bad value {cfg[name]!r}") from None
    return fallback


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from None
    return out


def _run_meta(args, argv, params: Optional[ModelParams], started: float, **extra) -> dict:
    meta = {
        "version": version_string(),
        "command": args.command,
        "argv": list(argv),
        "seed": _run_option(args, "seed", SEED) if hasattr(args, "seed") else None,
        "tolerances": {
            "rtol": _run_option(args, "tol", DEFAULT_RTOL) if hasattr(args, "tol") else None,
            "atol": _run_option(args, "atol", DEFAULT_ATOL) if hasattr(args, "atol") else None,
        },
        "params": params.as_dict() if params else None,
        "elapsed_s": time.perf_counter() - started,
    }
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# subcommands


def _initial_state(tier: str, params: ModelParams, init: str, kick: float, n_max: int):
    if tier == "dnls":
        if init == "soliton":
            return dnls.anti_continuous_soliton(params)
        if init == "vacuum":
            return np.zeros(params.n_sites, complex)
        phi = dnls.homogeneous_seed(params, 0)
        if init == "cold":
            phi[params.center] *= kick
        return phi
    if tier == "soe":
        if init == "vacuum":
            return CorrelationState.vacuum(params.n_sites)
        if init == "soliton":
            return CorrelationState.factorized(dnls.anti_continuous_soliton(params))
        base = soe.homogeneous_states(params, n_starts=0)[0]
        return soe.kicked(base, params.center, kick) if init == "cold" else base
    if init == "vacuum":
        return GutzwillerState(np.repeat(gutzwiller.fock_rho(0, n_max)[None], params.n_sites, axis=0))
    bg = gutzwiller.homogeneous_background(params, n_max)
    rhos = np.repeat(bg[None], params.n_sites, axis=0)
    if init == "cold":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rhos[params.center] = gutzwiller.coherent_state_rho(np.sqrt(8.8), n_max)
    return GutzwillerState(rhos)


def cmd_evolve(args, argv) -> str:
    started = time.perf_counter()
    params = _params(args)
    tier = _run_option(args, "tier", "soe")
    t_end = _run_option(args, "t_end", args.default_t_end)
    dt = _run_option(args, "dt", 0.1)
    tol = _run_option(args, "tol", DEFAULT_RTOL)
    atol = _run_option(args, "atol", DEFAULT_ATOL)
    out = _outdir(args.out)
    state = _initial_state(tier, params, args.init, args.kick, args.n_max)
    if tier == "dnls":
        traj = dnls.integrate_dnls(state, params, t_end, tol=tol, atol=atol, dt=dt, track_center=True)
        io.write_dnls_trajectory(out / "trajectory.csv", traj.t, traj.samples)
        snapshot = {"field": io._matrix_json(traj.final)}
    elif tier == "soe":
        traj = soe.integrate_soe(state, params, t_end, tol=tol, atol=atol, dt=dt)
        n = params.n_sites
        io.write_soe_trajectory(out / "trajectory.csv", traj.t, traj.samples[:, :n], traj.samples[:, n:].real)
        snapshot = io.state_to_json(soe.final_state(traj, n))
    else:
        run = gutzwiller.evolve_gutzwiller(state, params, t_end, tol=tol, atol=atol, dt=dt, strict=False)
        traj = run.trajectory
        io.write_gutzwiller_observables(out / "observables.csv", run)
        snapshot = io.gutzwiller_to_json(run.final, {"valid_truncation": run.valid})
    verdict = detect_steady(traj) if traj.t[-1] >= 1.0 else None
    label = None
    if verdict is not None:
        profile = verdict.mean_profile() if verdict.status == "periodic" else np.abs(traj.first[-1])
        label = classify_mode(verdict, profile, params.boundary)
    meta = {"status": verdict.status if verdict else traj.status, "label": label, "residual": verdict.residual if verdict else None, "period": verdict.period if verdict else None}
    snapshot["meta"] = {**snapshot.get("meta", {}), **meta, "params": params.as_dict()}
    io.write_json(out / "snapshot.json", snapshot)
    io.write_json(out / "run.json", _run_meta(args, argv, params, started, tier=tier, init=args.init, t_end=t_end, verdict=meta))
    return f"evolve tier={tier} J={params.j:g} t_end={t_end:g}: {meta['status']} ({label}) -> {out}"


def cmd_scan_j(args, argv) -> str:
    started = time.perf_counter()
    params = _params(args)
    tier = _run_option(args, "tier", "soe")
    j_values = parse_range(args.j_range)
    out = _outdir(args.out)
    seed = _run_option(args, "seed", SEED)
    ckpt = None if args.no_checkpoint else (args.checkpoint or out / "checkpoint")
    initial = None
    if args.initial == "soliton":
        first = params.with_hopping(j_values[0]) if j_values else params
        initial = _initial_state(tier, first, "soliton", args.kick, args.n_max)
    result = scan_j(
        params,
        j_values,
        tier,
        args.mode,
        t_end=_run_option(args, "t_end", args.default_t_end),
        t_max=args.t_max,
        dt=_run_option(args, "dt", 0.1),
        tol=_run_option(args, "tol", DEFAULT_RTOL),
        atol=_run_option(args, "atol", DEFAULT_ATOL),
        seed=seed,
        perturbation=args.perturbation,
        kick=args.kick,
        wall_budget=args.wall_budget,
        checkpoint=ckpt,
        initial=initial,
        refine=not args.no_refine,
        workers=args.workers,
        tier_options={"n_max": args.n_max} if tier == "gutzwiller" else None,
        progress=lambda r: log.info("J=%.4f %s (%s) %.1fs", r.j, r.label, r.status, r.elapsed),
    )
    write_scan(result, out)
    io.write_json(
        out / "run.json",
        _run_meta(
            args,
            argv,
            params,
            started,
            tier=tier,
            mode=args.mode,
            j_values=j_values,
            perturbation=args.perturbation,
            transitions=[t.__dict__ | {"estimate": t.estimate} for t in result.transitions],
            timings={"total_s": result.elapsed, "per_point_s": [r.elapsed for r in result.records]},
        ),
    )
    named = ", ".join(f"{k}={v:.3f}" for k, v in result.named().items()) or "none"
    return f"scan-j tier={tier} {len(result.records)} points, bifurcations: {named} -> {out}"


def write_scan(result, out: Path) -> None:
    header = ["J", "tier", "label", "status", "center_amplitude", "center_max", "center_min", "period", "residual", "t_converged", "elapsed_s", "refinement", "error"]
    rows = []
    for r in sorted(result.records + result.refinement_records, key=lambda r: r.j):
        rows.append([r.j, r.tier, r.label, r.status, r.center_amplitude, r.center_max, r.center_min, r.period, r.residual, r.t_converged, round(r.elapsed, 3), int(r.refinement), r.error or ""])
    io.write_rows(out / "phases.csv", header, rows)
    heat = []
    for r in result.records:
        for n, amp in enumerate(r.profile):
            heat.append([r.j, n, amp])
    io.write_rows(out / "heatmap_j.csv", ["J", "site", "amplitude"], heat)


def cmd_scan_ua(args, argv) -> str:
    started = time.perf_counter()
    u_values = parse_range(args.u_range)
    a_values = parse_range(args.a_range)
    tiers = ("dnls", "soe") if args.tier == "both" else (args.tier,)
    out = _outdir(args.out)
    grid = scan_ua(u_values, a_values, args.delta_omega, args.gamma, tiers=tiers, grid=args.grid)
    io.write_rows(out / "ua_grid.csv", ["U", "A", "dnls_count", "soe_count"], grid.rows())
    io.write_json(out / "run.json", _run_meta(args, argv, None, started, u_values=u_values, a_values=a_values, delta_omega=args.delta_omega, gamma=args.gamma, tiers=list(tiers), unresolved_marker=-1))
    return f"scan-ua {len(u_values)}x{len(a_values)} cells -> {out}"


def cmd_single_site(args, argv) -> str:
    started = time.perf_counter()
    params = ModelParams(1, 0.0, args.u, args.a, args.delta_omega, args.gamma)
    roots = dnls.single_site_intensities(params)
    count = soe.soe_single_site_count(params)
    out = _outdir(args.out)
    io.write_json(
        out / "single_site.json",
        {
            "params": params.as_dict(),
            "dnls": [{"intensity": r.intensity, "amplitude": [r.amplitude.real, r.amplitude.imag]} for r in roots],
            "soe": {
                "count": count.count,
                "converged_starts": count.n_converged,
                "starts": count.n_starts,
                "solutions": [io.state_to_json(s) for s in count.solutions],
            },
        },
    )
    io.write_json(out / "run.json", _run_meta(args, argv, params, started))
    ints = ", ".join(f"{r.intensity:.10g}" for r in roots)
    print(f"DNLS intensities ({len(roots)}): {ints}")
    print(f"SOE solutions: {count.count}")
    return f"single-site U={args.u:g} A={args.a:g}: DNLS {len(roots)}, SOE {count.count} -> {out}"


def cmd_gutzwiller_protocol(args, argv) -> str:
    started = time.perf_counter()
    base = _params(args)
    out = _outdir(args.out)
    summary = []
    for j in parse_range(args.j_range):
        res = gutzwiller.localization_protocol(j, n_sites=base.n_sites, n_max=args.n_max, kick_density=args.kick_density, t_end=_run_option(args, "t_end", args.default_t_end), dt=_run_option(args, "dt", 0.1), base=base)
        io.write_gutzwiller_observables(out / f"observables_J{j:g}.csv", res.run)
        io.write_rows(out / f"contrast_J{j:g}.csv", ["t", "contrast"], zip(res.decay.t, res.decay.contrast))
        summary.append(
            {
                "J": j,
                "background_density": res.background_density,
                "initial_center_density": res.initial_center_density,
                "plateau_contrast": res.decay.plateau,
                "plateau_time": res.decay.t_plateau,
                "plateau_center_density": res.plateau_center_density,
                "half_life": res.decay.half_life,
                "half_life_censored": res.decay.censored,
                "truncation_valid": res.run.valid,
                "max_top_population": res.run.max_top_population,
                "min_eigenvalue": float(np.min(res.run.min_eigenvalue)),
            }
        )
    io.write_json(out / "protocol.json", summary)
    io.write_json(out / "run.json", _run_meta(args, argv, base, started, n_max=args.n_max, kick_density=args.kick_density))
    lives = ", ".join(f"J={s['J']:g}: {s['half_life']:.3g}" for s in summary)
    return f"gutzwiller-protocol half-lives {lives} -> {out}"


def cmd_correlator(args, argv) -> str:
    started = time.perf_counter()
    params = _params(args)
    out = _outdir(args.out)
    if args.state:
        import json

        data = json.loads(Path(args.state).read_text())
        state = io.state_from_json(data)
        saved = data.get("meta", {}).get("params")
        if saved:
            params = ModelParams(**saved)
        elif state.n_sites != params.n_sites:
            params = params.replace(n_sites=state.n_sites)
    else:
        init = _initial_state("soe", params, args.init, args.kick, 0)
        traj = soe.integrate_soe(init, params, _run_option(args, "t_end", args.default_t_end), tol=_run_option(args, "tol", DEFAULT_RTOL), atol=_run_option(args, "atol", DEFAULT_ATOL), dt=_run_option(args, "dt", 0.1))
        state = soe.final_state(traj, params.n_sites)
    f = measurement.connected_correlator(state, include_offset=args.include_offset, boundary=params.boundary)
    io.write_correlator(out / "correlator.csv", f)
    io.write_json(out / "correlator.json", measurement.correlator_metadata(args.include_offset) | {"n_sites": params.n_sites, "J": params.j})
    io.write_json(out / "run.json", _run_meta(args, argv, params, started))
    return f"correlator J={params.j:g} N={params.n_sites}: max |f| = {np.max(np.abs(f)):.4g} -> {out}"


def cmd_rectangle(args, argv) -> str:
    started = time.perf_counter()
    out = _outdir(args.out)
    n, d, v = args.n_sites, args.d, args.v
    omegas = parse_range(args.omega) if args.omega else list(v * (args.k / d + np.linspace(-3, 3, 601) * 2 * np.pi / (n * d)))
    table = measurement.rectangle_sum_check(n, args.k, omegas, v=v, d=d)
    io.write_rows(
        out / "rectangle.csv",
        ["omega", "re_exact", "im_exact", "abs_exact", "rectangle"],
        zip(table.omega, table.exact.real, table.exact.imag, np.abs(table.exact), table.rectangle),
    )
    peak = abs(measurement.lattice_sum([0.0], n, d)[0])
    zero = measurement.first_zero(n, d)
    sinc = measurement.sinc_factor(1.0, n)
    io.write_json(out / "run.json", _run_meta(args, argv, None, started, n_sites=n, k=args.k, v=v, d=d, peak=peak, first_zero_offset=zero, sinc_y1=sinc))
    print(f"peak {peak:.12g} (N={n}), first zeros at q = +/-{zero:.6g}, sinc(y=1) = {sinc:.6f}")
    return f"rectangle-check N={n} k={args.k:g} -> {out}"


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddbh", description="Driven-dissipative Bose-Hubbard lattice simulations.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("evolve", help="integrate one tier from a chosen initial state")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--tier", choices=["dnls", "soe", "gutzwiller"])
    p.add_argument("--init", choices=["homogeneous", "cold", "soliton", "vacuum"], default="cold")
    p.add_argument("--kick", type=float, default=KICK, help="centre amplitude factor for cold starts")
    p.add_argument("--n-max", type=int, default=gutzwiller.N_MAX)
    _add_out(p, "out/evolve")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("scan-j", help="classify long-time states along a J sweep")
    _add_model_flags(p, with_j=False)
    _add_run_flags(p)
    p.add_argument("--tier", choices=["dnls", "soe", "gutzwiller"])
    p.add_argument("--j", dest="j_range", default="0:6:0.05", help="start:stop:step or comma list")
    p.add_argument("--mode", choices=["adiabatic", "cold"], default="adiabatic")
    p.add_argument("--t-max", type=float, default=None, help="continue transient points up to this horizon")
    p.add_argument("--initial", choices=["homogeneous", "soliton"], default="homogeneous", help="first-point state for adiabatic sweeps")
    p.add_argument("--perturbation", type=float, default=PERTURBATION)
    p.add_argument("--kick", type=float, default=KICK)
    p.add_argument("--wall-budget", type=float, default=WALL_BUDGET, help="per-point wall-clock cap in seconds")
    p.add_argument("--workers", type=int, default=1, help="parallel workers (cold mode)")
    p.add_argument("--checkpoint", help="checkpoint directory (default OUT/checkpoint)")
    p.add_argument("--no-checkpoint", action="store_true")
    p.add_argument("--no-refine", action="store_true", help="skip bisection of bifurcation points")
    p.add_argument("--n-max", type=int, default=gutzwiller.N_MAX)
    _add_out(p, "out/scan-j")
    p.set_defaults(func=cmd_scan_j)

    p = sub.add_parser("scan-ua", help="single-site solution counts over a (U, A) grid")
    p.add_argument("--u", dest="u_range", default="-3:0:0.25")
    p.add_argument("--a", dest="a_range", default="0:4:0.25")
    p.add_argument("--delta-omega", type=float, default=3.0)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--tier", choices=["dnls", "soe", "both"], default="both")
    p.add_argument("--grid", type=int, default=11, help="multistart grid size per axis")
    _add_out(p, "out/scan-ua")
    p.set_defaults(func=cmd_scan_ua)

    p = sub.add_parser("single-site", help="DNLS roots and SOE solution count for one cavity")
    p.add_argument("--u", type=float, default=STAR["u"])
    p.add_argument("--a", type=float, default=STAR["a"])
    p.add_argument("--delta-omega", type=float, default=3.0)
    p.add_argument("--gamma", type=float, default=STAR["gamma"])
    _add_out(p, "out/single-site")
    p.set_defaults(func=cmd_single_site)

    p = sub.add_parser("gutzwiller-protocol", help="localization decay after a centre kick")
    _add_model_flags(p, with_j=False)
    _add_run_flags(p, t_end=100.0)
    p.add_argument("--j", dest="j_range", default="0.5,2,3.5")
    p.add_argument("--n-max", type=int, default=gutzwiller.N_MAX)
    p.add_argument("--kick-density", type=float, default=8.8)
    p.set_defaults(n_sites=15)
    _add_out(p, "out/gutzwiller")
    p.set_defaults(func=cmd_gutzwiller_protocol)

    p = sub.add_parser("correlator", help="momentum-space connected correlator of an SOE state")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--state", help="snapshot JSON from `evolve --tier soe` (skips the evolution)")
    p.add_argument("--init", choices=["homogeneous", "cold", "soliton", "vacuum"], default="homogeneous")
    p.add_argument("--kick", type=float, default=KICK)
    p.add_argument("--include-offset", action="store_true", help="add the commutator delta_kk'")
    _add_out(p, "out/correlator")
    p.set_defaults(func=cmd_correlator)

    p = sub.add_parser("rectangle-check", help="lattice sum vs rectangle approximation")
    p.add_argument("--n", dest="n_sites", type=int, default=10)
    p.add_argument("--k", type=float, default=np.pi)
    p.add_argument("--v", type=float, default=1.0)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--omega", help="start:stop:step (default: +/-3 zero spacings around k)")
    _add_out(p, "out/rectangle")
    p.set_defaults(func=cmd_rectangle)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args, argv)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"ddbh {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


cli_main = main

if __name__ == "__main__":
    sys.exit(main())
