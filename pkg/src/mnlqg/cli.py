"""Command-line frontend wiring synthesis, moment analysis, simulation,
threshold tuning, evaluation, and parameter sweeps into reproducible
pipelines with CSV/JSON outputs.

Exit codes: 0 success; 2 invalid config or flags; 3 Riccati non-convergence;
4 mean-square compensation lost (rho(H) >= 1) where a steady state was
required; 1 internal error. Every run writes a manifest
(<subcommand>.manifest.json) listing the config hash and output files.
Identical invocations (same config hash, seed, version) produce byte-identical
CSV/JSON outputs; only the manifest carries timestamps.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .detector import (
    compare_compensators,
    detect,
    threshold_report_dict,
    tune_threshold,
)
from .model import (
    ConfigError,
    RunOptions,
    build_pendulum,
    config_document,
    parse_config_document,
)
from .moments import (
    NotCompensatedError,
    build_operator,
    expected_q,
    stability_diagnostics,
    steady_state,
)
from .sim import (
    AnomalySpec,
    empirical_moments,
    empirical_stats,
    read_trace_csv,
    simulate,
    write_trace_csv,
)
from .synthesis import solve_coupled_riccati, solve_lqg

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_NOT_COMPENSATED = 4

DEFAULT_PENDULUM_SIGMA2 = 0.06


class NonConvergenceError(RuntimeError):
    """Riccati iteration did not converge where converged gains were required."""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnlqg",
        description=(
            "Compensator synthesis and model-risk-aware anomaly detection "
            "for linear systems with multiplicative noise."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, sim_flags=True):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="JSON config file")
        src.add_argument(
            "--pendulum", action="store_true",
            help="use the built-in inverted-pendulum benchmark",
        )
        p.add_argument(
            "--sigma2", type=float, default=None,
            help="set the first A- and C-direction variances",
        )
        p.add_argument(
            "--compensator", choices=["mlqg", "lqg"], default="mlqg",
            help="which compensator to synthesize (default mlqg)",
        )
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if sim_flags:
            p.add_argument("--steps", type=int, default=1_000_000,
                           help="simulation length (default 1e6)")
            p.add_argument("--seed", type=int, default=None,
                           help="RNG seed (default: config options.seed)")
            p.add_argument("--noise", choices=["gaussian", "laplacian"], default=None,
                           help="additive-noise law (default: config options.noise_kind)")
            p.add_argument("--mode", choices=["sampled", "fixed-mismatch"],
                           default="sampled", help="plant evolution mode")
            p.add_argument("--moments", type=int, default=4,
                           help="number of raw moments s (default 4)")
            p.add_argument("--rate", type=float, default=0.05,
                           help="target false-alarm rate F (default 0.05)")

    p = sub.add_parser("synthesize", help="compute compensator gains")
    add_common(p, sim_flags=False)

    p = sub.add_parser("analyze", help="stability radii and steady-state residual moments")
    add_common(p, sim_flags=False)

    p = sub.add_parser("simulate", help="run one closed-loop trace to CSV")
    add_common(p)
    p.add_argument("--alpha", type=float, default=None, help="alarm threshold for the trace")
    p.add_argument("--anomaly-start", type=int, default=None, help="sensor-bias start step")
    p.add_argument("--anomaly-channel", type=int, default=0, help="biased output channel")
    p.add_argument("--anomaly-bias", type=float, default=None, help="sensor bias magnitude")

    p = sub.add_parser("tune", help="tune the detector threshold from simulated moments")
    add_common(p)
    p.add_argument("--trace", type=Path, default=None,
                   help="reuse an existing trace CSV instead of simulating")

    p = sub.add_parser("evaluate", help="apply a threshold to a trace CSV")
    p.add_argument("--trace", type=Path, required=True, help="trace CSV to evaluate")
    p.add_argument("--threshold", type=Path, default=None, help="threshold JSON from 'tune'")
    p.add_argument("--alpha", type=float, default=None, help="explicit threshold value")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")

    p = sub.add_parser("compare", help="side-by-side MLQG vs LQG evaluation")
    add_common(p)

    p = sub.add_parser("sweep", help="tabulate both compensators over a sigma2 grid")
    add_common(p)
    p.add_argument("--grid", type=str, required=True,
                   help="comma-separated sigma2 values, e.g. 0.02,0.04,0.06")
    p.add_argument("--sweep-compensator", choices=["mlqg", "lqg", "both"], default="both",
                   help="which compensator rows to emit (default both)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel row workers (default: cpu count)")
    return parser


# --- config plumbing --------------------------------------------------------


def _config_from_args(args) -> tuple[dict, str | None]:
    """Resolve the config document and its source path from the flags."""
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
        return doc, str(args.config)
    if not args.pendulum:
        raise ConfigError("no system given: pass --config <path> or --pendulum")
    sigma2 = args.sigma2 if args.sigma2 is not None else DEFAULT_PENDULUM_SIGMA2
    system, weights, options = build_pendulum(sigma2, sigma2)
    return config_document(system, weights, options), None


def _apply_sigma2(doc: dict, sigma2: float) -> dict:
    """Set the first A- and C-direction variances in a config document."""
    system = doc.get("system", {})
    for key in ("a_dirs", "c_dirs"):
        dirs = system.get(key) or []
        if not dirs:
            raise ConfigError(
                f"--sigma2 needs an existing system.{key} entry to override"
            )
        dirs[0]["variance"] = sigma2
    return doc


def _resolve_inputs(args):
    doc, path = _config_from_args(args)
    if args.config is not None and args.sigma2 is not None:
        doc = _apply_sigma2(doc, args.sigma2)
    system, weights, options = parse_config_document(doc)
    if getattr(args, "seed", None) is not None:
        options = RunOptions(options.true_A, options.noise_kind, args.seed)
    if getattr(args, "noise", None) is not None:
        options = RunOptions(options.true_A, args.noise, options.seed)
    sha = hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    return system, weights, options, doc, path, sha


def _solve(args, system, weights):
    solver = solve_coupled_riccati if args.compensator == "mlqg" else solve_lqg
    gains = solver(system, weights)
    if not gains.converged:
        raise NonConvergenceError(
            f"coupled Riccati iteration did not converge "
            f"(iterations {gains.iterations}, residual {gains.residual:.3e}); "
            f"mean-square compensatability is lost at this noise level"
        )
    return gains


# --- output helpers ---------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _maybe(x):
    return None if x is None else float(x)


def _write_manifest(out_dir, subcommand, argv, config_path, sha, seed, outputs, started):
    manifest = {
        "subcommand": subcommand,
        "argv": list(argv),
        "config_path": config_path,
        "config_sha256": sha,
        "seed": seed,
        "version": __version__,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p.name) for p in outputs],
    }
    _write_json(out_dir / f"{subcommand}.manifest.json", manifest)


# --- subcommands ------------------------------------------------------------


def _cmd_synthesize(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    system, weights, options, _, path, sha = _resolve_inputs(args)
    gains = _solve(args, system, weights)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "compensator": args.compensator,
        "K": gains.K.tolist(),
        "L": gains.L.tolist(),
        "P1": gains.P1.tolist(),
        "P2": gains.P2.tolist(),
        "P3": gains.P3.tolist(),
        "P4": gains.P4.tolist(),
        "iterations": gains.iterations,
        "residual": gains.residual,
        "converged": gains.converged,
    }
    target = out / "gains.json"
    _write_json(target, payload)
    _write_manifest(out, "synthesize", argv, path, sha, options.seed, [target], started)
    return EXIT_OK


def _cmd_analyze(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    system, weights, options, _, path, sha = _resolve_inputs(args)
    gains = _solve(args, system, weights)
    diag = stability_diagnostics(system, gains.K, gains.L)
    op = build_operator(system, gains.K, gains.L)
    ss = steady_state(op, system)  # raises NotCompensatedError -> exit 4
    payload = {
        "compensator": args.compensator,
        "rho_open": diag.rho_open,
        "rho_closed": diag.rho_closed,
        "rho_H": diag.rho_H,
        "sigma_r": ss.sigma_r.tolist(),
        "sigma_x_err": ss.sigma_x_err.tolist(),
        "expected_q": expected_q(ss, np.zeros(system.n), system.C_bar),
        "sigma_x0": system.sigma_x0.tolist(),
    }
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    target = out / "analysis.json"
    _write_json(target, payload)
    _write_manifest(out, "analyze", argv, path, sha, options.seed, [target], started)
    return EXIT_OK


def _trace_pipeline(args, system, weights, options):
    if args.mode == "fixed-mismatch" and options.true_A is None:
        raise ConfigError("fixed-mismatch mode requires options.true_A in the config")
    gains = _solve(args, system, weights)
    op = build_operator(system, gains.K, gains.L)
    ss = steady_state(op, system)
    anomaly = None
    if getattr(args, "anomaly_bias", None) is not None:
        if args.anomaly_start is None:
            raise ConfigError("--anomaly-bias requires --anomaly-start")
        anomaly = AnomalySpec(args.anomaly_start, args.anomaly_channel, args.anomaly_bias)
    trace = simulate(
        system,
        gains,
        ss.sigma_r,
        args.steps,
        seed=options.seed,
        noise_kind=options.noise_kind,
        mode=args.mode,
        true_A=options.true_A,
        anomaly=anomaly,
        alpha=getattr(args, "alpha", None),
    )
    return gains, ss, trace


def _cmd_simulate(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    system, weights, options, _, path, sha = _resolve_inputs(args)
    _, _, trace = _trace_pipeline(args, system, weights, options)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    target = out / "trace.csv"
    write_trace_csv(trace, target)
    _write_manifest(out, "simulate", argv, path, sha, options.seed, [target], started)
    return EXIT_OK


def _cmd_tune(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    system, weights, options, _, path, sha = _resolve_inputs(args)
    if args.trace is not None:
        trace = read_trace_csv(args.trace)
    else:
        _, _, trace = _trace_pipeline(args, system, weights, options)
    moments = empirical_moments(trace, args.moments)
    report = tune_threshold(moments, args.rate)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    target = out / "threshold.json"
    _write_json(target, threshold_report_dict(report))
    _write_manifest(out, "tune", argv, path, sha, options.seed, [target], started)
    return EXIT_OK


def _cmd_evaluate(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    if (args.threshold is None) == (args.alpha is None):
        raise ConfigError("pass exactly one of --threshold or --alpha")
    if args.alpha is not None:
        alpha = args.alpha
    else:
        try:
            alpha = float(json.loads(Path(args.threshold).read_text())["alpha_star"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"cannot read threshold file {args.threshold}: {e}") from e
    trace = read_trace_csv(args.trace)
    alarms, alarm_times = detect(trace.q, alpha)
    stats = empirical_stats(trace, alpha)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    alarms_path = out / "alarms.csv"
    with open(alarms_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "q", "alarm"])
        for k, q, a in zip(trace.k, trace.q, alarms):
            writer.writerow([int(k), repr(float(q)), "1" if a else "0"])
    rate_path = out / "rate.json"
    _write_json(
        rate_path,
        {
            "alpha": alpha,
            "false_alarm_rate": stats.false_alarm_rate,
            "alarm_count": int(alarms.sum()),
            "alarm_times_head": [int(t) for t in alarm_times[:100]],
            "mean_q": stats.mean_q,
            "steps": trace.steps,
        },
    )
    sha = hashlib.sha256(Path(args.trace).read_bytes()).hexdigest()
    _write_manifest(out, "evaluate", argv, str(args.trace), sha, None,
                    [alarms_path, rate_path], started)
    return EXIT_OK


def _report_fields(rep) -> dict:
    return {
        "converged": rep.converged,
        "rho_H": _maybe(rep.rho_H),
        "sigma_r": None if rep.sigma_r is None else rep.sigma_r.tolist(),
        "moments": None if rep.moments is None else list(rep.moments),
        "alpha_star": _maybe(rep.alpha_star),
        "empirical_false_alarm_rate": _maybe(rep.false_alarm_rate),
    }


def _cmd_compare(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    system, weights, options, _, path, sha = _resolve_inputs(args)
    report = compare_compensators(
        system, weights, args.rate, args.steps, options.seed,
        s=args.moments, noise_kind=options.noise_kind,
    )
    payload = {
        "target_rate": report.target_rate,
        "steps": report.steps,
        "seed": report.seed,
        "s": report.s,
        "noise_kind": report.noise_kind,
        "mlqg": _report_fields(report.mlqg),
        "lqg": _report_fields(report.lqg),
    }
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    target = out / "compare.json"
    _write_json(target, payload)
    _write_manifest(out, "compare", argv, path, sha, options.seed, [target], started)
    return EXIT_OK


# --- sweep ------------------------------------------------------------------


def _sweep_row(doc, sigma2, compensator, steps, seed_entropy, s, rate, noise_kind, mode):
    """One (sigma2, compensator) cell; pure function of its arguments."""
    doc = json.loads(json.dumps(doc))  # deep copy; workers must not share state
    _apply_sigma2(doc, sigma2)
    system, weights, options = parse_config_document(doc)
    solver = solve_coupled_riccati if compensator == "mlqg" else solve_lqg
    gains = solver(system, weights)
    base = {"sigma2": sigma2, "compensator": compensator, "converged": gains.converged}
    if not gains.converged:
        return base
    op = build_operator(system, gains.K, gains.L)
    try:
        ss = steady_state(op, system)
    except NotCompensatedError as e:
        base["rho_H"] = e.rho
        return base
    trace = simulate(
        system, gains, ss.sigma_r, steps, seed=seed_entropy,
        noise_kind=noise_kind, mode=mode, true_A=options.true_A,
    )
    moments = empirical_moments(trace, s)
    report = tune_threshold(moments, rate)
    stats = empirical_stats(trace, report.alpha_star)
    p = system.p
    base.update(
        rho_H=ss.rho_H,
        Sigma_r=float(ss.sigma_r[0, 0]) if p == 1 else float(np.linalg.norm(ss.sigma_r)),
        E_q=stats.mean_q,
        alpha_star=report.alpha_star,
        empirical_false_alarm_rate=stats.false_alarm_rate,
    )
    return base


SWEEP_COLUMNS = [
    "sigma2", "compensator", "converged", "rho_H", "Sigma_r",
    "E_q", "alpha_star", "empirical_false_alarm_rate",
]


def _format_cell(key, value):
    if key == "compensator":
        return value
    if key == "converged":
        return "true" if value else "false"
    if value is None:
        return "N/A"
    return repr(float(value))


def _cmd_sweep(args, argv) -> int:
    started = datetime.now(timezone.utc).isoformat()
    system, weights, options, doc, path, sha = _resolve_inputs(args)
    try:
        grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    except ValueError as e:
        raise ConfigError(f"--grid: {e}") from e
    if not grid or any(g < 0 for g in grid):
        raise ConfigError("--grid needs a non-empty list of sigma2 values >= 0")
    compensators = ["mlqg", "lqg"] if args.sweep_compensator == "both" else [args.sweep_compensator]

    # Row seeds derive from (seed, grid index), so both compensators at one
    # grid point consume the same noise stream and subset selection does not
    # move seeds around.
    jobs = [
        (sigma2, comp, [options.seed, gi])
        for gi, sigma2 in enumerate(grid)
        for comp in compensators
    ]
    if args.mode == "fixed-mismatch" and options.true_A is None:
        raise ConfigError("fixed-mismatch mode requires options.true_A in the config")
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(jobs)))
    row_args = [
        (doc, sigma2, comp, args.steps, entropy, args.moments, args.rate,
         options.noise_kind, args.mode)
        for sigma2, comp, entropy in jobs
    ]
    if workers == 1:
        rows = [_sweep_row(*a) for a in row_args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, *zip(*row_args)))

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    target = out / "sweep.csv"
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(c, row.get(c)) for c in SWEEP_COLUMNS])
    _write_manifest(out, "sweep", argv, path, sha, options.seed, [target], started)
    return EXIT_OK


_HANDLERS = {
    "synthesize": _cmd_synthesize,
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "tune": _cmd_tune,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on bad flags, 0 on --help
        return int(e.code or 0)
    try:
        return _HANDLERS[args.subcommand](args, argv)
    except ConfigError as e:
        print(f"mnlqg: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as e:
        print(f"mnlqg: {e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except NotCompensatedError as e:
        print(f"mnlqg: {e}", file=sys.stderr)
        return EXIT_NOT_COMPENSATED
    except Exception as e:  # pragma: no cover - defensive
        print(f"mnlqg: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
