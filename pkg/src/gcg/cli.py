"""Command-line experiment runner.

Two subcommands: ``run`` solves a registered problem instance and writes
the iteration history (CSV), the final control (text field dump), and a
diagnostics report; ``list`` prints the problem registry.  All output is
deterministic: rerunning the same configuration reproduces byte-identical
files.

Exit codes: 0 on a completed solve, 1 on usage errors, 2 on numerical
failures, 3 on I/O failures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import elliptic, parabolic
from .core import (
    ArmijoParams,
    LineSearchError,
    OracleError,
    SolverConfig,
    SolveStatus,
    gcg_solve,
)
from .pde import estimate_c_constant, heat_c_constant, write_field

_DEFAULTS = {
    "n": None,  # per-problem default filled in below
    "nt": 100,
    "tol": 1e-10,
    "max_iter": 1000,
    "alpha": 0.5,
    "gamma": 0.99,
    "out_dir": ".",
    "track_errors": False,
    "diagnostics": True,
}

# name -> (kind, default n, description)
_REGISTRY = {
    "parabolic-ex": (
        "parabolic",
        32,
        parabolic.PARABOLIC_EXAMPLES["parabolic-ex"],
    ),
    "parabolic-ex-1d": (
        "parabolic",
        32,
        parabolic.PARABOLIC_EXAMPLES["parabolic-ex-1d"],
    ),
    "stadler-ex1": ("elliptic", 64, elliptic.ELLIPTIC_EXAMPLES["stadler-ex1"]),
    "stadler-ex3": ("elliptic", 64, elliptic.ELLIPTIC_EXAMPLES["stadler-ex3"]),
}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one solver invocation."""

    problem: str
    n: int
    nt: int
    gap_tol: float
    max_iter: int
    alpha: float
    gamma: float
    out_dir: str
    track_errors: bool
    diagnostics: bool


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="solve a registered problem instance")
    run_p.add_argument("--problem", required=True, help="registry name (see: gcg list)")
    run_p.add_argument("--n", type=int, default=None, help="spatial nodes per direction")
    run_p.add_argument("--nt", type=int, default=None, help="time steps (parabolic only)")
    run_p.add_argument("--tol", type=float, default=None, help="gap tolerance")
    run_p.add_argument("--max-iter", type=int, default=None, help="iteration cap")
    run_p.add_argument("--alpha", type=float, default=None, help="descent fraction")
    run_p.add_argument("--gamma", type=float, default=None, help="backtracking ratio")
    run_p.add_argument("--config", default=None, help="key=value settings file")
    run_p.add_argument("--out-dir", default=None, help="output directory")
    run_p.add_argument(
        "--track-errors",
        action="store_true",
        default=None,
        help="solve twice and record iterate errors against the first solution",
    )
    run_p.add_argument(
        "--no-diagnostics",
        action="store_true",
        default=None,
        help="skip the diagnostics report",
    )

    sub.add_parser("list", help="list the problem registry")
    return parser


_BOOL_WORDS = {
    "true": True,
    "false": False,
    "yes": True,
    "no": False,
    "1": True,
    "0": False,
}

_CONFIG_KEYS = {
    "problem": str,
    "n": int,
    "nt": int,
    "tol": float,
    "max_iter": int,
    "alpha": float,
    "gamma": float,
    "out_dir": str,
    "track_errors": bool,
    "diagnostics": bool,
}


def load_config_file(path) -> dict:
    """Parse a flat key=value settings file; '#' starts a comment."""
    settings = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        kind = _CONFIG_KEYS[key]
        try:
            if kind is bool:
                settings[key] = _BOOL_WORDS[value.lower()]
            else:
                settings[key] = kind(value)
        except (KeyError, ValueError):
            raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return settings


def resolve_config(args) -> RunConfig:
    """Merge defaults, config file, and flags (flags win) into a RunConfig."""
    merged = dict(_DEFAULTS)
    merged["problem"] = None
    if args.config is not None:
        merged.update(load_config_file(args.config))
    flag_map = {
        "problem": args.problem,
        "n": args.n,
        "nt": args.nt,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "alpha": args.alpha,
        "gamma": args.gamma,
        "out_dir": args.out_dir,
    }
    for key, value in flag_map.items():
        if value is not None:
            merged[key] = value
    if args.track_errors is not None:
        merged["track_errors"] = True
    if args.no_diagnostics is not None:
        merged["diagnostics"] = False

    name = merged["problem"]
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise UsageError(f"unknown problem {name!r} (known: {known})")
    if merged["n"] is None:
        merged["n"] = _REGISTRY[name][1]
    return RunConfig(
        problem=name,
        n=int(merged["n"]),
        nt=int(merged["nt"]),
        gap_tol=float(merged["tol"]),
        max_iter=int(merged["max_iter"]),
        alpha=float(merged["alpha"]),
        gamma=float(merged["gamma"]),
        out_dir=str(merged["out_dir"]),
        track_errors=bool(merged["track_errors"]),
        diagnostics=bool(merged["diagnostics"]),
    )


def _build_problem(config: RunConfig):
    kind = _REGISTRY[config.problem][0]
    if kind == "elliptic":
        return elliptic.make_example(config.problem, config.n), kind
    return parabolic.make_example(config.problem, config.n, config.nt), kind


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_history_csv(path: Path, history) -> None:
    lines = ["k,j,gap,step,backtracks,err_u,err_v"]
    for rec in history:
        lines.append(
            f"{rec.k},{_fmt(rec.j_value)},{_fmt(rec.gap)},{_fmt(rec.step)},"
            f"{rec.backtracks},{_fmt(rec.err_u)},{_fmt(rec.err_v)}"
        )
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _diagnostics_lines(config: RunConfig, prob, kind: str, result) -> list[str]:
    history = result.history
    lines = [
        f"status = {result.status.value}",
        f"iterations = {result.iterations}",
        f"j_final = {_fmt(history[-1].j_value)}",
        f"gap_final = {_fmt(history[-1].gap)}",
        f"eps_fp = {_fmt(result.eps_fp)}",
        f"mstar = {_fmt(result.mstar)}",
    ]
    if kind == "elliptic":
        c = estimate_c_constant(prob.operator, prob.grid.mass_weights())
        quantum = prob.grid.h**2
    else:
        c = heat_c_constant(prob.grid, prob.conductivity)
        quantum = prob.grid.tau
    L_est = c * c
    lines.append(f"L_est = {_fmt(L_est)}")

    residuals = diag.residuals_from_history(history, history[-1].j_value)
    r0 = float(residuals[0])
    if r0 > 0.0:
        q_env = diag.envelope_q(r0, config.alpha, config.gamma, L_est, result.mstar)
        ok, violation = diag.check_envelope(residuals, q_env, result.eps_fp)
        lines.append(f"q_env = {_fmt(q_env)}")
        lines.append(f"envelope_ok = {ok}")
        lines.append(f"envelope_violation = {'n/a' if violation is None else violation}")
    else:
        lines.append("q_env = n/a (zero initial residual)")

    try:
        window = diag.rate_fit_window(residuals, result.eps_fp)
        lam, r_squared = diag.fit_rate(residuals[window], result.eps_fp)
        lines.append(f"rate_lambda = {_fmt(lam)}")
        lines.append(f"rate_r_squared = {_fmt(r_squared)}")
        lines.append(f"rate_fit_points = {window.size}")
    except ValueError as exc:
        lines.append(f"rate_lambda = n/a ({exc})")

    u = result.final_iterate
    _, p = prob.f_and_grad(u)
    eps_grid = [2.0**-e for e in range(20, 2, -1)]
    if kind == "elliptic":
        measures = [elliptic.growth_measure(prob, p, e) for e in eps_grid]
    else:
        measures = [parabolic.growth_measure_time(prob, p, e) for e in eps_grid]
    eps_kept, meas_kept = diag.select_growth_bins(eps_grid, measures, quantum)
    try:
        kappa = diag.fit_kappa(eps_kept, meas_kept)
        lines.append(
            "kappa_hat = vacuous" if kappa is None else f"kappa_hat = {_fmt(kappa)}"
        )
        lines.append(f"kappa_fit_bins = {eps_kept.size}")
    except ValueError as exc:
        lines.append(f"kappa_hat = n/a ({exc})")

    if kind == "elliptic":
        report = elliptic.structure_report(prob, u, p)
        lines.append(f"three_value_fraction = {_fmt(report.three_value_fraction)}")
        lines.append(f"case_match_fraction = {_fmt(report.case_match_fraction)}")
    else:
        lines.append(
            f"time_sparsity_fraction = {_fmt(parabolic.time_sparsity_fraction(prob, u))}"
        )
        norms = parabolic.time_profile(prob, u, p)
        lines.append(f"control_norm_max = {_fmt(float(np.max(norms.control_norms)))}")
        lines.append(f"adjoint_norm_max = {_fmt(float(np.max(norms.adjoint_norms)))}")
    return lines


def run(config: RunConfig) -> int:
    try:
        prob, kind = _build_problem(config)
    except ValueError as exc:
        print(f"gcg: error: {exc}", file=sys.stderr)
        return 1

    solver_kwargs = dict(gap_tol=config.gap_tol, max_iter=config.max_iter)
    armijo = ArmijoParams(alpha=config.alpha, gamma=config.gamma)
    composite = prob.composite()
    u0 = prob.zero_control()
    try:
        reference = None
        if config.track_errors:
            ref_result = gcg_solve(
                composite, u0, SolverConfig(armijo=armijo, **solver_kwargs)
            )
            reference = ref_result.final_iterate
        result = gcg_solve(
            composite,
            u0,
            SolverConfig(
                armijo=armijo, record_errors_against=reference, **solver_kwargs
            ),
        )
    except (OracleError, LineSearchError, ValueError) as exc:
        print(f"gcg: numerical failure: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_history_csv(out_dir / "history.csv", result.history)
        write_field(out_dir / "control.txt", result.final_iterate)
        if config.diagnostics:
            lines = _diagnostics_lines(config, prob, kind, result)
            (out_dir / "diagnostics.txt").write_text(
                "\n".join(lines) + "\n", newline="\n"
            )
    except OSError as exc:
        print(f"gcg: i/o failure: {exc}", file=sys.stderr)
        return 3

    label = {
        SolveStatus.CONVERGED: "Converged",
        SolveStatus.MAX_ITER_REACHED: "MaxIterReached",
        SolveStatus.LINE_SEARCH_FAILED: "LineSearchFailed",
    }[result.status]
    print(
        f"{label} after {result.iterations} iterations, "
        f"final gap {result.history[-1].gap:.6e}, output in {out_dir}"
    )
    return 2 if result.status is SolveStatus.LINE_SEARCH_FAILED else 0


def list_problems() -> int:
    for name in sorted(_REGISTRY):
        _, default_n, description = _REGISTRY[name]
        print(f"{name:18s} (default n={default_n}) {description}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        return list_problems()
    try:
        config = resolve_config(args)
    except UsageError as exc:
        print(f"gcg: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gcg: i/o failure: {exc}", file=sys.stderr)
        return 3
    return run(config)


if __name__ == "__main__":
    raise SystemExit(main())
