"""Command-line entry point.

Exit status: 0 when every asserted check passes, 2 when an invariant or
assumption check fails, 1 on configuration, I/O or solver errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .coefficients import AssumptionError, check_assumptions_H
from .config import ConfigError, RunConfig, echo_config, load_config, replace
from .diagnostics import (convergence_study, duality_band, entropy_map_checks, ode_compare,
                          trajectory_checks)
from .duality import duality_norm, verify_trajectory_duality
from .io import emit_outputs, load_trajectory
from .spatial import FDGrid
from .stepper import StepFailure, TimeStepTooLarge, entropy_constants, run_trajectory

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

log = logging.getLogger("crossdiff")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossdiff", description="Cross-diffusion simulator with runtime estimate checks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file (defaults if omitted)")
        p.add_argument("--out", help="output directory (overrides the 'out' key)")
        p.add_argument("--seed", type=int, help="random seed (overrides the 'seed' key)")
        p.add_argument("--figures", action="store_true", help="also render PNG figures")
        p.add_argument("-q", "--quiet", action="store_true", help="only print failures and the summary")
        return p

    common(sub.add_parser("simulate", help="run a trajectory and write series/fields/report"))
    common(sub.add_parser("check-assumptions", help="validate the coefficient set"))
    common(sub.add_parser("verify-entropy", help="entropy-map identities and entropy estimates"))
    p = common(sub.add_parser("verify-duality", help="dual chains induced by a trajectory"))
    p.add_argument("--trajectory", help="trajectory.npz written by simulate (otherwise a run is made)")
    p = common(sub.add_parser("convergence-study", help="refine (tau, eps, n) and compare levels"))
    p.add_argument("--levels", type=int, default=3)
    p = common(sub.add_parser("ode-compare", help="compare a spatially constant run with RK4"))
    p.add_argument("--max-rel-error", type=float, default=None,
                   help="fail (exit 2) if the relative deviation exceeds this value")
    return parser


def _config(args) -> RunConfig:
    overrides = {"out": args.out, "seed": args.seed}
    if args.figures:
        overrides["figures"] = True
    if args.config:
        return load_config(args.config, overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _print_checks(checks, quiet):
    for c in checks:
        if not quiet or (c.asserted and not c.passed):
            print(c.line())


def _status(checks) -> int:
    return EXIT_OK if all(c.passed for c in checks if c.asserted) else EXIT_VIOLATION


def _run(cfg: RunConfig):
    reg, maps, space, scfg = cfg.build()
    u0 = cfg.initial_data(space, Path.cwd())
    return run_trajectory(space, reg, scfg, u0, maps)


def cmd_simulate(args, cfg):
    try:
        traj = _run(cfg)
    except StepFailure as exc:
        lines = [f"ERROR {exc}", f"steps completed: {exc.partial.steps_done if exc.partial else 0}"]
        emit_outputs(exc.partial, lines, cfg, cfg.out)
        print(lines[0], file=sys.stderr)
        return EXIT_ERROR
    consts = entropy_constants(traj.reg, traj.maps, traj.space.mu, cfg.T)
    checks = trajectory_checks(traj, consts)
    lines = [f"constants: K = {consts.K:.17g}, K_T = {consts.K_T:.17g} ({consts.detail})",
             *(f"map {i + 1}: B = {m.B:.17g}, D = {m.D:.17g}" for i, m in enumerate(traj.maps))]
    if traj.reg.report is not None:
        lines += traj.reg.report.lines()
    lines += [c.line() for c in checks]
    status = _status(checks)
    lines.append("STATUS " + ("PASS" if status == EXIT_OK else "FAIL"))
    paths = emit_outputs(traj, lines, cfg, cfg.out)
    _print_checks(checks, args.quiet)
    print(f"wrote {len(paths)} files to {cfg.out}")
    return status


def cmd_check_assumptions(args, cfg):
    report = check_assumptions_H(cfg.coefficients())
    for line in report.lines():
        if not args.quiet or line.startswith("FAIL"):
            print(line)
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_verify_entropy(args, cfg):
    reg, maps, space, scfg = cfg.build()
    checks = entropy_map_checks(maps, seed=cfg.seed)
    traj = run_trajectory(space, reg, scfg, cfg.initial_data(space, Path.cwd()), maps)
    checks += trajectory_checks(traj)
    _print_checks(checks, args.quiet)
    return _status(checks)


def cmd_verify_duality(args, cfg):
    if args.trajectory:
        traj, cfg = load_trajectory(args.trajectory)
    else:
        traj = _run(cfg)
    grid = FDGrid(cfg.dim, cfg.extents, cfg.fd_points)
    results = verify_trajectory_duality(traj, grid)
    status = EXIT_OK
    norms = duality_norm(traj)
    for i, res in results.items():
        print(f"species {i}: duality norm {norms[i - 1]:.10g}, min Phi {res['min_phi']:.3e}, "
              f"fitted Linf constant {res['linf']['fitted_constant']:.4g}")
        if res["min_phi"] < -1e-12 or not res["linf"]["finite"]:
            status = EXIT_VIOLATION
            print(f"FAIL species {i}: dual solution sign or finiteness")
        for b in res["bounds"]:
            if not args.quiet or (b.asserted and not b.passed):
                print("  " + b.line())
            if b.asserted and not b.passed:
                status = EXIT_VIOLATION
    return status


def cmd_convergence_study(args, cfg):
    levels = convergence_study(cfg, args.levels)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(levels[0].weak)
    with open(out / "convergence.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "N", "eps", "n", "final_entropy", "duality1", "duality2", "weak_max",
                    *(f"weak_{p}_{m}_s{s}" for p, m in keys for s in (1, 2)), "seconds"])
        for r in levels:
            w.writerow([r.level, r.N, format(r.eps, ".17g"), r.n, format(r.final_entropy, ".17g"),
                        *(format(v, ".17g") for v in r.duality), format(r.weak_max, ".17g"),
                        *(format(float(v), ".17g") for key in keys for v in np.abs(r.weak[key])),
                        format(r.seconds, ".3f")])
    status = EXIT_OK
    for r in levels:
        bad = [c for c in r.checks if c.asserted and not c.passed]
        print(f"level {r.level}: N={r.N} eps={r.eps:.3g} n={r.n} duality=({r.duality[0]:.6g}, "
              f"{r.duality[1]:.6g}) weak_max={r.weak_max:.3e} failed_checks={len(bad)}")
        if bad:
            status = EXIT_VIOLATION
            for c in bad:
                print("  " + c.line())
    for i in range(2):
        spread, trend = duality_band([r.duality[i] for r in levels])
        ok = spread <= 0.2 and trend <= 0.2
        print(f"{'PASS' if ok else 'FAIL'} duality norm {i + 1}: spread {spread:.3%}, trend {trend:+.3%}")
        status = status if ok else EXIT_VIOLATION
    for key in keys:
        mags = [float(np.max(np.abs(r.weak[key]))) for r in levels]
        ratios = [a / b if b > 0 else np.inf for a, b in zip(mags[:-1], mags[1:])]
        ok = all(q >= 1.5 for q in ratios)
        print(f"{'PASS' if ok else 'FAIL'} weak residual {key}: ratios {', '.join(f'{q:.3f}' for q in ratios)}")
        status = status if ok else EXIT_VIOLATION
    if cfg.figures:
        from .plotting import render_convergence_figure

        render_convergence_figure(levels, out)
    return status


def cmd_ode_compare(args, cfg):
    res = ode_compare(cfg)
    print(f"max relative deviation {res.max_rel_error:.6e}")
    print(f"final scheme {res.final_scheme.tolist()} reference {res.final_reference.tolist()}")
    if args.max_rel_error is not None and res.max_rel_error > args.max_rel_error:
        print(f"FAIL deviation above {args.max_rel_error:g}")
        return EXIT_VIOLATION
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "check-assumptions": cmd_check_assumptions,
    "verify-entropy": cmd_verify_entropy,
    "verify-duality": cmd_verify_duality,
    "convergence-study": cmd_convergence_study,
    "ode-compare": cmd_ode_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except AssumptionError as exc:
        print(f"assumption failure:\n{exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, TimeStepTooLarge, StepFailure, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
