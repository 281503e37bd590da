"""Command line front end.

Every subcommand reads one TOML config, writes deterministic artifacts
(JSON/CSV, and SVG for plots) into --out, and puts the timestamp and call
details into a separate metadata.json so the scientific outputs stay
byte-reproducible.  Exit codes: 0 success, 2 invalid input or unresolvable
request, 3 solver or verification failure.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__
from .cell import CellCache, CellProblem, CellSolverError, solve_cell
from .config import ConfigError, RunConfig, load_config
from .fem import (FEMError, HomogenizedLaw, UnderResolvedError, lp_norm,
                  solve_fine, solve_macro)
from .fields import FieldError
from .flux import FluxError, audit_assumptions
from .harness import (HarnessError, convergence_study, ergodic_study,
                      format_float, write_csv, write_json)
from .projection import ProjectionError, check_criterion
from .symbolic import ExpressionError


def _say(*parts):
    print(" ".join(format_float(p) if isinstance(p, float) else str(p) for p in parts))


def _prepare_out(args) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    return out


def _write_metadata(out: str, args) -> None:
    meta = {
        "command": args.command,
        "argv": sys.argv[1:],
        "timestamp_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "package_version": __version__,
    }
    write_json(os.path.join(out, "metadata.json"), meta)


def _load(args) -> RunConfig:
    return load_config(args.config)


# ---------------------------------------------------------------------------
# subcommands


def cmd_check_matrix(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)
    radius = args.radius if args.radius else cfg.criterion_radius
    report = check_criterion(cfg.pm, ball_radius=radius)
    write_json(os.path.join(out, "report.json"),
               {"config": cfg.raw.get("matrix", {}), "criterion": report.to_json()})
    _write_metadata(out, args)
    _say("certificate:", report.certificate)
    _say("min |R^T k| over scanned ball (radius %d):" % report.ball_radius,
         float(report.min_projected_norm), "at k =", list(report.worst_k))
    if report.certificate == "exact-fail":
        _say("witness: R^T k = 0 exactly for k =", list(report.witness))
        return 3
    return 0


def cmd_audit_model(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)
    if cfg.model is None:
        raise ConfigError("audit-model needs a [model] section")
    report = audit_assumptions(cfg.model, sample_count=args.samples, rng_seed=args.seed)
    write_json(os.path.join(out, "report.json"),
               {"config": cfg.raw.get("model", {}), "audit": report.to_json()})
    _write_metadata(out, args)
    _say("audit:", "pass" if report.passed else "FAIL")
    _say("min coercivity quotient:", report.min_coercivity)
    _say("min monotonicity quotient:", report.min_monotonicity)
    _say("max growth quotient:", report.max_growth)
    if not report.passed:
        for name, value, witness in report.failures():
            _say("failed %s:" % name, float(value), "witness:", witness or "-")
        return 3
    return 0


def cmd_ergodic(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)
    if cfg.model is None:
        raise ConfigError("ergodic needs a [model] section (its coefficient is averaged)")
    if not cfg.ergodic_T:
        raise ConfigError("ergodic needs [ergodic] T = [...]")
    field = cfg.model.coefficient
    if field.components:
        raise ConfigError("ergodic averaging works on scalar coefficients")
    result = ergodic_study(field, cfg.pm, cfg.ergodic_T)
    write_json(os.path.join(out, "report.json"), {"ergodic": result})
    write_csv(os.path.join(out, "ergodic.csv"),
              ["T", "average", "abs_error", "mode_bound"],
              [[r["T"], r["average"], r["abs_error"], r["mode_bound"]] for r in result["rows"]])
    _write_metadata(out, args)
    _say("torus mean:", float(result["torus_mean"]))
    for r in result["rows"]:
        _say("T =", float(r["T"]), "average =", float(r["average"]),
             "error =", float(r["abs_error"]), "bound =", float(r["mode_bound"]))
    return 0


def cmd_cell(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)
    if cfg.model is None or cfg.cell is None:
        raise ConfigError("cell needs [model] and [cell] sections")
    problem = CellProblem(
        pm=cfg.pm, model=cfg.model, xi=cfg.cell.xi, bandlimit=cfg.cell.bandlimit,
        residual_tol=cfg.cell.residual_tol, max_iterations=cfg.cell.max_iterations,
        grid_points=cfg.cell.grid_points,
    )
    solution = solve_cell(problem)
    payload = {"config": cfg.raw, "cell": solution.to_json()}
    if cfg.model.family.startswith("linear"):
        cache = CellCache(cfg.pm, cfg.model, bandlimit=cfg.cell.bandlimit,
                          residual_tol=cfg.cell.residual_tol,
                          grid_points=cfg.cell.grid_points)
        B = cache.effective_matrix()
        payload["effective_matrix"] = [[float(v) for v in row] for row in B]
        write_csv(os.path.join(out, "effective_matrix.csv"),
                  ["row"] + ["col_%d" % j for j in range(cfg.pm.n)],
                  [[i] + [float(v) for v in B[i]] for i in range(cfg.pm.n)])
    write_json(os.path.join(out, "report.json"), payload)
    _write_metadata(out, args)
    _say("hom_flux:", *[float(v) for v in solution.hom_flux])
    _say("residual dual norm:", solution.residual_norm,
         "max mode divergence:", solution.max_mode_divergence)
    _say("iterations:", solution.iterations)
    return 0


def _solution_csv(path, sol) -> None:
    if sol.problem.n == 1:
        xs = np.linspace(0.0, sol.problem.lengths[0], sol.problem.elements[0] + 1)
        write_csv(path, ["x", "u"], [[float(x), float(v)] for x, v in zip(xs, sol.values)])
    else:
        g = sol.grid()
        ax0 = np.linspace(0.0, sol.problem.lengths[0], sol.problem.elements[0] + 1)
        ax1 = np.linspace(0.0, sol.problem.lengths[1], sol.problem.elements[1] + 1)
        rows = [[float(ax0[i]), float(ax1[j]), float(g[i, j])]
                for i in range(len(ax0)) for j in range(len(ax1))]
        write_csv(path, ["x1", "x2", "u"], rows)


def cmd_homogenize(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)
    if cfg.model is None or cfg.cell is None or cfg.macro is None:
        raise ConfigError("homogenize needs [model], [cell] and [macro] sections")
    cache = CellCache(cfg.pm, cfg.model, bandlimit=cfg.cell.bandlimit,
                      residual_tol=cfg.cell.residual_tol,
                      max_iterations=cfg.cell.max_iterations,
                      grid_points=cfg.cell.grid_points)
    sol = solve_macro(cfg.macro, HomogenizedLaw(cache))
    payload = {
        "config": cfg.raw,
        "solution": {
            "label": sol.label,
            "newton_iterations": sol.newton_iterations,
            "residual_dual": sol.residual_dual,
            "l2_norm": lp_norm(sol, 2.0, "value"),
            "cell_solves": cache.solves,
        },
    }
    write_json(os.path.join(out, "report.json"), payload)
    _solution_csv(os.path.join(out, "solution.csv"), sol)
    _write_metadata(out, args)
    _say("newton iterations:", sol.newton_iterations, "dual residual:", sol.residual_dual)
    _say("|u|_L2:", payload["solution"]["l2_norm"])
    return 0


def cmd_fine(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)
    if cfg.model is None or cfg.macro is None:
        raise ConfigError("fine needs [model] and [macro] sections")
    epp = cfg.sweep.elements_per_period if cfg.sweep else 20.0
    sol = solve_fine(cfg.macro, cfg.pm, cfg.model, args.eta, elements_per_period=epp)
    payload = {
        "config": cfg.raw,
        "eta": args.eta,
        "solution": {
            "label": sol.label,
            "elements": list(sol.problem.elements),
            "newton_iterations": sol.newton_iterations,
            "residual_dual": sol.residual_dual,
            "l2_norm": lp_norm(sol, 2.0, "value"),
        },
    }
    write_json(os.path.join(out, "report.json"), payload)
    _solution_csv(os.path.join(out, "solution.csv"), sol)
    _write_metadata(out, args)
    _say("elements:", "x".join(str(e) for e in sol.problem.elements),
         "newton iterations:", sol.newton_iterations)
    _say("|u_eta|_L2:", payload["solution"]["l2_norm"])
    return 0


def cmd_converge(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args)

    def progress(level):
        _say("eta =", level.eta, "u_error =", level.u_error,
             "corrector_error =", level.corrector_error)

    report = convergence_study(cfg, progress=progress)
    write_json(os.path.join(out, "report.json"),
               {"config": cfg.raw, "convergence": report.to_json()})
    csv_path = os.path.join(out, "errors.csv")
    write_csv(csv_path, report.csv_header(), report.csv_rows())
    _plot_csv(csv_path, os.path.join(out, "errors.svg"), loglog=True)
    _write_metadata(out, args)
    _say("u rate:", report.u_rate, "+/-", report.u_rate_half_width)
    _say("corrector rate:", report.corrector_rate, "+/-", report.corrector_rate_half_width)
    _say("final/initial u error:", report.u_errors[-1] / report.u_errors[0])
    return 0


def _plot_csv(csv_path: str, out_svg: str, loglog: bool | None = None) -> None:
    import csv as _csv

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        raw = list(reader)
    cols: dict = {name: [] for name in header}
    for row in raw:
        for name, cell in zip(header, row):
            cols[name].append(cell)

    def numeric(name):
        try:
            return np.array([float(v) for v in cols[name]])
        except ValueError:
            return None

    x = numeric(header[0])
    if x is None:
        raise HarnessError("first CSV column must be numeric to plot")
    series = [(name, numeric(name)) for name in header[1:]]
    series = [(n, v) for n, v in series if v is not None]
    if loglog is None:
        loglog = bool(np.all(x > 0) and all(np.all(v > 0) for _, v in series))

    matplotlib.rcParams["svg.hashsalt"] = "qphom"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, vals in series:
        if loglog and np.all(vals > 0):
            ax.loglog(x, vals, marker="o", label=name)
        else:
            ax.plot(x, vals, marker="o", label=name)
    ax.set_xlabel(header[0])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_plot(args) -> int:
    out_svg = args.out
    parent = os.path.dirname(os.path.abspath(out_svg))
    os.makedirs(parent, exist_ok=True)
    _plot_csv(args.csv, out_svg, loglog=args.loglog if args.loglog is not None else None)
    _say("wrote", out_svg)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qphom",
        description="Quasiperiodic homogenization workbench: criterion checks, "
                    "corrector solves, macro solves and two-scale verification sweeps.",
    )
    parser.add_argument("--version", action="version", version="qphom %s" % __version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("check-matrix", help="verify the lattice criterion for R")
    common(p)
    p.add_argument("--radius", type=int, default=0, help="override the scan radius")
    p.set_defaults(func=cmd_check_matrix)

    p = sub.add_parser("audit-model", help="sample-check the structure assumptions")
    common(p)
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_audit_model)

    p = sub.add_parser("ergodic", help="box averages of the coefficient along the slice")
    common(p)
    p.set_defaults(func=cmd_ergodic)

    p = sub.add_parser("cell", help="solve one corrector problem")
    common(p)
    p.set_defaults(func=cmd_cell)

    p = sub.add_parser("homogenize", help="solve the macro problem with the effective flux")
    common(p)
    p.set_defaults(func=cmd_homogenize)

    p = sub.add_parser("fine", help="resolve the oscillatory problem at one eta")
    common(p)
    p.add_argument("--eta", type=float, required=True)
    p.set_defaults(func=cmd_fine)

    p = sub.add_parser("converge", help="run the full two-scale verification sweep")
    common(p)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("plot", help="render a CSV table to SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--loglog", action="store_true", default=None)
    p.set_defaults(func=cmd_plot)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 on --help; pass both through
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UnderResolvedError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (CellSolverError, FEMError) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 3
    except (ConfigError, ProjectionError, FieldError, FluxError, ExpressionError,
            HarnessError, ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
