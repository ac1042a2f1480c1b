"""Command-line entry point.

    phaseplug lumped    --config run.ini --out DIR
    phaseplug sweep     --config run.ini --out DIR [--losses on|off] [--design CSV]
    phaseplug optimize  --config run.ini --out DIR [--dump-grad]
    phaseplug gradcheck --config run.ini --out DIR [--losses on|off] [--components N]

Exit codes: 0 success, 1 input error, 2 solver failure, 3 line-search stall.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import DEFAULT_CONFIG, Config, ConfigError, parse_config, parse_config_text
from .helmholtz import SolverError, geometric_frequencies
from .levelset import export_polyline_csv
from .lumped import LumpedParams, response_table
from .optimizer import PhasePlugProblem, Status, optimize

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_STALL = 0, 1, 2, 3

log = logging.getLogger("phaseplug")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phaseplug", description="Level-set CutFEM phase plug design.")
    sub = parser.add_subparsers(dest="command", metavar="{lumped,sweep,optimize,gradcheck}")
    sub.required = True
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration (defaults built in)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--losses", choices=("on", "off"), help="override the physics loss switch")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("lumped", parents=[common], help="lumped-model response table")
    p = sub.add_parser("sweep", parents=[common], help="frequency sweep of a design")
    p.add_argument("--design", type=Path, help="design CSV (vertex_id,phi_hat); baseline if omitted")
    p = sub.add_parser("optimize", parents=[common], help="BFGS shape optimization")
    p.add_argument("--dump-grad", action="store_true", help="write the gradient of every evaluation")
    p = sub.add_parser("gradcheck", parents=[common], help="adjoint vs finite differences")
    p.add_argument("--design", type=Path)
    p.add_argument("--components", type=int, default=10)
    p.add_argument("--frequency-index", type=int)
    return parser


def load_config(args) -> Config:
    cfg = parse_config(args.config) if args.config else parse_config_text(DEFAULT_CONFIG)
    if args.losses is not None:
        cfg.physics = dataclasses.replace(cfg.physics, losses=args.losses == "on")
    return cfg


def make_problem(cfg: Config, solver: str | None = None) -> PhasePlugProblem:
    return PhasePlugProblem(cfg.geometry, cfg.physics, cfg.spec, h=cfg.h, eps_s=cfg.eps_s,
                            solver=solver or cfg.solver)


def eval_frequencies(cfg: Config) -> np.ndarray:
    return geometric_frequencies(cfg.spec.f_min, cfg.spec.f_max, cfg.eval_count)


def _design(problem: PhasePlugProblem, path: Path | None) -> np.ndarray:
    if path is None:
        return problem.design0
    ids = problem.levelset.free
    return io.read_design(path, ids)


def cmd_lumped(cfg: Config, args) -> int:
    g = cfg.geometry
    params = LumpedParams(d=g.chamber_depth, kappa=g.compression_ratio, rho0=cfg.physics.rho0,
                          c0=cfg.physics.c0, a_d=cfg.physics.a_d, L=g.diaphragm_to_outlet)
    table = response_table(params, eval_frequencies(cfg))
    path = io.write_lumped(args.out / "lumped.csv", table)
    print(path)
    return EXIT_OK


def cmd_sweep(cfg: Config, args) -> int:
    problem = make_problem(cfg, solver="direct")
    design = _design(problem, args.design)
    resp = problem.response(design, eval_frequencies(cfg), cfg.physics.losses)
    tag = "lossy" if cfg.physics.losses else "lossless"
    path = io.write_response(args.out / f"sweep_{tag}.csv", resp)
    io.response_svg(path.with_suffix(".svg"), resp, f"|p_out| ({tag})")
    print(path)
    return EXIT_OK


def cmd_optimize(cfg: Config, args) -> int:
    problem = make_problem(cfg)
    out = args.out
    poly_dir = out / "polylines"
    poly_dir.mkdir(exist_ok=True)
    grad_dir = out / "gradients"
    if args.dump_grad:
        grad_dir.mkdir(exist_ok=True)
    ids = problem.levelset.free

    def on_eval(n, x, ev):
        if args.dump_grad:
            io.write_gradient(grad_dir / f"eval_{n:04d}.csv", ids, ev.grad)

    def callback(rec, x):
        _, cut = problem.geometry_for(x)
        path = poly_dir / f"iter_{rec.iteration:04d}.csv"
        export_polyline_csv(cut, path)
        rec.extra["polyline"] = path.name
        log.info("iter %d  J %.6e  |g| %.3e  step %.3g", rec.iteration, rec.J,
                 rec.grad_inf_norm, rec.step)

    res, first = optimize(problem, cfg.max_iters, cfg.grad_tol, cfg.h0_frac, cfg.max_step_frac,
                          callback=callback, on_eval=on_eval)
    io.write_history(out / "history.csv", res.history)
    io.write_design(out / "design.csv", ids, res.x)
    final = problem.evaluate(res.x, gradient=False)
    path = io.write_response(out / "response_final.csv", final.response)
    io.response_svg(path.with_suffix(".svg"), final.response, "|p_out| optimized")
    resp = problem.response(res.x, eval_frequencies(cfg))
    io.write_response(out / "response_eval.csv", resp)
    io.response_svg(out / "response_eval.svg", resp, "|p_out| optimized (evaluation grid)")
    print(f"status {res.status.value}  iterations {res.n_iters}  J0 {first.J:.6e}  "
          f"J {res.J:.6e}  ratio {res.J / first.J:.4f}")
    return EXIT_STALL if res.status is Status.LINE_SEARCH_STALL else EXIT_OK


def cmd_gradcheck(cfg: Config, args) -> int:
    from .gradcheck import gradient_check
    problem = make_problem(cfg, solver="direct")
    design = _design(problem, args.design)
    if args.components < 1:
        raise ValueError("--components must be at least 1")
    idx = args.frequency_index
    if idx is not None and not 0 <= idx < len(problem.frequencies):
        raise ValueError(f"--frequency-index must lie in [0, {len(problem.frequencies) - 1}]")
    chk = gradient_check(problem, design, idx, args.components, cfg.seed, cfg.physics.losses,
                         objective=cfg.spec.kind)
    rows = ((int(c), a.real, f.real, e) for c, a, f, e in chk.rows())
    io.write_csv(args.out / "gradcheck.csv", io.GRADCHECK_HEADER, rows)
    print(f"max rel_err {chk.max_rel_err:.3e}")
    return EXIT_OK


COMMANDS = {"lumped": cmd_lumped, "sweep": cmd_sweep, "optimize": cmd_optimize,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
