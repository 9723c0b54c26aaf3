"""Batch command-line front end."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .adjoint import decouple, gradient_check, stationarity_residual
from .affine_term import solve_eta, synthesize_law
from .errors import (
    DomainSuspect,
    HypothesisViolated,
    NumericalFailure,
    RestrictionViolated,
    ShapeMismatch,
    SynthesisInvalid,
)
from .model import DEFAULT_TOL_PSD, DEFAULT_TOL_RANGE, load_problem, validate_problem
from .oracle import discrete_stochastic_lqr, dp_solution
from .problems import smooth_direction
from .recursive_cost import estimate_cost, phi_weights
from .riccati import solve_riccati
from .simulate import (
    ConstantControl,
    FeedbackControl,
    PiecewiseControl,
    ZeroControl,
    sample_brownian,
    simulate,
)
from .transform import cross_check

EXIT_OK = 0
EXIT_HYPOTHESIS = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- output helpers -----------------------------------------------------------


def fmt(x) -> str:
    return format(float(x), ".17g")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path | None, doc: dict) -> str:
    text = json.dumps(_clean(doc), indent=2, sort_keys=True)
    if path is not None:
        path.write_text(text + "\n")
    return text


def write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer, str)) else fmt(v) for v in row])


def _matrix_header(prefix: str, rows: int, cols: int) -> list[str]:
    return [f"{prefix}_{i + 1}_{j + 1}" for i in range(rows) for j in range(cols)]


def _vector_header(prefix: str, size: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(size)]


# --- pipeline pieces ----------------------------------------------------------


def _parse_vector(text: str | None, size: int, name: str):
    if text is None:
        return None
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"{name}: expected comma-separated numbers") from exc
    if vals.size != size:
        raise UsageError(f"{name}: expected {size} values, got {vals.size}")
    return vals


def _load(args):
    try:
        spec, x = load_problem(args.problem)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read problem file: {exc}") from exc
    if args.steps is not None:
        spec = spec.regrid(args.steps)
    problem = validate_problem(
        spec, tol_psd=args.tol_psd, tol_range=args.tol_range, allow_violations=args.allow_hypothesis_failures
    )
    override = _parse_vector(args.x, problem.n, "--x")
    if override is not None:
        x = override
    if x is None:
        x = np.ones(problem.n)
    return problem, np.asarray(x, dtype=float)


def _synthesize(problem, allow: bool):
    ric = solve_riccati(problem)
    eta = solve_eta(problem, ric)
    return ric, eta, synthesize_law(problem, ric, eta, allow_range_failures=allow)


def _control(args, problem):
    kind = args.control
    if kind == "zero":
        return ZeroControl()
    if kind == "constant":
        u0 = _parse_vector(args.u0, problem.m, "--u0")
        if u0 is None:
            raise UsageError("--control constant needs --u0")
        return ConstantControl(u0)
    if kind == "feedback":
        return FeedbackControl(_synthesize(problem, args.allow_hypothesis_failures)[2])
    if kind == "file":
        if not args.control_file:
            raise UsageError("--control file needs --control-file")
        path = Path(args.control_file)
        try:
            vals = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read control file: {exc}") from exc
        vals = np.asarray(vals, dtype=float).reshape(problem.grid.n_steps, -1) if vals.size == problem.grid.n_steps * problem.m else vals
        if vals.shape != (problem.grid.n_steps, problem.m):
            raise UsageError(f"control file must hold {problem.grid.n_steps} rows of {problem.m} values")
        return PiecewiseControl(vals)
    raise UsageError(f"unknown control {kind!r}")


def _out(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _path(out: Path | None, name: str) -> Path | None:
    return None if out is None else out / name


# --- commands -----------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        spec, _ = load_problem(args.problem)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read problem file: {exc}") from exc
    if args.steps is not None:
        spec = spec.regrid(args.steps)
    problem = validate_problem(spec, tol_psd=args.tol_psd, tol_range=args.tol_range, allow_violations=True)
    report = problem.report
    doc = report.summary()
    print(write_json(_path(_out(args), "validation.json"), doc))
    if not report.ok:
        hyp, node, msg = report.failures()[0]
        where = "" if node is None else f" at node {node}"
        print(f"{hyp} violated{where}: {msg}", file=sys.stderr)
        return EXIT_OK if args.allow_hypothesis_failures else EXIT_HYPOTHESIS
    return EXIT_OK


def cmd_solve(args) -> int:
    problem, _ = _load(args)
    ric, eta, law = _synthesize(problem, args.allow_hypothesis_failures)
    out = _out(args) or Path(".")
    s = problem.grid.nodes
    n, m = problem.n, problem.m
    write_csv(out / "P.csv", ["s", *_matrix_header("P", n, n)], ([s[k], *ric.P[k].ravel()] for k in range(s.size)))
    write_csv(out / "eta.csv", ["s", *_vector_header("eta", n)], ([s[k], *eta.eta[k]] for k in range(s.size)))
    write_csv(out / "gains.csv", ["s", *_matrix_header("Psi", m, n), *_vector_header("v", m)],
              ([s[k], *law.Psi[k].ravel(), *law.v[k]] for k in range(s.size)))
    doc = {"P0": ric.P[0], "eta0": eta.eta[0], "Psi0": law.Psi[0], "v0": law.v[0]}
    print(write_json(out / "solve.json", doc))
    return EXIT_OK


def cmd_simulate(args) -> int:
    problem, x = _load(args)
    control = _control(args, problem)
    noise = sample_brownian(problem.grid, args.paths, args.seed)
    traj = simulate(problem, x, control, noise)
    out = _out(args)
    if out is not None:
        keep = min(args.traj_paths, traj.n_paths)
        s = problem.grid.nodes
        N, n, m = problem.grid.n_steps, problem.n, problem.m

        def rows():
            for p in range(keep):
                for k in range(N + 1):
                    u = traj.U[p, k] if k < N else [""] * m
                    yield [p, s[k], *traj.X[p, k], *u]

        write_csv(out / "traj.csv", ["path", "s", *_vector_header("X", n), *_vector_header("U", m)], rows())
    XT = traj.X[:, -1]
    doc = {
        "n_paths": traj.n_paths,
        "seed": args.seed,
        "mean_X_T": XT.mean(axis=0),
        "std_error_X_T": XT.std(axis=0, ddof=1) / np.sqrt(traj.n_paths) if traj.n_paths > 1 else np.zeros(problem.n),
    }
    print(write_json(_path(out, "simulate.json"), doc))
    return EXIT_OK


def cmd_cost(args) -> int:
    problem, x = _load(args)
    control = _control(args, problem)
    noise = sample_brownian(problem.grid, args.paths, args.seed)
    est = estimate_cost(problem, simulate(problem, x, control, noise), phi_weights(problem, noise))
    print(write_json(_path(_out(args), "cost.json"), est.to_dict()))
    return EXIT_OK


def cmd_xcheck(args) -> int:
    problem, x = _load(args)
    control = _control(args, problem)
    noise = sample_brownian(problem.grid, args.paths, args.seed)
    cc = cross_check(problem, simulate(problem, x, control, noise), noise)
    print(write_json(_path(_out(args), "xcheck.json"), cc.to_dict()))
    return EXIT_OK if cc.passed else EXIT_ACCEPTANCE


def cmd_grad_check(args) -> int:
    problem, x = _load(args)
    control = _control(args, problem)
    noise = sample_brownian(problem.grid, args.paths, args.seed)
    direction = PiecewiseControl(smooth_direction(np.random.default_rng(args.seed), problem.grid, problem.m))
    rep = gradient_check(problem, x, control, direction, noise, args.eps)
    deterministic = not (np.any(problem.C) or np.any(problem.D) or np.any(problem.sigma) or np.any(problem.F))
    tol = 1e-6 if deterministic else 1e-2
    doc = {**rep.to_dict(), "eps": args.eps, "tolerance": tol, "pass": rep.rel_error <= tol}
    print(write_json(_path(_out(args), "gradient.json"), doc))
    return EXIT_OK if doc["pass"] else EXIT_ACCEPTANCE


def cmd_residual(args) -> int:
    problem, x = _load(args)
    ric, eta, law = _synthesize(problem, args.allow_hypothesis_failures)
    noise = sample_brownian(problem.grid, args.paths, args.seed)
    traj = simulate(problem, x, FeedbackControl(law), noise)
    rep = stationarity_residual(problem, traj, decouple(problem, ric, eta, traj))
    out = _out(args)
    if out is not None:
        per_path = np.linalg.norm(rep.residuals, axis=2).max(axis=0)
        write_csv(out / "residual.csv", ["node", "L2", "max"], ([k, rep.l2[k], per_path[k]] for k in range(per_path.size)))
    print(write_json(_path(out, "residual.json"), {"max_residual": rep.max, "n_paths": traj.n_paths}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    problem, x = _load(args)
    deterministic = not (np.any(problem.C) or np.any(problem.D) or np.any(problem.sigma) or np.any(problem.F))
    sol = dp_solution(problem) if deterministic else discrete_stochastic_lqr(problem)
    ric, eta, _ = _synthesize(problem, args.allow_hypothesis_failures)
    pipe_quad = float(x @ ric.P[0] @ x)
    orc_quad = float(x @ sol.K[0] @ x)
    doc = {
        "oracle": "deterministic dynamic programming" if deterministic else "discrete stochastic Riccati",
        "oracle_value": sol.value(x),
        "oracle_quadratic": orc_quad,
        "pipeline_quadratic": pipe_quad,
        "gap": abs(orc_quad - pipe_quad),
        "oracle_linear": float(2.0 * sol.k[0] @ x),
        "pipeline_linear": float(2.0 * eta.eta[0] @ x),
    }
    print(write_json(_path(_out(args), "oracle.json"), doc))
    return EXIT_OK


def cmd_verify(args) -> int:
    problem, x = _load(args)
    results = []
    if not args.problem_only:
        results += [c() for c in acceptance.builtin_criteria(seed=args.seed)]
    results += acceptance.problem_checks(problem, x, args.paths, args.seed, args.eps)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{str(r.number):>3}  {r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}")
    doc = {"seed": args.seed, "paths": args.paths, "results": [r.to_dict() for r in results]}
    write_json(_path(_out(args), "verify.json"), doc)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


COMMANDS = {
    "validate": (cmd_validate, "check the standing hypotheses node by node"),
    "solve": (cmd_solve, "solve the Riccati and affine equations; write P.csv, eta.csv, gains.csv"),
    "simulate": (cmd_simulate, "simulate state paths under a control"),
    "cost": (cmd_cost, "Monte Carlo estimate of the recursive cost"),
    "xcheck": (cmd_xcheck, "compare J with the transformed classical cost"),
    "grad-check": (cmd_grad_check, "adjoint derivative against a central difference"),
    "residual": (cmd_residual, "stationarity residual along the synthesized optimum"),
    "oracle": (cmd_oracle, "compare with an exact discrete-time dynamic programming referee"),
    "verify": (cmd_verify, "run the acceptance suite and checks on the given problem"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recursive-lq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("problem", help="problem JSON file")
        p.add_argument("--paths", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, default=None, help="regrid to this many steps")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--eps", type=float, default=1e-3, help="finite-difference step")
        p.add_argument("--x", default=None, help="initial state, comma-separated")
        p.add_argument("--control", choices=["zero", "constant", "feedback", "file"], default="feedback")
        p.add_argument("--u0", default=None, help="constant control, comma-separated")
        p.add_argument("--control-file", default=None, help="CSV or .npy with one row per interval")
        p.add_argument("--traj-paths", type=int, default=10, help="paths written to traj.csv")
        p.add_argument("--tol-psd", type=float, default=DEFAULT_TOL_PSD)
        p.add_argument("--tol-range", type=float, default=DEFAULT_TOL_RANGE)
        p.add_argument("--allow-hypothesis-failures", action="store_true")
        p.add_argument("--problem-only", action="store_true", help="verify: skip the built-in criteria")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.paths < 1:
        parser.error("--paths must be >= 1")
    if args.steps is not None and args.steps < 1:
        parser.error("--steps must be >= 1")
    if args.seed < 0:
        parser.error("--seed must be >= 0")
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"recursive-lq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HypothesisViolated, RestrictionViolated, SynthesisInvalid, ShapeMismatch) as exc:
        print(f"recursive-lq: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (NumericalFailure, DomainSuspect) as exc:
        print(f"recursive-lq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run())
