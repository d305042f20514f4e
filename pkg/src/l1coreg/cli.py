"""Command-line front end: solve, sweep, certify and oracle workflows.

Every run prints a canonical ``key = value`` configuration block that can be
fed back through ``--config`` to replay it bit-exactly.  Exit codes are a
stable contract: 0 success, 1 usage error, 2 solver non-convergence,
3 certificate invalid-but-computed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .basis import WaveletBasis
from .certificates import (
    check_restricted_injectivity,
    find_certificate_relaxed,
    find_certificate_strict,
    rate_constants_relaxed,
    rate_constants_strict,
    report_lines,
)
from .experiments import (
    SweepConfig,
    converse_consistency_flag,
    default_operators,
    determinism_hash,
    emit_csv,
    emit_svg,
    make_phantom,
    run_sweep,
    sweep_metadata,
    add_noise,
)
from .operators import operator_norm
from .regularizers import WeightedL1
from .solvers import (
    RelaxedProblem,
    SolverConfig,
    StrictProblem,
    reference_solve,
    solve_relaxed,
    solve_strict,
)

__all__ = ["main", "entry_point", "canonical_config", "parse_config_text"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
EXIT_CERT_INVALID = 3

#: alpha used for a noiseless (delta = 0) solve when none is given.
NOISELESS_ALPHA = 1e-8


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_common(p):
    p.add_argument("--config", help="key = value file with defaults (flags win)")
    p.add_argument("--n", type=int, default=256, help="signal dimension (power of 2)")
    p.add_argument("--m", type=int, default=128, help="number of measurements")
    p.add_argument("--sparsity", type=int, default=8, help="phantom support size")
    p.add_argument("--seed", type=int, default=7, help="base seed for all streams")
    p.add_argument("--C", dest="big_c", type=float, default=1.0,
                   help="parameter-choice constant in alpha = C*delta")
    p.add_argument("--kappa", type=float, default=1.0,
                   help="uniform l1 weight level")
    p.add_argument("--forward", choices=("integration", "identity"),
                   default="integration", help="forward operator W")
    p.add_argument("--sensing", choices=("bernoulli", "identity"),
                   default="bernoulli", help="sensing operator A")


def _add_solver(p):
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--gamma", type=float, default=1.0,
                   help="Douglas-Rachford step size")
    p.add_argument("--lambda-relax", type=float, default=1.0,
                   help="Douglas-Rachford relaxation in (0, 2)")
    p.add_argument("--rho", type=float, default=1.0, help="ADMM penalty")
    p.add_argument("--solver-seed", type=int, default=None,
                   help="random-initialization seed (default: zero start)")


def build_parser():
    parser = _Parser(prog="l1coreg", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_solve = sub.add_parser("solve", help="one regularized solve on a phantom")
    _add_common(p_solve)
    _add_solver(p_solve)
    p_solve.add_argument("--model", choices=("relaxed", "strict"), required=True)
    p_solve.add_argument("--delta", type=float, default=1e-5, help="noise level")
    p_solve.add_argument("--alpha", type=float, default=None,
                         help="override alpha (default C*delta)")
    p_solve.add_argument("--out", default="l1coreg_out", help="output directory")

    p_oracle = sub.add_parser("oracle", help="reference-accuracy solve (small n)")
    _add_common(p_oracle)
    _add_solver(p_oracle)
    p_oracle.add_argument("--model", choices=("relaxed", "strict"), required=True)
    p_oracle.add_argument("--delta", type=float, default=1e-5)
    p_oracle.add_argument("--alpha", type=float, default=None)
    p_oracle.add_argument("--out", default="l1coreg_out")

    p_sweep = sub.add_parser("sweep", help="noise-level sweep with rate fit")
    _add_common(p_sweep)
    _add_solver(p_sweep)
    p_sweep.add_argument("--model", choices=("relaxed", "strict"), required=True)
    p_sweep.add_argument("--deltas", default=None,
                         help="comma-separated noise levels, descending")
    p_sweep.add_argument("--delta-max", type=float, default=1e-2)
    p_sweep.add_argument("--delta-min", type=float, default=1e-5)
    p_sweep.add_argument("--delta-count", type=int, default=7)
    p_sweep.add_argument("--trials", type=int, default=3)
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel records (ordering unaffected)")
    p_sweep.add_argument("--out", default="sweep.csv", help="CSV output path")
    p_sweep.add_argument("--svg", default=None,
                         help="SVG output path (default: CSV path with .svg)")
    p_sweep.add_argument("--no-certify", action="store_true",
                         help="skip the certificate search (no bound columns)")

    p_cert = sub.add_parser("certify", help="source-condition certificate search")
    _add_common(p_cert)
    p_cert.add_argument("--model", choices=("relaxed", "strict"), default="relaxed")
    return parser


def parse_config_text(text):
    """Parse a ``key = value`` block into a flat string dict."""
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line without '=': {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def canonical_config(args, keys):
    """Canonical ``key = value`` lines (sorted) for the given argument names."""
    lines = []
    for key in sorted(keys):
        value = getattr(args, key)
        if value is None:
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return lines


_COMMON_KEYS = ("n", "m", "sparsity", "seed", "big_c", "kappa", "forward", "sensing")
_SOLVER_KEYS = ("max_iters", "tol", "gamma", "lambda_relax", "rho", "solver_seed")


def _config_keys(args):
    keys = list(_COMMON_KEYS)
    if hasattr(args, "max_iters"):
        keys += list(_SOLVER_KEYS)
    for extra in ("model", "delta", "alpha", "deltas", "delta_max", "delta_min",
                  "delta_count", "trials", "jobs"):
        if hasattr(args, extra):
            keys.append(extra)
    return keys


_FLAG_ALIASES = {"big_c": "--C"}


def _inject_config(argv):
    """Expand ``--config FILE`` into leading flags so explicit flags win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv  # parser will report the missing value
    path = argv[idx + 1]
    with open(path, "r", encoding="ascii") as handle:
        values = parse_config_text(handle.read())
    injected = []
    for key, value in sorted(values.items()):
        if key in ("command", "config"):
            continue
        flag = _FLAG_ALIASES.get(key, f"--{key.replace('_', '-')}")
        injected.extend([flag, value])
    return [argv[0]] + injected + argv[1:]


def _solver_config(args):
    return SolverConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        gamma=args.gamma,
        lambda_relax=args.lambda_relax,
        rho=args.rho,
        seed=args.solver_seed,
    )


def _build_instance(args):
    basis = WaveletBasis(args.n)
    l1 = WeightedL1(basis, np.full(args.n, args.kappa))
    cfg = SweepConfig(
        n=args.n,
        m=args.m,
        sparsity=args.sparsity,
        deltas=(1.0,),
        big_c=args.big_c,
        model=getattr(args, "model", "relaxed") or "relaxed",
        trials=1,
        seed=args.seed,
    )
    w, a = default_operators(cfg, forward=args.forward, sensing=args.sensing)
    phantom = make_phantom(args.n, args.sparsity, cfg.phantom_seed(), basis, w)
    return basis, l1, w, a, phantom, cfg


def _write_vector(path, vector, header_lines):
    with open(path, "w", encoding="ascii") as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        for value in np.asarray(vector, dtype=float):
            handle.write(f"{float(value)!r}\n")


def _print_block(lines):
    for line in lines:
        print(line)


def _cmd_solve(args, use_reference):
    basis, l1, w, a, phantom, _ = _build_instance(args)
    y_star = a.apply(phantom.h_star)
    y_delta = add_noise(y_star, args.delta, args.seed * 1_000_000)
    if args.alpha is not None:
        alpha = args.alpha
    elif args.delta > 0:
        alpha = args.big_c * args.delta
    else:
        alpha = NOISELESS_ALPHA
    cfg = _solver_config(args)
    if args.model == "relaxed":
        problem = RelaxedProblem(w, a, y_delta, alpha, l1)
        result = reference_solve(problem, cfg) if use_reference else solve_relaxed(
            problem, cfg
        )
        h_out = result.h
    else:
        problem = StrictProblem(w, a, y_delta, alpha, l1)
        result = reference_solve(problem, cfg) if use_reference else solve_strict(
            problem, cfg
        )
        h_out = result.diagnostics["wx"]

    config_lines = canonical_config(args, _config_keys(args))
    summary = [
        f"version = {__version__}",
        f"alpha = {alpha!r}",
        f"objective = {result.objective!r}",
        f"iterations = {result.iterations}",
        f"fixed_point_residual = {result.fixed_point_residual!r}",
        f"converged = {str(result.converged).lower()}",
        f"err_x = {float(np.linalg.norm(result.x - phantom.x_star))!r}",
        f"err_h = {float(np.linalg.norm(h_out - phantom.h_star))!r}",
    ]
    os.makedirs(args.out, exist_ok=True)
    header = config_lines + summary
    _write_vector(os.path.join(args.out, "x.txt"), result.x, header)
    _write_vector(os.path.join(args.out, "h.txt"), result.h, header)
    _print_block(config_lines)
    _print_block(summary)
    print(f"walltime_s = {result.wall_time:.3f}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_sweep(args):
    if args.deltas:
        deltas = tuple(float(tok) for tok in args.deltas.split(","))
    else:
        deltas = tuple(
            np.logspace(
                np.log10(args.delta_max), np.log10(args.delta_min), args.delta_count
            )
        )
    basis, l1, w, a, phantom, _ = _build_instance(args)
    cfg = SweepConfig(
        n=args.n,
        m=args.m,
        sparsity=args.sparsity,
        deltas=deltas,
        big_c=args.big_c,
        model=args.model,
        trials=args.trials,
        seed=args.seed,
    )
    solver_cfg = _solver_config(args)

    constants = None
    cert_lines = []
    if not args.no_certify:
        if args.model == "relaxed":
            cert = find_certificate_relaxed(w, a, basis, l1, phantom.x_star)
        else:
            cert = find_certificate_strict(w, a, basis, l1, phantom.x_star)
        inj = None
        if cert.eta is not None:
            inj = check_restricted_injectivity(a, basis, cert.eta.omega)
        if cert.valid and inj is not None and inj.injective:
            a_norm = operator_norm(a)
            if args.model == "relaxed":
                constants = rate_constants_relaxed(cert, inj, args.big_c, a_norm)
            else:
                constants = rate_constants_strict(cert, inj, args.big_c, a_norm)
        cert_lines = report_lines(cert, inj, constants)

    result = run_sweep(
        cfg, phantom, w, a, l1=l1,
        constants=constants, solver_cfg=solver_cfg, jobs=args.jobs,
    )
    meta = sweep_metadata(cfg, w, a, l1, solver_cfg, args.forward,
                          sensing=args.sensing, kappa_scalar=args.kappa)
    meta["converged"] = str(result.all_converged).lower()
    for line in cert_lines:
        key, _, value = line.partition(" = ")
        meta[f"cert_{key}"] = value
    if not args.no_certify:
        flagged = converse_consistency_flag(constants is not None, result.fit.slope)
        meta["converse_flag"] = str(flagged).lower()
    meta["walltime_s"] = f"{result.wall_time:.3f}"
    text = emit_csv(result.records, result.fit, args.out, metadata=meta)
    svg_path = args.svg or os.path.splitext(args.out)[0] + ".svg"
    emit_svg(result.records, result.fit, svg_path)

    _print_block(canonical_config(args, _config_keys(args)))
    print(f"records = {len(result.records)}")
    print(f"fit_slope = {result.fit.slope!r}")
    print(f"fit_r_squared = {result.fit.r_squared!r}")
    print(f"converged = {str(result.all_converged).lower()}")
    print(f"csv = {args.out}")
    print(f"svg = {svg_path}")
    print(f"determinism_hash = {determinism_hash(text)}")
    return EXIT_OK if result.all_converged else EXIT_NOT_CONVERGED


def _cmd_certify(args):
    basis, l1, w, a, phantom, _ = _build_instance(args)
    if args.model == "relaxed":
        cert = find_certificate_relaxed(w, a, basis, l1, phantom.x_star)
    else:
        cert = find_certificate_strict(w, a, basis, l1, phantom.x_star)
    omega = cert.eta.omega if cert.eta is not None else cert.support
    inj = check_restricted_injectivity(a, basis, omega)
    constants = None
    if cert.valid and inj.injective:
        a_norm = operator_norm(a)
        if args.model == "relaxed":
            constants = rate_constants_relaxed(cert, inj, args.big_c, a_norm)
        else:
            constants = rate_constants_strict(cert, inj, args.big_c, a_norm)
    _print_block(canonical_config(args, _config_keys(args)))
    _print_block(report_lines(cert, inj, constants))
    valid = cert.valid and inj.injective
    return EXIT_OK if valid else EXIT_CERT_INVALID


def main(argv=None):
    """Run the CLI; returns the exit code instead of raising SystemExit."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _inject_config(argv)
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error: bad config file: {exc}\n")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "solve":
            return _cmd_solve(args, use_reference=False)
        if args.command == "oracle":
            return _cmd_solve(args, use_reference=True)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "certify":
            return _cmd_certify(args)
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    raise AssertionError(f"unhandled command {args.command!r}")


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
