"""Noise-level sweep harness: phantoms, exact-level noise, rate fits, CSV/SVG.

A sweep fixes a phantom and operators, then for each noise level ``delta``
(times ``trials`` repetitions) draws data with ``||y_delta - y*|| = delta``
exactly, solves the chosen model under the parameter choice
``alpha = C delta``, and records errors together with the theoretical bound
sides when rate constants are available.  Identical configurations and seeds
reproduce the emitted CSV bit for bit (wall-time metadata excluded), which
:func:`determinism_hash` makes checkable.

Derived seed streams (all Philox keys): the phantom uses
``seed*10**6 + 900001``, the sensing matrix ``seed*10**6 + 900002``, and the
noise for delta index ``i``, trial ``t`` uses ``seed*10**6 + i*100 + t``.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .operators import (
    BernoulliSensing,
    DenseMap,
    IntegrationOp,
    ProductMap,
    identity,
    to_descriptor,
)
from .regularizers import WeightedL1, bregman_quadratic
from .solvers import (
    RelaxedProblem,
    SolverConfig,
    StrictProblem,
    solve_relaxed,
    solve_strict,
)

__all__ = [
    "Phantom",
    "SweepConfig",
    "SweepRecord",
    "SweepResult",
    "RateFit",
    "PhantomError",
    "SweepError",
    "make_phantom",
    "add_noise",
    "fit_rate",
    "run_sweep",
    "emit_csv",
    "parse_csv",
    "emit_svg",
    "determinism_hash",
    "CSV_COLUMNS",
]

CSV_COLUMNS = (
    "delta",
    "alpha",
    "bregman_x",
    "err_h",
    "residual",
    "iterations",
    "bound_c_rhs",
    "bound_d_rhs",
    "pass_c",
    "pass_d",
)

#: Tolerances of the bound pass flags: err <= rhs*(1+REL) + ABS.
BOUND_PASS_REL = 1e-6
BOUND_PASS_ABS = 1e-10

_ERR_FLOOR = 1e-14

_PHANTOM_SEED_OFFSET = 900_001
_MATRIX_SEED_OFFSET = 900_002


class PhantomError(ValueError):
    """Phantom construction is not possible for the requested operator."""


class SweepError(RuntimeError):
    """A sweep record failed; the message identifies the offending record."""


@dataclass(frozen=True)
class Phantom:
    """Ground-truth pair with a sparse indirect signal.

    ``h_star`` has exactly ``sparsity`` nonzero wavelet coefficients and
    ``x_star`` satisfies ``W x_star = h_star`` to roundoff.
    """

    x_star: np.ndarray
    h_star: np.ndarray
    sparsity: int
    seed: int
    support: tuple


@dataclass(frozen=True)
class SweepConfig:
    """Dimensions, noise grid and parameter choice of a sweep."""

    n: int
    m: int
    sparsity: int
    deltas: tuple
    big_c: float = 1.0
    model: str = "relaxed"
    trials: int = 1
    seed: int = 7

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        if not deltas:
            raise ValueError("deltas must be nonempty")
        if any(d <= 0 for d in deltas):
            raise ValueError("all noise levels must be positive")
        if any(a <= b for a, b in zip(deltas, deltas[1:])):
            raise ValueError("deltas must be sorted in descending order")
        if len(deltas) > 9000:
            raise ValueError("at most 9000 noise levels per sweep")
        object.__setattr__(self, "deltas", deltas)
        if self.model not in ("relaxed", "strict"):
            raise ValueError(f"model must be 'relaxed' or 'strict', got {self.model!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.trials > 100:
            raise ValueError("at most 100 trials (keeps derived seeds disjoint)")
        if not self.big_c > 0:
            raise ValueError("the parameter-choice constant C must be positive")

    def phantom_seed(self):
        return self.seed * 1_000_000 + _PHANTOM_SEED_OFFSET

    def matrix_seed(self):
        return self.seed * 1_000_000 + _MATRIX_SEED_OFFSET

    def noise_seed(self, delta_index, trial):
        return self.seed * 1_000_000 + delta_index * 100 + trial


@dataclass(frozen=True)
class SweepRecord:
    """One sweep point; exactly the ten CSV columns."""

    delta: float
    alpha: float
    bregman_x: float
    err_h: float
    residual: float
    iterations: int
    bound_c_rhs: float
    bound_d_rhs: float
    pass_c: bool | None
    pass_d: bool | None


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of ``log err`` against ``log delta``."""

    slope: float
    intercept: float
    r_squared: float
    points_used: int


@dataclass(frozen=True)
class SweepResult:
    records: list
    fit: RateFit
    all_converged: bool
    wall_time: float


def make_phantom(n, sparsity, seed, basis, w):
    """Draw a sparse phantom compatible with the forward operator.

    The support always contains the coarsest scaling index 0 (signals with
    zero mean interact badly with 0/1 sensing matrices) and otherwise draws
    uniformly from the coarsest quarter of the coefficient indices.
    Coefficients are uniform in ``+-[0.5, 1.5]``.  Only the integration
    operator (inverted exactly) and the identity support phantom generation.
    """
    n = int(n)
    sparsity = int(sparsity)
    if basis.n != n or w.domain_dim != n or w.codomain_dim != n:
        raise ValueError("phantom, basis and operator sizes must agree")
    if sparsity < 0 or sparsity > n // 8:
        raise ValueError(f"sparsity must lie in [0, n/8] = [0, {n // 8}]")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    coeffs = np.zeros(n)
    if sparsity > 0:
        pool = 1 + rng.permutation(max(n // 4, 1) - 1)[: sparsity - 1]
        support = np.sort(np.r_[0, pool].astype(int))
        magnitudes = rng.uniform(0.5, 1.5, size=sparsity)
        signs = rng.choice([-1.0, 1.0], size=sparsity)
        coeffs[support] = magnitudes * signs
    else:
        support = np.zeros(0, dtype=int)
    h_star = basis.reconstruct(coeffs)

    if isinstance(w, IntegrationOp):
        x_star = w.inverse().apply(h_star)
    elif isinstance(w, DenseMap) and np.array_equal(w.matrix, np.eye(n)):
        x_star = h_star.copy()
    else:
        raise PhantomError(
            "phantom generation needs an exactly invertible forward operator "
            "(integration or identity)"
        )
    gap = float(np.linalg.norm(w.apply(x_star) - h_star))
    if gap > 1e-12 * max(1.0, float(np.linalg.norm(h_star))):
        raise PhantomError(f"forward-inverse round trip off by {gap:.3e}")
    found = basis.analyze(h_star).support()
    if len(found) != sparsity:
        raise PhantomError(
            f"phantom support has {len(found)} coefficients, wanted {sparsity}"
        )
    return Phantom(
        x_star=x_star,
        h_star=h_star,
        sparsity=sparsity,
        seed=int(seed),
        support=tuple(int(i) for i in support),
    )


def add_noise(y_star, delta, seed):
    """Perturb ``y_star`` by a seeded direction scaled to ``||noise|| = delta``."""
    y_star = np.asarray(y_star, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0.0:
        return y_star.copy()
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    g = rng.standard_normal(y_star.shape[0])
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        g[0] = 1.0
        norm = 1.0
    return y_star + (delta / norm) * g


def fit_rate(deltas, errors):
    """Fit ``log err = slope * log delta + intercept``; tiny errors excluded."""
    deltas = np.asarray(deltas, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > _ERR_FLOOR
    deltas, errors = deltas[keep], errors[keep]
    points = int(deltas.shape[0])
    if points < 2:
        return RateFit(float("nan"), float("nan"), 0.0, points)
    ld = np.log(deltas)
    le = np.log(errors)
    design = np.column_stack([ld, np.ones(points)])
    coef, *_ = np.linalg.lstsq(design, le, rcond=None)
    pred = design @ coef
    ss_res = float(np.sum((le - pred) ** 2))
    ss_tot = float(np.sum((le - le.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(float(coef[0]), float(coef[1]), r2, points)


def _solve_record(model, w, a, l1, y_delta, alpha, solver_cfg):
    if model == "relaxed":
        res = solve_relaxed(RelaxedProblem(w, a, y_delta, alpha, l1), solver_cfg)
        err_vec = res.h
        m_op = ProductMap(w, a)
        stacked = m_op.stack_domain(res.x, res.h)
        target = np.concatenate([np.zeros(m_op.dim_h), y_delta])
        residual = float(np.linalg.norm(m_op.apply(stacked) - target))
        return res, err_vec, residual
    res = solve_strict(StrictProblem(w, a, y_delta, alpha, l1), solver_cfg)
    wx = res.diagnostics["wx"]
    residual = float(np.linalg.norm(a.apply(wx) - y_delta))
    return res, wx, residual


def run_sweep(cfg, phantom, w, a, l1=None, constants=None, solver_cfg=None, jobs=1):
    """Run the noise-level sweep and fit the rate on per-delta medians.

    Parameters
    ----------
    cfg : SweepConfig
    phantom : Phantom
    w, a : LinearMap
        Forward and sensing operators (dimensions must match ``cfg``).
    l1 : WeightedL1, optional
        Defaults to unit weights on a full-depth basis of size ``cfg.n``.
    constants : RateConstants, optional
        When given, every record carries the theoretical bound sides
        ``c*delta`` / ``d*delta`` and their pass flags.
    solver_cfg : SolverConfig, optional
    jobs : int
        Records for distinct (delta, trial) pairs run in parallel when
        ``jobs > 1``; output ordering is independent of ``jobs``.

    Raises
    ------
    SweepError
        If any record's solve raises; non-convergence is not an error and
        only clears ``all_converged``.
    """
    start = time.perf_counter()
    if l1 is None:
        from .basis import WaveletBasis

        l1 = WeightedL1(WaveletBasis(cfg.n))
    solver_cfg = solver_cfg or SolverConfig()
    if w.domain_dim != cfg.n or a.codomain_dim != cfg.m:
        raise ValueError("operator dimensions do not match the sweep config")
    y_star = a.apply(phantom.h_star)
    h_star = phantom.h_star
    x_star = phantom.x_star
    w_x_star = w.apply(x_star)

    tasks = [
        (i, t, delta)
        for i, delta in enumerate(cfg.deltas)
        for t in range(cfg.trials)
    ]

    def one(task):
        i, t, delta = task
        alpha = cfg.big_c * delta
        y_delta = add_noise(y_star, delta, cfg.noise_seed(i, t))
        try:
            res, err_vec, residual = _solve_record(
                cfg.model, w, a, l1, y_delta, alpha, solver_cfg
            )
        except Exception as exc:
            raise SweepError(
                f"solve failed at delta={delta!r} trial={t}: {exc}"
            ) from exc
        target = h_star if cfg.model == "relaxed" else w_x_star
        err_h = float(np.linalg.norm(err_vec - target))
        breg = bregman_quadratic(res.x, x_star)
        if constants is not None:
            c_rhs = constants.c * delta
            d_rhs = constants.d * delta
            pass_c = breg <= c_rhs * (1.0 + BOUND_PASS_REL) + BOUND_PASS_ABS
            pass_d = err_h <= d_rhs * (1.0 + BOUND_PASS_REL) + BOUND_PASS_ABS
        else:
            c_rhs = float("nan")
            d_rhs = float("nan")
            pass_c = None
            pass_d = None
        record = SweepRecord(
            delta=delta,
            alpha=alpha,
            bregman_x=breg,
            err_h=err_h,
            residual=residual,
            iterations=res.iterations,
            bound_c_rhs=c_rhs,
            bound_d_rhs=d_rhs,
            pass_c=pass_c,
            pass_d=pass_d,
        )
        return record, res.converged

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, tasks))
    else:
        outcomes = [one(task) for task in tasks]

    records = [rec for rec, _ in outcomes]
    all_converged = all(conv for _, conv in outcomes)
    medians = []
    for i, delta in enumerate(cfg.deltas):
        errs = [records[i * cfg.trials + t].err_h for t in range(cfg.trials)]
        medians.append(float(np.median(errs)))
    fit = fit_rate(cfg.deltas, medians)
    return SweepResult(
        records=records,
        fit=fit,
        all_converged=all_converged,
        wall_time=time.perf_counter() - start,
    )


def _format_cell(value):
    if value is None:
        return "na"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _record_row(rec):
    cells = [
        _format_cell(rec.delta),
        _format_cell(rec.alpha),
        _format_cell(rec.bregman_x),
        _format_cell(rec.err_h),
        _format_cell(rec.residual),
        str(int(rec.iterations)),
        _format_cell(rec.bound_c_rhs),
        _format_cell(rec.bound_d_rhs),
        _format_cell(rec.pass_c),
        _format_cell(rec.pass_d),
    ]
    return ",".join(cells)


def emit_csv(records, fit, path, metadata=None):
    """Write sweep records with a ``#``-prefixed metadata header.

    The metadata block carries everything needed to replay the sweep
    (descriptors, seeds, solver settings) plus the rate fit.  Lines starting
    with ``# walltime`` are excluded from :func:`determinism_hash`.
    """
    if not records:
        raise ValueError("refusing to emit an empty record list")
    lines = ["# l1coreg_sweep_csv = 1", f"# version = {__version__}"]
    for key, value in (metadata or {}).items():
        lines.append(f"# {key} = {value}")
    if fit is not None:
        lines.append(f"# fit_slope = {fit.slope!r}")
        lines.append(f"# fit_intercept = {fit.intercept!r}")
        lines.append(f"# fit_r_squared = {fit.r_squared!r}")
        lines.append(f"# fit_points_used = {fit.points_used}")
    lines.append(",".join(CSV_COLUMNS))
    lines.extend(_record_row(rec) for rec in records)
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="ascii") as handle:
        handle.write(text)
    return text


def _parse_cell(name, cell):
    if name == "iterations":
        return int(cell)
    if name in ("pass_c", "pass_d"):
        if cell == "na":
            return None
        return cell == "1"
    return float(cell)


def parse_csv(path_or_text):
    """Parse :func:`emit_csv` output into ``(records, metadata, fit)``."""
    if "\n" in str(path_or_text):
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="ascii") as handle:
            text = handle.read()
    metadata = {}
    records = []
    saw_header = False
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(" = ")
            metadata[key.strip()] = value.strip()
            continue
        if not saw_header:
            if line != ",".join(CSV_COLUMNS):
                raise ValueError(f"unexpected CSV header: {line!r}")
            saw_header = True
            continue
        cells = line.split(",")
        if len(cells) != len(CSV_COLUMNS):
            raise ValueError(f"row has {len(cells)} columns, expected 10: {line!r}")
        values = {
            name: _parse_cell(name, cell) for name, cell in zip(CSV_COLUMNS, cells)
        }
        values["iterations"] = int(values["iterations"])
        records.append(SweepRecord(**values))
    fit = None
    if "fit_slope" in metadata:
        fit = RateFit(
            slope=float(metadata["fit_slope"]),
            intercept=float(metadata["fit_intercept"]),
            r_squared=float(metadata["fit_r_squared"]),
            points_used=int(metadata["fit_points_used"]),
        )
    return records, metadata, fit


def determinism_hash(path_or_text):
    """SHA-256 over the CSV content, skipping wall-time metadata lines."""
    if "\n" in str(path_or_text):
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="ascii") as handle:
            text = handle.read()
    kept = [
        line for line in text.splitlines() if not line.startswith("# walltime")
    ]
    payload = "\n".join(kept).encode("ascii")
    return hashlib.sha256(payload).hexdigest()


def emit_svg(records, fit, path, title="error vs noise level"):
    """Write a log-log scatter of ``err_h`` against ``delta`` with the fit line."""
    pts = [(r.delta, r.err_h) for r in records if r.err_h > _ERR_FLOOR]
    if not pts:
        raise ValueError("no plottable records")
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x_lo, x_hi = min(lx), max(lx)
    y_lo, y_hi = min(ly), max(ly)
    x_pad = 0.05 * max(x_hi - x_lo, 1e-9)
    y_pad = 0.05 * max(y_hi - y_lo, 1e-9)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad
    width, height, margin = 640, 480, 60

    def to_px(x, y):
        px = margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)
        py = height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" '
        f'font-family="monospace" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 16}" text-anchor="middle" '
        f'font-family="monospace" font-size="12">log10 delta</text>',
        f'<text x="18" y="{height / 2:.0f}" text-anchor="middle" '
        f'font-family="monospace" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:.0f})">log10 err</text>',
    ]
    for x, y in zip(lx, ly):
        px, py = to_px(x, y)
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="steelblue"/>')
    if fit is not None and math.isfinite(fit.slope):
        # fit is in natural logs; convert to base-10 coordinates
        y1 = fit.slope * x_lo + (fit.intercept / math.log(10.0))
        y2 = fit.slope * x_hi + (fit.intercept / math.log(10.0))
        p1 = to_px(x_lo, y1)
        p2 = to_px(x_hi, y2)
        parts.append(
            f'<line x1="{p1[0]:.2f}" y1="{p1[1]:.2f}" x2="{p2[0]:.2f}" '
            f'y2="{p2[1]:.2f}" stroke="crimson" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin}" y="{margin - 8}" text-anchor="end" '
            f'font-family="monospace" font-size="12">slope '
            f"{fit.slope:.3f}, r2 {fit.r_squared:.4f}</text>"
        )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    with open(path, "w", encoding="ascii") as handle:
        handle.write(text)
    return text


#: A measured slope at or above this, on an instance whose certificate
#: search failed, is flagged for review (it would contradict the necessity
#: of the conditions if the search outcome were conclusive).
CONVERSE_SLOPE_FLAG = 0.95


def converse_consistency_flag(certificate_valid, slope):
    """Monitoring flag relating certificate outcome and measured rate.

    Returns True when the combination deserves attention: a near-linear
    measured slope without a found certificate.  The certificate search is
    heuristic, so this marks records for review rather than failing them.
    """
    if certificate_valid:
        return False
    return bool(np.isfinite(slope) and slope >= CONVERSE_SLOPE_FLAG)


def default_operators(cfg, forward="integration", sensing="bernoulli"):
    """Standard sweep operators: forward map plus seeded sensing matrix."""
    if forward == "integration":
        w = IntegrationOp(cfg.n)
    elif forward == "identity":
        w = identity(cfg.n)
    else:
        raise ValueError(f"unknown forward operator {forward!r}")
    if sensing == "bernoulli":
        a = BernoulliSensing(cfg.m, cfg.n, seed=cfg.matrix_seed())
    elif sensing == "identity":
        if cfg.m != cfg.n:
            raise ValueError("identity sensing needs m == n")
        a = identity(cfg.n)
    else:
        raise ValueError(f"unknown sensing operator {sensing!r}")
    return w, a


def sweep_metadata(cfg, w, a, l1, solver_cfg, forward, sensing="bernoulli",
                   kappa_scalar=None):
    """Metadata block for CSV emission; everything needed for bit-exact replay."""
    meta = {
        "model": cfg.model,
        "n": str(cfg.n),
        "m": str(cfg.m),
        "sparsity": str(cfg.sparsity),
        "seed": str(cfg.seed),
        "big_c": repr(float(cfg.big_c)),
        "trials": str(cfg.trials),
        "deltas": ",".join(repr(d) for d in cfg.deltas),
        "forward": forward,
        "sensing": sensing,
        "w_descriptor": to_descriptor(w),
        "a_descriptor": to_descriptor(a),
        "basis_n": str(l1.basis.n),
        "basis_levels": str(l1.basis.levels),
        "kappa": (
            repr(float(kappa_scalar))
            if kappa_scalar is not None
            else ",".join(repr(float(k)) for k in l1.kappa)
        ),
        "solver_max_iters": str(solver_cfg.max_iters),
        "solver_tol": repr(solver_cfg.tol),
        "solver_gamma": repr(solver_cfg.gamma),
        "solver_lambda_relax": repr(solver_cfg.lambda_relax),
        "solver_rho": repr(solver_cfg.rho),
        "solver_seed": "none" if solver_cfg.seed is None else str(solver_cfg.seed),
        "phantom_seed": str(cfg.phantom_seed()),
        "matrix_seed": str(cfg.matrix_seed()),
        "noise_seed_rule": "seed*1000000 + delta_index*100 + trial",
        "phantom_support_rule": "index 0 plus draws from coarsest quarter",
    }
    return meta
