"""Source-condition certificates, restricted injectivity and rate constants.

A certificate consists of pre-images under adjoint operators of the
subgradients at the truth: for the relaxed model a pair ``(u, v)`` with
``W* u = x*`` and ``A* v - u`` a weighted-l1 subgradient at ``h* = W x*``;
for the strict model a ``nu`` whose pullback ``W* A* nu`` splits into
``x* + W* eta``.  Together with injectivity of the sensing operator
restricted to the saturated coefficient set, these yield explicit linear
error-rate constants, which this module computes and re-checks numerically.

The searches used here (least squares for ``u``, a minimum-norm
equality-constrained solve for ``v``, alternating least squares with box
projection for the strict split) are heuristics: a failed search is reported
with its residuals, never turned into an exception, and does not prove that
no certificate exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import materialize, operator_norm, restrict
from .regularizers import (
    Subgradient,
    SubgradientError,
    bregman_l1,
    subgradient_from_coefficients,
)

__all__ = [
    "InjectivityReport",
    "SourceCertificateRelaxed",
    "SourceCertificateStrict",
    "RateConstants",
    "VariationalBoundsReport",
    "NormBoundReport",
    "check_restricted_injectivity",
    "find_certificate_relaxed",
    "find_certificate_strict",
    "rate_constants_relaxed",
    "rate_constants_strict",
    "check_variational_bounds",
    "check_norm_bound",
    "report_lines",
    "parse_report",
]

#: sigma_min above this multiple of ||A|| counts as injective.
INJECTIVITY_RTOL = 1e-10

#: Relative residual below which a certificate equation counts as satisfied.
CERTIFICATE_RTOL = 1e-8

#: Relative slack absorbing solver suboptimality in bound checks.
BOUND_SLACK_REL = 1e-6
_BOUND_SLACK_ABS = 1e-12


@dataclass(frozen=True)
class InjectivityReport:
    """Smallest singular value of the restricted sensing operator ``A_Omega``."""

    omega: tuple
    sigma_min: float
    a_omega_inv_norm: float
    injective: bool


@dataclass(frozen=True)
class SourceCertificateRelaxed:
    """Candidate pair ``(u, v)`` for the relaxed-model source condition.

    ``eta`` is the validated subgradient built from ``A* v - u`` when the
    certificate is valid, else ``None``; ``eta_coeffs`` always holds the raw
    coefficients.  ``saturation_margin`` is measured off the support of
    ``h*``; the certificate satisfies strict complementarity iff it is
    positive.
    """

    u: np.ndarray
    v: np.ndarray
    eta: Subgradient | None
    eta_coeffs: np.ndarray
    residual_u: float
    support_residual: float
    saturation_margin: float
    support: tuple
    valid: bool
    strict_complementarity: bool


@dataclass(frozen=True)
class SourceCertificateStrict:
    """Candidate ``nu`` (plus subgradient split) for the strict-model condition."""

    nu: np.ndarray
    xi: np.ndarray
    eta: Subgradient | None
    eta_coeffs: np.ndarray
    split_residual: float
    support: tuple
    valid: bool


@dataclass(frozen=True)
class RateConstants:
    """Constants ``c`` and ``d`` of the linear error bounds, with ingredients.

    Stored ingredients allow the constants to be recomputed exactly:
    ``c = (1 + C s)^2 / (2 C)`` and
    ``d = 2 q (1 + C s) + (1 + q ||A||) / m * c`` with ``s = norm_uv_or_nu``,
    ``q = a_inv_norm`` and ``m = m_eta``.
    """

    c: float
    d: float
    big_c: float
    norm_uv_or_nu: float
    m_eta: float
    a_norm: float
    a_inv_norm: float


@dataclass(frozen=True)
class VariationalBoundsReport:
    """Both sides of the residual and Bregman bounds for one solve."""

    delta: float
    residual_lhs: float
    residual_rhs: float
    residual_ok: bool
    bregman_lhs: float
    bregman_rhs: float
    bregman_ok: bool

    @property
    def all_ok(self):
        return self.residual_ok and self.bregman_ok


@dataclass(frozen=True)
class NormBoundReport:
    """Both sides of the restricted-injectivity norm bounds."""

    lhs: float
    rhs_l1: float
    l1_ok: bool
    rhs_bregman: float | None
    bregman_ok: bool | None


def check_restricted_injectivity(a, basis, omega):
    """Injectivity of ``A`` on the span of the basis elements in ``omega``.

    Materializes the restricted operator column by column and takes a dense
    SVD.  Empty ``omega`` is vacuously injective with inverse norm 0;
    ``|omega| > codomain_dim`` can never be injective and is reported as
    such (not an error).
    """
    omega = tuple(int(i) for i in omega)
    if len(omega) == 0:
        return InjectivityReport(omega, float("inf"), 0.0, True)
    cols = materialize(restrict(a, omega, basis=basis))
    sigma_min = float(np.linalg.svd(cols, compute_uv=False)[-1])
    if len(omega) > a.codomain_dim:
        sigma_min = 0.0
    a_norm = operator_norm(a)
    injective = sigma_min > INJECTIVITY_RTOL * max(a_norm, 1e-300)
    inv_norm = 1.0 / sigma_min if injective else float("inf")
    return InjectivityReport(omega, sigma_min, inv_norm, injective)


def _lstsq(mat, rhs):
    if mat.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(rhs))
    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    return sol, float(np.linalg.norm(mat @ sol - rhs))


def find_certificate_relaxed(w, a, basis, l1, x_star):
    """Search for the relaxed-model source certificate at ``x_star``.

    Step 1 solves ``min_u ||W* u - x*||`` by dense least squares.  Step 2
    computes the minimum-norm ``v`` satisfying the sign equalities
    ``<phi_lambda, A* v - u> = kappa_lambda sign(<phi_lambda, h*>)`` on the
    support of ``h* = W x*``, then checks the box constraints off the
    support.  Invalid outcomes are reported, not raised.
    """
    x_star = np.asarray(x_star, dtype=float)
    h_star = w.apply(x_star)
    c_star = basis.analyze(h_star)
    support = c_star.support()
    kappa = l1.kappa

    wt = materialize(w).T
    u, residual_u = _lstsq(wt, x_star)

    u_coeffs = basis.decompose(u)
    signs = np.sign(c_star.coeffs[list(support)]) if support else np.zeros(0)
    cols = materialize(restrict(a, support, basis=basis))  # m x |S|
    targets = u_coeffs[list(support)] + kappa[list(support)] * signs
    v, support_residual = _lstsq(cols.T, targets)
    if len(support) == 0:
        v = np.zeros(a.codomain_dim)

    eta_coeffs = basis.decompose(a.adjoint_apply(v) - u)
    off = np.ones(basis.n, dtype=bool)
    off[list(support)] = False
    if off.any():
        saturation_margin = float(np.min(kappa[off] - np.abs(eta_coeffs[off])))
    else:
        saturation_margin = float("inf")

    x_scale = max(float(np.linalg.norm(x_star)), 1e-300)
    t_scale = max(float(np.linalg.norm(targets)), 1.0)
    valid = (
        residual_u <= CERTIFICATE_RTOL * x_scale
        and support_residual <= CERTIFICATE_RTOL * t_scale
        and saturation_margin >= 0.0
    )
    eta = None
    if valid:
        try:
            eta = subgradient_from_coefficients(l1, h_star, eta_coeffs)
        except SubgradientError:
            valid = False
    return SourceCertificateRelaxed(
        u=u,
        v=v,
        eta=eta,
        eta_coeffs=eta_coeffs,
        residual_u=residual_u,
        support_residual=support_residual,
        saturation_margin=saturation_margin,
        support=support,
        valid=valid,
        strict_complementarity=valid and saturation_margin > 0.0,
    )


def find_certificate_strict(w, a, basis, l1, x_star, max_alternations=200, tol=1e-10):
    """Search for the strict-model certificate by alternating least squares.

    Minimizes ``||W* A* nu - x* - W* eta||`` jointly over ``nu`` and the
    admissible off-support coefficients of ``eta`` (projected onto the box
    ``|eta_lambda| <= kappa_lambda`` after each least-squares step).  The
    split uses ``xi = x*`` since the quadratic penalty has gradient
    identity.
    """
    x_star = np.asarray(x_star, dtype=float)
    h_star = w.apply(x_star)
    c_star = basis.analyze(h_star)
    support = list(c_star.support())
    kappa = l1.kappa

    w_mat = materialize(w)
    aw_t = (materialize(a) @ w_mat).T  # N x m, columns span ran(W* A*)
    synth = np.zeros((basis.n, basis.n))
    for j in range(basis.n):
        synth[:, j] = basis.basis_vector(j)
    b_mat = w_mat.T @ synth  # maps coefficients of eta to W* eta
    off = np.ones(basis.n, dtype=bool)
    off[support] = False
    b_off = b_mat[:, off]

    eta_coeffs = np.zeros(basis.n)
    eta_coeffs[support] = kappa[support] * np.sign(c_star.coeffs[support])
    xi = x_star

    nu = np.zeros(a.codomain_dim)
    prev = np.inf
    for _ in range(max_alternations):
        target_nu = xi + b_mat @ eta_coeffs
        nu, _ = _lstsq(aw_t, target_nu)
        resid_vec = aw_t @ nu - xi - b_mat[:, ~off] @ eta_coeffs[~off]
        free, _ = _lstsq(b_off, resid_vec)
        eta_coeffs[off] = np.clip(free, -kappa[off], kappa[off])
        split = float(np.linalg.norm(aw_t @ nu - xi - b_mat @ eta_coeffs))
        if prev - split <= tol:
            prev = split
            break
        prev = split

    split_residual = float(np.linalg.norm(aw_t @ nu - xi - b_mat @ eta_coeffs))
    valid = split_residual <= CERTIFICATE_RTOL * max(
        1.0, float(np.linalg.norm(x_star))
    )
    eta = None
    if valid:
        try:
            eta = subgradient_from_coefficients(l1, h_star, eta_coeffs)
        except SubgradientError:
            valid = False
    return SourceCertificateStrict(
        nu=nu,
        xi=xi,
        eta=eta,
        eta_coeffs=eta_coeffs,
        split_residual=split_residual,
        support=tuple(support),
        valid=valid,
    )


def _rate_constants(source_norm, m_eta, inj, big_c, a_norm):
    if not big_c > 0:
        raise ValueError("the parameter-choice constant C must be positive")
    if not inj.injective:
        raise ValueError("rate constants are undefined without restricted injectivity")
    if not m_eta > 0:
        raise ValueError(f"rate constants are undefined for margin m[eta] = {m_eta}")
    growth = 1.0 + big_c * source_norm
    c = growth**2 / (2.0 * big_c)
    d = 2.0 * inj.a_omega_inv_norm * growth
    d += (1.0 + inj.a_omega_inv_norm * a_norm) / m_eta * c
    return c, d


def rate_constants_relaxed(cert, inj, big_c, a_norm):
    """Rate constants of the relaxed-model linear error bounds.

    ``c = (1 + C ||(u,v)||)^2 / (2C)`` and
    ``d = 2 ||A_Omega^-1|| (1 + C ||(u,v)||)
    + (1 + ||A_Omega^-1|| ||A||) / m[eta] * c`` for ``Omega = Omega[A*v - u]``.
    """
    if not cert.valid:
        raise ValueError("rate constants require a valid relaxed certificate")
    source_norm = float(np.sqrt(cert.u @ cert.u + cert.v @ cert.v))
    c, d = _rate_constants(source_norm, cert.eta.margin, inj, big_c, a_norm)
    return RateConstants(
        c=c,
        d=d,
        big_c=float(big_c),
        norm_uv_or_nu=source_norm,
        m_eta=cert.eta.margin,
        a_norm=float(a_norm),
        a_inv_norm=inj.a_omega_inv_norm,
    )


def rate_constants_strict(cert, inj, big_c, a_norm):
    """Rate constants of the strict-model bounds (same shape, with ``||nu||``)."""
    if not cert.valid:
        raise ValueError("rate constants require a valid strict certificate")
    source_norm = float(np.linalg.norm(cert.nu))
    c, d = _rate_constants(source_norm, cert.eta.margin, inj, big_c, a_norm)
    return RateConstants(
        c=c,
        d=d,
        big_c=float(big_c),
        norm_uv_or_nu=source_norm,
        m_eta=cert.eta.margin,
        a_norm=float(a_norm),
        a_inv_norm=inj.a_omega_inv_norm,
    )


def check_variational_bounds(m, source_elem, x_sol, y_delta, y_star, alpha, q_bregman):
    """Check the residual and Bregman bounds of variational regularization.

    For a minimizer of ``||M x - y_delta||^2/2 + alpha Q(x)`` whose penalty
    admits the source element ``source_elem`` (``M* source_elem`` a
    subgradient at the truth), the data residual is bounded by
    ``delta + 2 alpha ||source_elem||`` and the Bregman distance by
    ``(delta + alpha ||source_elem||)^2 / (2 alpha)``.  Both checks carry a
    relative slack of ``BOUND_SLACK_REL`` for solver suboptimality; this is
    report-only and never raises.
    """
    source_elem = np.asarray(source_elem, dtype=float)
    x_sol = np.asarray(x_sol, dtype=float)
    y_delta = np.asarray(y_delta, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    delta = float(np.linalg.norm(y_delta - y_star))
    eta_norm = float(np.linalg.norm(source_elem))

    residual_lhs = float(np.linalg.norm(m.apply(x_sol) - y_delta))
    residual_rhs = delta + 2.0 * alpha * eta_norm
    bregman_rhs = (delta + alpha * eta_norm) ** 2 / (2.0 * alpha)
    res_ok = residual_lhs <= residual_rhs * (1.0 + BOUND_SLACK_REL) + _BOUND_SLACK_ABS
    breg_ok = q_bregman <= bregman_rhs * (1.0 + BOUND_SLACK_REL) + _BOUND_SLACK_ABS
    return VariationalBoundsReport(
        delta=delta,
        residual_lhs=residual_lhs,
        residual_rhs=residual_rhs,
        residual_ok=bool(res_ok),
        bregman_lhs=float(q_bregman),
        bregman_rhs=bregman_rhs,
        bregman_ok=bool(breg_ok),
    )


def check_norm_bound(a, basis, omega, h, h_star, inj, eta=None, l1=None):
    """Check the norm bounds that restricted injectivity provides.

    Verifies ``||h - h*|| <= ||A_Omega^-1|| ||A h - A h*||
    + (1 + ||A_Omega^-1|| ||A||) sum_{off Omega} |<phi_lambda, h>|`` and,
    when a subgradient ``eta`` (with ``Omega = Omega[eta]``) and its
    functional ``l1`` are supplied, the variant with the l1 tail replaced by
    ``D_eta(h, h*) / m[eta]``.

    Raises
    ------
    ValueError
        If ``h_star`` has energy outside ``H_Omega`` (above 1e-10) or
        ``eta``'s saturated set differs from ``omega``.
    """
    omega = tuple(int(i) for i in omega)
    h = np.asarray(h, dtype=float)
    h_star = np.asarray(h_star, dtype=float)
    c_star = basis.decompose(h_star)
    off = np.ones(basis.n, dtype=bool)
    off[list(omega)] = False
    off_energy = float(np.linalg.norm(c_star[off]))
    if off_energy > 1e-10:
        raise ValueError(
            f"h_star has energy {off_energy:.3e} outside H_Omega; the bound "
            "requires h_star in span(phi_lambda, lambda in Omega)"
        )
    if not inj.injective:
        raise ValueError("norm bounds require an injective A_Omega")

    a_norm = operator_norm(a)
    lhs = float(np.linalg.norm(h - h_star))
    misfit = float(np.linalg.norm(a.apply(h) - a.apply(h_star)))
    c_h = basis.decompose(h)
    tail_l1 = float(np.sum(np.abs(c_h[off])))
    factor = 1.0 + inj.a_omega_inv_norm * a_norm
    rhs_l1 = inj.a_omega_inv_norm * misfit + factor * tail_l1
    l1_ok = lhs <= rhs_l1 * (1.0 + BOUND_SLACK_REL) + _BOUND_SLACK_ABS

    rhs_bregman = None
    bregman_ok = None
    if eta is not None:
        if l1 is None:
            raise ValueError("the Bregman variant needs the weighted-l1 functional")
        if set(eta.omega) != set(omega):
            raise ValueError(
                f"eta saturates {eta.omega} but the bound was requested on {omega}"
            )
        breg = bregman_l1(l1, eta, h, h_star)
        rhs_bregman = inj.a_omega_inv_norm * misfit + factor / eta.margin * breg
        bregman_ok = bool(
            lhs <= rhs_bregman * (1.0 + BOUND_SLACK_REL) + _BOUND_SLACK_ABS
        )
    return NormBoundReport(
        lhs=lhs,
        rhs_l1=rhs_l1,
        l1_ok=bool(l1_ok),
        rhs_bregman=rhs_bregman,
        bregman_ok=bregman_ok,
    )


def report_lines(cert, inj=None, constants=None):
    """Serialize a certificate (plus optional reports) as ``key = value`` lines."""
    lines = []
    if isinstance(cert, SourceCertificateRelaxed):
        lines.append("certificate_kind = relaxed")
        lines.append(f"valid = {str(cert.valid).lower()}")
        lines.append(f"residual_u = {cert.residual_u!r}")
        lines.append(f"support_residual = {cert.support_residual!r}")
        lines.append(f"saturation_margin = {cert.saturation_margin!r}")
        lines.append(
            f"strict_complementarity = {str(cert.strict_complementarity).lower()}"
        )
        lines.append(f"support = {','.join(str(i) for i in cert.support)}")
        norm_uv = float(np.sqrt(cert.u @ cert.u + cert.v @ cert.v))
        lines.append(f"norm_uv = {norm_uv!r}")
    elif isinstance(cert, SourceCertificateStrict):
        lines.append("certificate_kind = strict")
        lines.append(f"valid = {str(cert.valid).lower()}")
        lines.append(f"split_residual = {cert.split_residual!r}")
        lines.append(f"support = {','.join(str(i) for i in cert.support)}")
        lines.append(f"norm_nu = {float(np.linalg.norm(cert.nu))!r}")
    else:
        raise TypeError(f"unsupported certificate type {type(cert).__name__}")
    if cert.eta is not None:
        lines.append(f"m_eta = {cert.eta.margin!r}")
        lines.append(f"omega = {','.join(str(i) for i in cert.eta.omega)}")
    if inj is not None:
        lines.append(f"sigma_min = {inj.sigma_min!r}")
        lines.append(f"a_omega_inv_norm = {inj.a_omega_inv_norm!r}")
        lines.append(f"injective = {str(inj.injective).lower()}")
    if constants is not None:
        lines.append(f"big_c = {constants.big_c!r}")
        lines.append(f"c = {constants.c!r}")
        lines.append(f"d = {constants.d!r}")
        lines.append(f"a_norm = {constants.a_norm!r}")
    return lines


def parse_report(text):
    """Parse :func:`report_lines` output back into a flat dict."""
    out = {}
    for raw in text.splitlines() if isinstance(text, str) else text:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value in ("true", "false"):
            out[key] = value == "true"
        elif key in ("support", "omega"):
            out[key] = tuple(int(i) for i in value.split(",")) if value else ()
        else:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out
