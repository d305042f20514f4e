"""Penalty functionals, proximal maps, subgradients and Bregman distances.

The weighted l1 functional acts on wavelet coefficients of signals in H; the
quadratic penalty ``||x||^2 / 2`` acts on the signal space X directly.  Both
are pure value objects, safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import CoefficientVector, WaveletBasis

__all__ = [
    "WeightedL1",
    "QuadraticPenalty",
    "Subgradient",
    "SubgradientError",
    "soft_threshold",
    "eval_weighted_l1",
    "prox_weighted_l1",
    "canonical_subgradient",
    "subgradient_from_coefficients",
    "bregman_l1",
    "bregman_quadratic",
]

#: lambda joins the saturated set when kappa - |eta| <= SATURATION_TOL * kappa.
SATURATION_TOL = 1e-12

#: Tolerance for the sign equalities when validating a subgradient.
_SIGN_EQ_TOL = 1e-8


class SubgradientError(ValueError):
    """Proposed coefficients do not form a valid l1 subgradient."""


@dataclass(frozen=True)
class WeightedL1:
    """Weighted l1 norm ``sum_lambda kappa_lambda |<phi_lambda, h>|``.

    Weights must be bounded below by a positive constant; the bound is
    exposed as :attr:`lower_bound`.
    """

    basis: WaveletBasis
    kappa: np.ndarray = None

    def __post_init__(self):
        kappa = self.kappa
        if kappa is None:
            kappa = np.ones(self.basis.n)
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        if kappa.shape == (1,):
            kappa = np.full(self.basis.n, kappa[0])
        if kappa.shape != (self.basis.n,):
            raise ValueError(f"kappa must have length {self.basis.n}")
        if not np.all(kappa > 0.0):
            raise ValueError("all weights kappa must be positive")
        kappa = kappa.copy()
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

    @property
    def lower_bound(self):
        """The positive lower bound ``a`` of the weights."""
        return float(self.kappa.min())

    def eval(self, h):
        return eval_weighted_l1(self, h)

    def eval_coeffs(self, c):
        c = np.asarray(c, dtype=float)
        return float(np.sum(self.kappa * np.abs(c)))

    def prox(self, h, t):
        return prox_weighted_l1(self, h, t)


class QuadraticPenalty:
    """The penalty ``R(x) = ||x||^2 / 2`` with ``grad R(x) = x``.

    This is the only penalty the solvers ship with; other proper convex
    choices can be added by mirroring this interface (``eval``, ``gradient``,
    ``prox``, ``bregman``).
    """

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ x)

    def gradient(self, x):
        return np.asarray(x, dtype=float).copy()

    def prox(self, x, t):
        """``argmin_z ||z - x||^2/2 + t ||z||^2/2 = x / (1 + t)``."""
        return np.asarray(x, dtype=float) / (1.0 + t)

    def bregman(self, x, x_star, xi=None):
        """Bregman distance at subgradient ``xi`` (default ``xi = x_star``)."""
        x = np.asarray(x, dtype=float)
        x_star = np.asarray(x_star, dtype=float)
        if xi is None:
            return bregman_quadratic(x, x_star)
        xi = np.asarray(xi, dtype=float)
        return self.eval(x) - self.eval(x_star) - float(xi @ (x - x_star))

    def __eq__(self, other):
        return isinstance(other, QuadraticPenalty)

    def __hash__(self):
        return hash(QuadraticPenalty)


@dataclass(frozen=True)
class Subgradient:
    """An element ``eta`` of the weighted-l1 subdifferential at some ``h*``.

    Attributes
    ----------
    eta : CoefficientVector
        Coefficients ``eta_lambda`` with ``|eta_lambda| <= kappa_lambda``
        and equality (with the sign of ``h*``) on the support of ``h*``.
    omega : tuple of int
        Saturated set ``{lambda : |eta_lambda| = kappa_lambda}``.
    margin : float
        ``min{kappa_lambda - |eta_lambda| : lambda not in omega}``, positive.
    """

    eta: CoefficientVector
    omega: tuple
    margin: float

    def off_omega_mask(self):
        mask = np.ones(self.eta.basis.n, dtype=bool)
        mask[list(self.omega)] = False
        return mask


def soft_threshold(c, thresholds):
    """Componentwise ``sign(c) * max(|c| - thresholds, 0)``."""
    c = np.asarray(c, dtype=float)
    return np.sign(c) * np.maximum(np.abs(c) - thresholds, 0.0)


def eval_weighted_l1(f, h):
    """Value ``sum kappa_lambda |<phi_lambda, h>|`` computed through analysis."""
    return f.eval_coeffs(f.basis.decompose(h))


def prox_weighted_l1(f, h, t):
    """Proximal map of ``t * ||.||_{1,kappa}``.

    Since the basis is orthonormal the objective separates in coefficient
    space, so this is soft-thresholding with per-index thresholds
    ``t * kappa_lambda`` followed by synthesis.
    """
    if t <= 0:
        raise ValueError("prox step t must be positive")
    c = f.basis.decompose(h)
    return f.basis.reconstruct(soft_threshold(c, t * f.kappa))


def _saturated_set(kappa, eta_coeffs):
    gap = kappa - np.abs(eta_coeffs)
    return gap <= SATURATION_TOL * kappa


def _build_subgradient(f, eta_coeffs):
    saturated = _saturated_set(f.kappa, eta_coeffs)
    omega = tuple(int(i) for i in np.nonzero(saturated)[0])
    off = ~saturated
    if not off.any():
        raise SubgradientError(
            "every index is saturated; the margin m[eta] is undefined"
        )
    margin = float(np.min(f.kappa[off] - np.abs(eta_coeffs[off])))
    if margin <= 0.0:
        raise SubgradientError(f"margin m[eta] = {margin} must be positive")
    return Subgradient(CoefficientVector(eta_coeffs, f.basis), omega, margin)


def subgradient_from_coefficients(f, h_star, eta_coeffs, sign_tol=_SIGN_EQ_TOL):
    """Validate raw coefficients as a subgradient of ``||.||_{1,kappa}`` at ``h_star``.

    Checks the box constraint everywhere and the sign equalities
    ``eta_lambda = kappa_lambda * sign(<phi_lambda, h_star>)`` on the support
    of ``h_star``, then computes the saturated set and margin.

    Raises
    ------
    SubgradientError
        If any constraint fails or the margin is not positive.
    """
    eta_coeffs = np.asarray(eta_coeffs, dtype=float)
    c_star = f.basis.analyze(h_star)
    support = c_star.support()
    box_violation = np.max(np.abs(eta_coeffs) - f.kappa, initial=0.0)
    if box_violation > SATURATION_TOL * f.kappa.max():
        raise SubgradientError(
            f"|eta| exceeds kappa by {box_violation:.3e} somewhere"
        )
    eta_coeffs = np.clip(eta_coeffs, -f.kappa, f.kappa)
    for lam in support:
        want = f.kappa[lam] * np.sign(c_star.coeffs[lam])
        if abs(eta_coeffs[lam] - want) > sign_tol * max(1.0, f.kappa[lam]):
            raise SubgradientError(
                f"eta[{lam}] = {eta_coeffs[lam]} != kappa*sign = {want} on support"
            )
    return _build_subgradient(f, eta_coeffs)


def canonical_subgradient(f, h_star, fill=None):
    """Subgradient with prescribed off-support values.

    ``eta_lambda = kappa_lambda * sign(<phi_lambda, h_star>)`` on the support
    of ``h_star`` and ``eta_lambda = fill_lambda`` elsewhere (default zero,
    which maximizes the margin).

    Raises
    ------
    SubgradientError
        If ``fill`` violates the box constraint off the support, or the
        resulting margin is not positive (fill saturates everywhere off the
        saturated set).
    """
    c_star = f.basis.analyze(h_star)
    support = list(c_star.support())
    n = f.basis.n
    if fill is None:
        eta = np.zeros(n)
    else:
        eta = np.asarray(fill, dtype=float).copy()
        if eta.shape != (n,):
            raise ValueError(f"fill must have length {n}")
    off = np.ones(n, dtype=bool)
    off[support] = False
    violation = np.max(np.abs(eta[off]) - f.kappa[off], initial=0.0)
    if violation > SATURATION_TOL * f.kappa.max():
        raise SubgradientError(
            f"fill exceeds the box |fill| <= kappa by {violation:.3e}"
        )
    eta[off] = np.clip(eta[off], -f.kappa[off], f.kappa[off])
    eta[support] = f.kappa[support] * np.sign(c_star.coeffs[support])
    return _build_subgradient(f, eta)


def bregman_l1(f, eta, h, h_star):
    """Bregman distance of the weighted l1 norm at ``eta``.

    Uses positive homogeneity (``<eta, h*> = ||h*||_{1,kappa}``) to evaluate
    it as the termwise-nonnegative sum
    ``sum_lambda (kappa_lambda |c_lambda| - eta_lambda c_lambda)`` with
    ``c = analyze(h)``.

    Parameters
    ----------
    eta : Subgradient
        Must be a subgradient at ``h_star`` (re-validated here).
    """
    subgradient_from_coefficients(f, h_star, eta.eta.coeffs)
    c = f.basis.decompose(h)
    terms = f.kappa * np.abs(c) - eta.eta.coeffs * c
    value = float(np.sum(terms))
    if value < 0.0:
        # mathematically >= 0; only roundoff can push it below
        scale = float(np.sum(np.abs(terms))) + 1e-300
        if value < -1e-12 * scale:
            raise SubgradientError(f"Bregman distance came out negative: {value}")
        value = 0.0
    return value


def bregman_quadratic(x, x_star):
    """Bregman distance of ``||.||^2/2`` at the canonical subgradient ``x_star``."""
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x.shape != x_star.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_star.shape}")
    d = x - x_star
    return 0.5 * float(d @ d)
