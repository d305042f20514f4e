"""Orthonormal Daubechies wavelet basis (two vanishing moments) on ``R^n``.

The transform is the periodic 4-tap filter bank applied to dyadic signal
lengths, decomposed by default all the way down to a single scaling
coefficient.  Periodization keeps the basis exactly orthonormal, so analysis
is an isometry and synthesis is its transpose.

Coefficient ordering: index 0 is the coarsest scaling coefficient, followed
by detail blocks from coarsest to finest.  The first quarter of the indices
therefore covers the coarse scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WaveletBasis",
    "CoefficientVector",
    "project",
    "SUPPORT_TOL_FACTOR",
]

#: Coefficients with magnitude <= SUPPORT_TOL_FACTOR * ||c||_2 count as zero.
SUPPORT_TOL_FACTOR = 1e-12


def _db2_filters():
    """4-tap orthonormal scaling/wavelet filter pair with two vanishing moments.

    The closed form below is the (unique up to reflection) solution of the
    orthonormality conditions ``sum h_k^2 = 1``, ``sum h_k h_{k+2} = 0``,
    ``sum h_k = sqrt(2)`` together with the vanishing-moment conditions
    ``sum g_k = sum k g_k = 0`` for ``g_k = (-1)^k h_{3-k}``.
    """
    s3 = math.sqrt(3.0)
    h = np.array([1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3]) / (4.0 * math.sqrt(2.0))
    g = np.array([h[3], -h[2], h[1], -h[0]])
    checks = (
        abs(h @ h - 1.0),
        abs(h[0] * h[2] + h[1] * h[3]),
        abs(h.sum() - math.sqrt(2.0)),
        abs(g.sum()),
        abs(g @ np.arange(4.0)),
    )
    if max(checks) > 1e-14:
        raise RuntimeError(f"db2 filter failed validity checks: {checks}")
    h.setflags(write=False)
    g.setflags(write=False)
    return h, g


_H, _G = _db2_filters()


def _dwt_step(x):
    """One periodic analysis step: ``a_i = sum_k h_k x_{(2i+k) mod L}``.

    Operates along axis 0, so a batch of signals can be transformed at once.
    """
    xe = x[0::2]
    xo = x[1::2]
    xe2 = np.roll(xe, -1, axis=0)
    xo2 = np.roll(xo, -1, axis=0)
    a = _H[0] * xe + _H[1] * xo + _H[2] * xe2 + _H[3] * xo2
    d = _G[0] * xe + _G[1] * xo + _G[2] * xe2 + _G[3] * xo2
    return a, d


def _idwt_step(a, d):
    """Inverse (= transpose) of :func:`_dwt_step`."""
    ap = np.roll(a, 1, axis=0)
    dp = np.roll(d, 1, axis=0)
    x = np.empty((2 * a.shape[0],) + a.shape[1:])
    x[0::2] = _H[0] * a + _H[2] * ap + _G[0] * d + _G[2] * dp
    x[1::2] = _H[1] * a + _H[3] * ap + _G[1] * d + _G[3] * dp
    return x


class WaveletBasis:
    """Periodic db2 wavelet basis on ``R^n`` with ``n`` a power of two.

    Parameters
    ----------
    n : int
        Signal length; must be a power of two.
    levels : int, optional
        Decomposition depth.  Defaults to the maximum ``log2(n)``, leaving a
        single scaling coefficient.

    Notes
    -----
    ``decompose``/``reconstruct`` work on plain arrays; ``analyze`` and
    ``synthesize`` are the typed counterparts using
    :class:`CoefficientVector`.  Both directions are exact inverses and
    preserve the Euclidean norm to machine precision.
    """

    vanishing_moments = 2
    boundary = "periodic"

    #: Largest n for which the orthogonal transform matrix is cached; one
    #: BLAS matvec then replaces the level-by-level filter bank.
    _MATRIX_CACHE_LIMIT = 1024

    def __init__(self, n, levels=None):
        n = int(n)
        if n < 1 or (n & (n - 1)) != 0:
            raise ValueError(f"wavelet basis needs a power-of-two size, got {n}")
        max_levels = n.bit_length() - 1
        if levels is None:
            levels = max_levels
        levels = int(levels)
        if not 0 <= levels <= max_levels:
            raise ValueError(f"levels must be in [0, {max_levels}], got {levels}")
        self.n = n
        self.levels = levels
        self._matrix = None
        if n <= self._MATRIX_CACHE_LIMIT:
            matrix = self._decompose_filter_bank(np.eye(n))
            matrix.setflags(write=False)
            self._matrix = matrix

    def _decompose_filter_bank(self, h):
        c = np.empty(h.shape)
        cur = h
        length = self.n
        for _ in range(self.levels):
            a, d = _dwt_step(cur)
            half = length // 2
            c[half:length] = d
            cur = a
            length = half
        c[:length] = cur
        return c

    def _reconstruct_filter_bank(self, c):
        length = self.n >> self.levels
        cur = c[:length].copy()
        while length < self.n:
            cur = _idwt_step(cur, c[length : 2 * length])
            length *= 2
        return cur

    def decompose(self, h):
        """Full analysis transform of a length-``n`` array."""
        h = np.asarray(h, dtype=float)
        if h.shape != (self.n,):
            raise ValueError(f"expected length-{self.n} vector, got shape {h.shape}")
        if self._matrix is not None:
            return self._matrix @ h
        return self._decompose_filter_bank(h)

    def reconstruct(self, c):
        """Inverse of :meth:`decompose`."""
        c = np.asarray(c, dtype=float)
        if c.shape != (self.n,):
            raise ValueError(f"expected length-{self.n} vector, got shape {c.shape}")
        if self._matrix is not None:
            return self._matrix.T @ c
        return self._reconstruct_filter_bank(c)

    def analyze(self, h):
        """Coefficients ``c_lambda = <phi_lambda, h>`` as a :class:`CoefficientVector`."""
        return CoefficientVector(self.decompose(h), self)

    def synthesize(self, c):
        """Signal ``sum_lambda c_lambda phi_lambda`` from coefficients.

        Accepts a :class:`CoefficientVector` or a plain length-``n`` array.
        """
        if isinstance(c, CoefficientVector):
            c = c.coeffs
        return self.reconstruct(c)

    def basis_vector(self, lam):
        """The basis element ``phi_lambda`` as a signal-domain array."""
        e = np.zeros(self.n)
        e[int(lam)] = 1.0
        return self.reconstruct(e)

    def __repr__(self):
        return f"WaveletBasis(n={self.n}, levels={self.levels})"

    def __eq__(self, other):
        return (
            isinstance(other, WaveletBasis)
            and other.n == self.n
            and other.levels == self.levels
        )

    def __hash__(self):
        return hash((self.n, self.levels))


@dataclass(frozen=True)
class CoefficientVector:
    """Coordinates of a signal in a :class:`WaveletBasis`."""

    coeffs: np.ndarray
    basis: WaveletBasis

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.basis.n,):
            raise ValueError(
                f"coefficient length {coeffs.shape} != basis size {self.basis.n}"
            )
        coeffs = coeffs.copy()
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def support(self):
        """Indices with a nonzero coefficient.

        A coefficient counts as zero when its magnitude is at most
        ``SUPPORT_TOL_FACTOR`` times the Euclidean norm of the whole vector.
        """
        norm = float(np.linalg.norm(self.coeffs))
        if norm == 0.0:
            return ()
        keep = np.abs(self.coeffs) > SUPPORT_TOL_FACTOR * norm
        return tuple(int(i) for i in np.nonzero(keep)[0])

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def __len__(self):
        return self.basis.n


def project(c, omega):
    """Zero all coefficients outside ``omega`` (the projection onto ``H_Omega``)."""
    omega = set(int(i) for i in omega)
    mask = np.zeros(c.basis.n, dtype=bool)
    for i in omega:
        if not 0 <= i < c.basis.n:
            raise ValueError(f"omega index {i} out of range [0, {c.basis.n})")
        mask[i] = True
    out = np.where(mask, c.coeffs, 0.0)
    return CoefficientVector(out, c.basis)
