import numpy as np
import pytest

from l1coreg.basis import WaveletBasis
from l1coreg.operators import BernoulliSensing, identity
from l1coreg.regularizers import WeightedL1


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def basis8():
    return WaveletBasis(8)


@pytest.fixture
def l1_unit8(basis8):
    return WeightedL1(basis8)


def make_sparse_signal(basis, support, values):
    """Signal with prescribed wavelet coefficients."""
    c = np.zeros(basis.n)
    for lam, val in zip(support, values):
        c[lam] = val
    return basis.reconstruct(c)


def certified_identity_instance(n, m, sparsity, seed):
    """Identity-forward instance of the kind used by the acceptance suite.

    Built through the production phantom generator so tests see exactly what
    sweeps produce.
    """
    from l1coreg.experiments import SweepConfig, make_phantom

    basis = WaveletBasis(n)
    l1 = WeightedL1(basis)
    w = identity(n)
    cfg = SweepConfig(n=n, m=m, sparsity=sparsity, deltas=(1.0,), seed=seed)
    a = BernoulliSensing(m, n, seed=cfg.matrix_seed())
    phantom = make_phantom(n, sparsity, cfg.phantom_seed(), basis, w)
    return basis, l1, w, a, phantom.x_star, phantom.h_star
