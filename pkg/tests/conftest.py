import math

import numpy as np
import pytest

from cavsqueeze.exact_dicke import DickeState

from cavsqueeze.params import derive_couplings, reference_params

TOY_ALPHA = 0.2


def toy_params(alpha=TOY_ALPHA, **overrides):
    """Lossless reference cavity with the detuning reduced so that alpha_ss = ``alpha``.

    Makes a few-atom ensemble squeeze on a time scale of tens of cavity
    lifetimes, where the brute-force oracle is cheap.
    """
    base = reference_params(spont_rate=0.0)
    a0 = derive_couplings(base).alpha_steady
    return base.replace(detuning=base.detuning * a0 / alpha, **overrides)


@pytest.fixture
def reference():
    return reference_params()


@pytest.fixture
def toy():
    return toy_params()


def rel(a, b):
    return abs(a - b) / abs(b)


def squeeze_time(p, n_atoms):
    """Time at which ``N kappa_det alpha^2 t = 1`` (detector efficiency left out)."""
    d = derive_couplings(p)
    return 1.0 / (n_atoms * p.kappa_det * d.alpha_steady**2)



def gaussian_weighted_state(n_atoms, p):
    """Steady-drive Dicke state with exactly Gaussian weights ``C_nm(0) ~ exp(-(n^2 + m^2)/N)``."""
    ns = np.arange(n_atoms + 1) - n_atoms / 2
    w = -(ns**2) / n_atoms
    d = derive_couplings(p)
    return DickeState(n_atoms=n_atoms, log_c0=w[:, None] + w[None, :], steady=True,
                      alpha=d.alpha_steady, ax=d.ax_steady)


__all__ = ["toy_params", "rel", "squeeze_time", "gaussian_weighted_state", "math"]
