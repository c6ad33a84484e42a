import logging

import numpy as np
import pytest

from crossdiff.coefficients import PowerLawCoefficients, regularize
from crossdiff.entropy import EntropyMap

logging.getLogger("crossdiff").setLevel(logging.ERROR)
logging.getLogger("crossdiff.coefficients").setLevel(logging.ERROR)


def sqrt_cross(r=(0.0, 0.0), S=((0.0, 0.0), (0.0, 0.0)), sigma=((1.0, 1.0), (1.0, 1.0)), D=(1.0, 1.0)):
    """d_ii = D_i, a_12 = a_21 = sqrt(x)."""
    return PowerLawCoefficients(r=r, S=S, sigma=sigma, D=D, A=((0.0, 1.0), (1.0, 0.0)),
                                alpha=((1.0, 0.5), (0.5, 1.0)))


def skt_like():
    """No self cross-terms, square-root cross diffusion, logistic competition."""
    return sqrt_cross(r=(1.0, 1.0), S=((1.0, 1.0), (1.0, 1.0)))


def maps_for(coeffs, eps):
    reg = regularize(coeffs, eps)
    return reg, (EntropyMap(reg, 0), EntropyMap(reg, 1))


@pytest.fixture
def sqrt_set():
    return sqrt_cross()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
