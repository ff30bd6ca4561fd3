import numpy as np
import pytest

from spinshuffle.spinsim import SequenceParams, TissueParams, constant_train


@pytest.fixture
def cpmg32():
    return constant_train(32, 180.0, 10.0)


@pytest.fixture
def ramp16():
    return SequenceParams(flips_deg=tuple(np.linspace(60, 120, 16)),
                          echo_spacing_ms=10.0)


@pytest.fixture
def tissue():
    return TissueParams(rho=1.0, t1=1000.0, t2=100.0)


def random_tissue(rng):
    t2 = float(rng.uniform(30, 300))
    t1 = float(rng.uniform(max(400.0, t2), 3000))
    return TissueParams(rho=complex(rng.standard_normal(),
                                    rng.standard_normal()),
                        t1=t1, t2=t2, eta=float(rng.uniform(0.7, 1.2)))


def random_train(rng, n_echoes):
    flips = rng.uniform(40, 160, n_echoes)
    return SequenceParams(flips_deg=tuple(flips), echo_spacing_ms=8.0)
