import numpy as np
import pytest

from decenteq import model


@pytest.fixture(scope="session")
def qpsk():
    return model.make_constellation("qpsk")


@pytest.fixture(scope="session")
def bpsk():
    return model.make_constellation("bpsk")


@pytest.fixture(scope="session")
def qam16():
    return model.make_constellation("16qam")


@pytest.fixture()
def cfg96(qpsk):
    # 96x16 with 3 equal clusters at receive SNR 3 dB
    beta = 16 / 96
    n0 = beta / 10 ** 0.3
    return model.SystemConfig(96, 16, n0, qpsk, model.equal_weights(3))


def centralized_products(real):
    return real.h.conj().T @ real.y, real.h.conj().T @ real.h


@pytest.fixture(scope="session")
def products():
    return centralized_products
