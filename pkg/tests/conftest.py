import numpy as np
import pytest

from mcfhyper.hilbert import ModeLabel, TwoPhotonState

CORES_A = ("1", "2", "3", "4")
CORES_B = ("1'", "2'", "3'", "4'")


def random_unitary(rng, n):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, n_terms=8, normalized=True):
    labels_a = [ModeLabel(c, p) for c in CORES_A for p in "HV"]
    labels_b = [ModeLabel(c, p) for c in CORES_B for p in "HV"]
    pairs = [(a, b) for a in labels_a for b in labels_b]
    idx = rng.choice(len(pairs), size=n_terms, replace=False)
    amps = rng.normal(size=n_terms) + 1j * rng.normal(size=n_terms)
    if normalized:
        amps /= np.linalg.norm(amps)
    return TwoPhotonState({pairs[i]: a for i, a in zip(idx, amps)})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
