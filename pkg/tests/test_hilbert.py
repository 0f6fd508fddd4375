import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_state, random_unitary
from mcfhyper.apparatus import hwp_jones
from mcfhyper.errors import BasisError, RangeError, UnitarityError, ZeroState
from mcfhyper.hilbert import (DensityOperator, LocalOperator, ModeLabel, Projector, TwoPhotonState,
                              apply_local, apply_local_unitary, fidelity_with_pure, mix, normalize,
                              probability)
from mcfhyper.source import build_target_state

H1, V1 = ModeLabel("1", "H"), ModeLabel("1", "V")
H1p, V1p = ModeLabel("1'", "H"), ModeLabel("1'", "V")
PHI_PLUS = TwoPhotonState({(H1, H1p): 2**-0.5, (V1, V1p): 2**-0.5})


def test_mode_label_rejects_bad_values():
    with pytest.raises(BasisError):
        ModeLabel("1", "D")
    with pytest.raises(BasisError):
        ModeLabel("1", "H", "X")
    assert ModeLabel(3, "H").core == "3"


def test_mixing_timebin_structures_rejected():
    with pytest.raises(BasisError):
        TwoPhotonState({(H1, H1p): 1, (ModeLabel("1", "H", "S"), ModeLabel("1'", "H", "S")): 1})


def test_normalize_single_term():
    out = normalize(TwoPhotonState({(H1, H1p): 2.0}))
    assert out[(H1, H1p)] == pytest.approx(1.0)


def test_normalize_keeps_normalized_state():
    # four quarter amplitudes: the time-bin x polarization structure of one core
    terms = {}
    for tb in "SL":
        for p in "HV":
            terms[(ModeLabel("1", p, tb), ModeLabel("1'", p, tb))] = 0.5
    s = TwoPhotonState(terms)
    assert s.norm == pytest.approx(1.0, abs=1e-15)
    assert normalize(s).norm == pytest.approx(1.0, abs=1e-15)


def test_normalize_random_against_sum_of_squares(rng):
    s = random_state(rng, 8, normalized=False)
    ref = sum(abs(a) ** 2 for a in s.amplitudes.values())
    out = normalize(s)
    assert out.norm == pytest.approx(1.0, abs=1e-12)
    for pair, a in s.amplitudes.items():
        assert out[pair] == pytest.approx(a / np.sqrt(ref), abs=1e-12)


def test_normalize_zero_raises():
    with pytest.raises(ZeroState):
        normalize(TwoPhotonState({}))


def test_probability_examples():
    assert probability(PHI_PLUS, Projector.onto((H1, H1p))) == pytest.approx(0.5)
    assert probability(PHI_PLUS, Projector.onto((H1, V1p))) == pytest.approx(0.0)
    path = TwoPhotonState({(ModeLabel("3"), ModeLabel("3'")): 2**-0.5, (ModeLabel("4"), ModeLabel("4'")): -2**-0.5})
    assert probability(path, Projector.onto((ModeLabel("3"), ModeLabel("3'")))) == pytest.approx(0.5)


def test_probability_structure_mismatch():
    with pytest.raises(BasisError):
        probability(PHI_PLUS, Projector.onto((ModeLabel("1", "H", "S"), ModeLabel("1'", "H", "S"))))


def test_projector_idempotent_hermitian(rng):
    kets = [random_state(rng, 5) for _ in range(3)]
    P = Projector(kets).matrix
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.allclose(P, P.conj().T, atol=1e-12)


def test_fidelity_examples():
    target = build_target_state(4)
    rho = DensityOperator.from_pure(target)
    assert fidelity_with_pure(rho, target) == pytest.approx(1.0, abs=1e-12)
    basis = [(ModeLabel(a, p), ModeLabel(b, q)) for a in "1234" for b in ("1'", "2'", "3'", "4'")
             for p in "HV" for q in "HV"]
    # same-pair subspace: 4 core pairs x 4 polarization pairs
    basis = [x for x in basis if x[0].core + "'" == x[1].core]
    assert len(basis) == 16
    assert fidelity_with_pure(DensityOperator.maximally_mixed(basis), target) == pytest.approx(1 / 16)


def test_werner_fidelity():
    basis = [(a, b) for a in (H1, V1) for b in (H1p, V1p)]
    rho = mix(DensityOperator.from_pure(PHI_PLUS, basis), DensityOperator.maximally_mixed(basis), 0.9)
    assert fidelity_with_pure(rho, PHI_PLUS) == pytest.approx(0.925, abs=1e-12)
    # cross-check by explicit matrix arithmetic
    v = np.array([1, 0, 0, 1]) / np.sqrt(2)
    m = 0.9 * np.outer(v, v) + 0.1 * np.eye(4) / 4
    assert v @ m @ v == pytest.approx(0.925, abs=1e-12)


def test_fidelity_errors():
    rho = DensityOperator.from_pure(PHI_PLUS)
    with pytest.raises(RangeError):
        fidelity_with_pure(rho, PHI_PLUS.scaled(2))
    with pytest.raises(BasisError):
        fidelity_with_pure(rho, TwoPhotonState({(H1, V1p): 1.0}))


def test_mix_examples():
    basis = [(a, b) for a in (H1, V1) for b in (H1p, V1p)]
    hh = DensityOperator.from_pure(TwoPhotonState({(H1, H1p): 1}), basis)
    vv = DensityOperator.from_pure(TwoPhotonState({(V1, V1p): 1}), basis)
    assert np.allclose(mix(hh, vv, 1).matrix, hh.matrix)
    assert np.allclose(mix(hh, vv, 0).matrix, vv.matrix)
    assert np.allclose(mix(hh, vv, 0.5).matrix, np.diag([0.5, 0, 0, 0.5]))
    with pytest.raises(RangeError):
        mix(hh, vv, 1.5)


def test_density_validation():
    basis = [(H1, H1p), (V1, V1p)]
    with pytest.raises(RangeError):
        DensityOperator(basis, [[0.5, 0.7], [0.7, 0.5]])    # negative eigenvalue
    with pytest.raises(RangeError):
        DensityOperator(basis, [[0.5, 0.1j], [0.1j, 0.5]])  # not Hermitian
    with pytest.raises(RangeError):
        DensityOperator(basis, [[0.8, 0], [0, 0.8]])        # trace > 1


def test_local_phase_on_long_bin():
    # per-core Franson state with the interferometer phase on Bob's long bin
    terms = {}
    for tb in "SL":
        for p in "HV":
            terms[(ModeLabel("1", p, tb), ModeLabel("1'", p, tb))] = 0.5
    s = TwoPhotonState(terms)
    phi = 0.7
    labels = [ModeLabel("1'", p, tb) for p in "HV" for tb in "SL"]
    U = np.diag([np.exp(1j * phi) if lab.timebin == "L" else 1 for lab in labels])
    out = apply_local_unitary(s, "B", LocalOperator.on_subspace(U, labels))
    for (a, b), amp in out.amplitudes.items():
        expected = 0.5 * (np.exp(1j * phi) if b.timebin == "L" else 1)
        assert amp == pytest.approx(expected, abs=1e-15)


def test_hwp_22_5_maps_h_to_diagonal():
    s = TwoPhotonState({(H1, H1p): 1.0})
    out = apply_local_unitary(s, "A", hwp_jones(np.pi / 8))
    assert out[(H1, H1p)] == pytest.approx(2**-0.5, abs=1e-15)
    assert out[(V1, H1p)] == pytest.approx(2**-0.5, abs=1e-15)


def test_identity_unitary_unchanged():
    out = apply_local_unitary(PHI_PLUS, 0, np.eye(2))
    assert out.amplitudes == PHI_PLUS.amplitudes


def test_non_unitary_rejected():
    with pytest.raises(UnitarityError):
        apply_local_unitary(PHI_PLUS, "A", np.diag([1.0, 0.5]))
    with pytest.raises(UnitarityError):
        apply_local_unitary(PHI_PLUS, "A", LocalOperator(lambda lab: [(lab, 1.0)]))


# --- properties ---------------------------------------------------------------

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_norm_preserved_under_random_unitary(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng, int(rng.integers(1, 12)), normalized=False)
    out = apply_local_unitary(s, "AB"[seed % 2], random_unitary(rng, 2))
    assert abs(out.norm - s.norm) < 1e-12


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_complete_projectors_sum_to_norm(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng, 6, normalized=False)
    total = sum(probability(s, Projector.onto(p)) for p in s.support)
    assert total == pytest.approx(s.norm, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(seeds, st.floats(0, 1))
def test_fidelity_linear_in_mixture(seed, w):
    rng = np.random.default_rng(seed)
    t, other = random_state(rng, 6), random_state(rng, 4)
    basis = tuple(dict.fromkeys(t.support + other.support))
    rho = DensityOperator.from_pure(t, basis)
    sigma = DensityOperator.from_pure(other, basis)
    expected = w * fidelity_with_pure(rho, t) + (1 - w) * fidelity_with_pure(sigma, t)
    assert fidelity_with_pure(mix(rho, sigma, w), t) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_from_pure_self_fidelity(seed):
    s = random_state(np.random.default_rng(seed), 8)
    assert fidelity_with_pure(DensityOperator.from_pure(s), s) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_unitary_on_density_preserves_trace(seed):
    rng = np.random.default_rng(seed)
    rho = DensityOperator.from_pure(random_state(rng, 8))
    U = random_unitary(rng, 2)
    op = LocalOperator.on_pol(U)
    out = apply_local(rho, op, op)
    assert out.trace == pytest.approx(rho.trace, abs=1e-12)
