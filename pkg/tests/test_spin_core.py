import json

import numpy as np
import pytest

from spinforge import spin_core as sc
from spinforge.spin_core import (DickeKet, SpinLength, TwoEnsembleKet,
                                 apply_collective, coherent_state,
                                 collective_matrix, collective_sparse,
                                 expectation, rotate_y, rotate_z,
                                 state_from_json, state_to_json, wigner_d_y)


def test_spin_length_basics():
    S = SpinLength(5)  # S = 5/2
    assert S.value == 2.5
    assert S.dim == 6
    assert np.allclose(S.m_values, [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5])
    assert SpinLength.from_value(0.5).twice_S == 1
    with pytest.raises(ValueError):
        SpinLength(-2)
    with pytest.raises(ValueError):
        SpinLength.from_value(0.3)


def test_coherent_state_stretched_z():
    st = coherent_state(SpinLength(4), (0.0, 0.0, 1.0))
    amps = np.zeros(5)
    amps[-1] = 1.0
    assert np.allclose(st.amps, amps)


def test_coherent_state_half_spin_x():
    st = coherent_state(SpinLength(1), (1.0, 0.0, 0.0))
    # (|down> + |up>)/sqrt(2) up to a global phase
    ref = np.array([1.0, 1.0]) / np.sqrt(2)
    phase = st.amps[0] / ref[0]
    assert np.allclose(st.amps, phase * ref, atol=1e-12)
    assert abs(abs(phase) - 1) < 1e-12


def test_coherent_state_isotropic_transverse_noise():
    S = SpinLength(10)  # S = 5
    st = coherent_state(S, (1.0, 0.0, 0.0))
    Sy = collective_sparse("Sy", S)
    Sz = collective_sparse("Sz", S)
    vy = expectation(st, Sy @ Sy).real - expectation(st, "Sy").real ** 2
    vz = expectation(st, Sz @ Sz).real - expectation(st, "Sz").real ** 2
    assert abs(vy - 2.5) < 1e-10
    assert abs(vz - 2.5) < 1e-10
    assert abs(expectation(st, "Sx").real - 5.0) < 1e-10


def test_lowering_annihilates_bottom():
    ket = DickeKet(SpinLength(2), [1.0, 0.0, 0.0])  # S=1, m=-1
    out = apply_collective("S-", ket)
    assert np.allclose(out.amps, 0.0)


def test_casimir_eigenvalue():
    S = SpinLength(7)
    for k in range(S.dim):
        amps = np.zeros(S.dim)
        amps[k] = 1.0
        out = apply_collective("S2", DickeKet(S, amps))
        assert np.allclose(out.amps, S.value * (S.value + 1) * amps)


@pytest.mark.parametrize("twice_S", [2, 6, 14, 20])
def test_spsm_on_coherent_x(twice_S):
    # matrix-evaluation oracle: <S+S-> = S(S+1) - S/2 on the x coherent state
    S = SpinLength(twice_S)
    st = coherent_state(S, (1.0, 0.0, 0.0))
    val = expectation(st, "S+S-").real
    s = S.value
    assert abs(val - (s * (s + 1) - s / 2)) < 1e-9
    # identity <S+S-> = <S^2 - Sz^2 + Sz>
    Sz = collective_matrix("Sz", S)
    alt = (s * (s + 1) - expectation(st, Sz @ Sz) + expectation(st, "Sz")).real
    assert abs(val - alt) < 1e-9


def test_rotate_y_identity_and_flip():
    S = SpinLength(9)
    st = coherent_state(S, (1.0, 0.0, 0.0))
    same = rotate_y(st, 0.0)
    assert np.allclose(same.amps, st.amps)
    flipped = rotate_y(st, np.pi)
    assert abs(expectation(flipped, "Sx").real + S.value) < 1e-10
    assert abs(flipped.norm - 1.0) < 1e-12


def test_rotate_y_half_turn_from_z():
    S = SpinLength(8)
    amps = np.zeros(S.dim)
    amps[-1] = 1.0
    st = rotate_y(DickeKet(S, amps), np.pi / 2)
    ref = coherent_state(S, (1.0, 0.0, 0.0))
    assert np.allclose(st.amps, ref.amps, atol=1e-12)


@pytest.mark.parametrize("twice_S,phi", [(1, 0.3), (10, 1.1), (45, -0.7),
                                         (100, 2.4)])
def test_wigner_d_vs_expm_oracle(twice_S, phi):
    d1 = wigner_d_y(twice_S, phi)
    d2 = sc._rotate_y_expm(twice_S, phi)
    assert np.max(np.abs(d1 - d2)) < 1e-10


def test_rotation_roundtrip():
    rng = np.random.default_rng(3)
    S = SpinLength(21)
    amps = rng.standard_normal(S.dim) + 1j * rng.standard_normal(S.dim)
    ket = DickeKet(S, amps / np.linalg.norm(amps))
    back = rotate_y(rotate_y(ket, 0.83), -0.83)
    assert np.max(np.abs(back.amps - ket.amps)) < 1e-10


def test_commutation_property():
    rng = np.random.default_rng(11)
    for _ in range(25):
        twice_S = int(rng.integers(1, 16))
        S = SpinLength(twice_S)
        amps = rng.standard_normal(S.dim) + 1j * rng.standard_normal(S.dim)
        ket = DickeKet(S, amps / np.linalg.norm(amps))
        Sx = collective_matrix("Sx", S)
        Sy = collective_matrix("Sy", S)
        comm = Sx @ Sy - Sy @ Sx
        lhs = expectation(ket, comm)
        rhs = 1j * expectation(ket, "Sz")
        assert abs(lhs - rhs) < 1e-12


def _tss_state(N):
    j = SpinLength(N // 2)  # per-ensemble spin N/4
    a = coherent_state(j, (1.0, 0.0, 0.0)).amps
    b = coherent_state(j, (-1.0, 0.0, 0.0)).amps
    return TwoEnsembleKet(j, j, np.outer(a, b))


def test_back_to_back_expectations():
    N = 16
    st = _tss_state(N)
    assert abs(expectation(st, "Sx", "sum")) < 1e-10
    assert abs(expectation(st, "S+", "sum")) < 1e-10
    # The initial lab coherence is exactly N/4 (the headline order-of-
    # magnitude statement ~N/2 counts only the diagonal single-atom terms;
    # the cross terms subtract N/4). The factor-N reduction against the
    # fully coherent pair is exact: (N/2)(N/2+1)/2 over N/4 gives N+1.
    val = expectation(st, "S+S-").real
    assert abs(val - N / 4) < 1e-10
    j = st.S1
    a = coherent_state(j, (1.0, 0.0, 0.0)).amps
    coh = TwoEnsembleKet(j, j, np.outer(a, a))
    ratio = expectation(coh, "S+S-").real / val
    assert abs(ratio - (N + 1)) < 1e-8


def test_two_ensemble_selectors():
    st = _tss_state(8)
    s1 = expectation(st, "Sx", 1).real
    s2 = expectation(st, "Sx", 2).real
    assert abs(s1 - 2.0) < 1e-10 and abs(s2 + 2.0) < 1e-10
    with pytest.raises(ValueError):
        apply_collective("Sx", st, 3)


def test_rotate_z_phases():
    S = SpinLength(6)
    st = coherent_state(S, (1.0, 0.0, 0.0))
    rot = rotate_z(st, np.pi / 2)
    assert abs(expectation(rot, "Sy").real - S.value) < 1e-10


def test_json_roundtrip_all_bases():
    st = coherent_state(SpinLength(5), (0.0, 1.0, 0.0))
    back = state_from_json(state_to_json(st))
    assert np.allclose(back.amps, st.amps)
    two = _tss_state(8)
    back = state_from_json(state_to_json(two))
    assert np.allclose(back.amps, two.amps)
    payload = json.loads(state_to_json(st))
    assert payload["basis"] == "dicke" and payload["twice_S"] == 5
    from spinforge.spin_core import TruncatedManifoldKet
    blocks = ((SpinLength(4), np.array([0, 0, 0, 0, 1.0])),
              (SpinLength(2), np.zeros(3)))
    tk = TruncatedManifoldKet(4, 2, blocks)
    back = state_from_json(state_to_json(tk))
    assert back.N == 4 and len(back.blocks) == 2
    assert np.allclose(back.blocks[0][1], blocks[0][1])


def test_states_immutable():
    st = coherent_state(SpinLength(4), (1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        st.amps[0] = 1.0


def test_norm_validation():
    st = DickeKet(SpinLength(2), [0.5, 0.0, 0.0])
    with pytest.raises(ValueError):
        st.require_normalized()
    assert abs(st.normalized().norm - 1.0) < 1e-14
