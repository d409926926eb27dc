import numpy as np
import pytest
from scipy.linalg import expm

from spinforge.spin_core import (SpinLength, TwoEnsembleKet, coherent_state,
                                 collective_matrix, rotate_y)
from spinforge.squeezing import (QuadratureCorrelators, cavity_field_estimate,
                                 correlators_from_state,
                                 correlators_perpendicular, min_variance_scan,
                                 squeezing_parameter, squeezing_report,
                                 tss_frame_map, variances_from_correlators)


def test_isotropic_correlators():
    c = QuadratureCorrelators(A=0.0, B=0.0, C=10.0)
    vm, vp, nu = variances_from_correlators(c)
    assert vm == 5.0 and vp == 5.0 and nu == 0.0


def test_stated_arithmetic():
    c = QuadratureCorrelators(A=3.0, B=4.0, C=10.0)
    vm, vp, nu = variances_from_correlators(c)
    assert abs(vm - 2.5) < 1e-14
    assert abs(vp - 7.5) < 1e-14


def test_invalid_correlators_raise():
    with pytest.raises(ValueError):
        QuadratureCorrelators(A=5.0, B=0.0, C=4.0)
    with pytest.raises(ValueError):
        QuadratureCorrelators(A=3.0, B=4.0, C=4.9)


from hypothesis import given, settings
from hypothesis import strategies as st


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-20, 20), b=st.floats(-20, 20),
       slack=st.floats(0.01, 3.0))
def test_brute_force_scan_matches_formula(a, b, slack):
    corr = QuadratureCorrelators(A=a, B=b, C=np.hypot(a, b) * (1 + slack) + 1e-6)
    vm, vp, nu = variances_from_correlators(corr)
    v_scan, psi_scan = min_variance_scan(corr, n=20001)
    assert abs(v_scan - vm) < 1e-6 * max(1.0, abs(vm))
    # minimum sits at psi = pi/2 - nu (mod pi)
    psi_pred = (np.pi / 2 - nu) % np.pi
    d = abs(psi_scan - psi_pred) % np.pi
    assert min(d, np.pi - d) < 5e-4 or abs(vp - vm) < 1e-9


def test_wineland_parameter():
    xi2, db = squeezing_parameter(V_minus=25.0, spin_length=50.0, N=100)
    assert abs(xi2 - 1.0) < 1e-14 and abs(db) < 1e-10
    with pytest.raises(ValueError):
        squeezing_parameter(1.0, 0.0, 10)


def test_coherent_state_report():
    st = coherent_state(SpinLength(40), (1.0, 0.0, 0.0))
    rep = squeezing_report(correlators_from_state(st), 40)
    assert abs(rep.xi2 - 1.0) < 1e-9
    assert abs(rep.xi2_proj - 1.0) < 1e-9
    assert abs(rep.xi2_dB) < 1e-8


def _evolved_lab_state(N, tau):
    j = SpinLength(N // 2)
    a = coherent_state(j, (1.0, 0.0, 0.0)).amps
    b = coherent_state(j, (-1.0, 0.0, 0.0)).amps
    psi0 = np.kron(a, b)
    eye = np.eye(j.dim)
    Sp = (np.kron(collective_matrix("S+", j), eye)
          + np.kron(eye, collective_matrix("S+", j)))
    H = Sp @ Sp.conj().T
    psi = expm(-1j * tau * H) @ psi0
    return TwoEnsembleKet(j, j, psi.reshape(j.dim, j.dim))


def test_frame_map_paths_agree():
    st = _evolved_lab_state(40, 0.02)
    c_state = tss_frame_map(st, path="state")
    c_corr = tss_frame_map(st, path="correlator")
    r1 = squeezing_report(c_state, 40)
    r2 = squeezing_report(c_corr, 40)
    assert abs(r1.xi2 - r2.xi2) < 1e-8
    assert abs(r1.V_minus - r2.V_minus) < 1e-8


def test_frame_map_no_evolution_is_stretched():
    st = _evolved_lab_state(24, 0.0)
    c = tss_frame_map(st, path="state")
    assert abs(c.mean_spin[0] - 12.0) < 1e-10  # |N/2> along x
    rep = squeezing_report(c, 24)
    assert abs(rep.xi2 - 1.0) < 1e-9


def test_double_pi_rotation_identity():
    st = _evolved_lab_state(16, 0.03)
    twice = rotate_y(rotate_y(st, np.pi, ensemble=2), np.pi, ensemble=2)
    # 2pi rotation of an integer-spin ensemble is exactly the identity
    assert np.max(np.abs(twice.amps - st.amps)) < 1e-10


def test_frame_map_input_validation():
    st = coherent_state(SpinLength(4), (1.0, 0.0, 0.0))
    with pytest.raises(TypeError):
        tss_frame_map(st)


def test_perpendicular_frame_reduces_to_fixed_pair():
    # mean spin along +x: identical to the (Sy, Sz) machinery
    cov = np.array([[0.1, 0.02, 0.01], [0.02, 3.0, 1.2], [0.01, 1.2, 2.0]])
    c = correlators_perpendicular([7.0, 0.0, 0.0], cov)
    assert abs(c.A - (3.0 - 2.0)) < 1e-12
    assert abs(c.B - 2 * 1.2) < 1e-12
    assert abs(c.C - 5.0) < 1e-12


def test_perpendicular_frame_rotation_invariance():
    # tilting mean and covariance together leaves (V-, V+) unchanged
    rng = np.random.default_rng(5)
    M = rng.normal(size=(3, 3))
    cov = M @ M.T
    mean = np.array([9.0, 0.0, 0.0])
    base = correlators_perpendicular(mean, cov)
    th = 0.4
    R = np.array([[np.cos(th), 0, np.sin(th)], [0, 1, 0],
                  [-np.sin(th), 0, np.cos(th)]])
    tilted = correlators_perpendicular(R @ mean, R @ cov @ R.T)
    v1 = variances_from_correlators(base)
    v2 = variances_from_correlators(tilted)
    assert abs(v1[0] - v2[0]) < 1e-10
    assert abs(v1[1] - v2[1]) < 1e-10


def test_cavity_field_estimate():
    N = 16
    st = _evolved_lab_state(N, 0.0)
    a, n = cavity_field_estimate(st, g=2.0, kappa=3.0, delta_c=5.0)
    pref = 2.0 / (2 * 5.0 + 1j * 3.0)
    assert abs(a) < 1e-10  # <S-> = 0 for back-to-back spins
    assert abs(n - abs(pref) ** 2 * 4.0 * (N / 4)) < 1e-9
    coh = coherent_state(SpinLength(N), (1.0, 0.0, 0.0))
    a2, n2 = cavity_field_estimate(coh, 2.0, 3.0, 5.0)
    s = N / 2
    assert abs(n2 - abs(pref) ** 2 * 4.0 * (s * (s + 1) - s / 2)) < 1e-9
    assert abs(a2 - pref * 2.0 * s) < 1e-9
    with pytest.raises(ZeroDivisionError):
        cavity_field_estimate(coh, 1.0, 0.0, 0.0)
