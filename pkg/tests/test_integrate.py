import numpy as np
import pytest

from spinforge.integrate import (DormandPrince45, IntegrationError, rk4_fixed,
                                 solve_to)


def test_exponential_decay():
    out = solve_to(lambda t, y: -y, np.array([1.0 + 0j]), [0.0, 1.0, 2.0],
                   rtol=1e-10, atol=1e-12)
    assert abs(out[1][0] - np.exp(-1)) < 1e-9
    assert abs(out[2][0] - np.exp(-2)) < 1e-9


def test_complex_oscillator_phase():
    w = 7.3
    out = solve_to(lambda t, y: -1j * w * y, np.array([1.0 + 0j]),
                   np.linspace(0, 2.0, 5), rtol=1e-11, atol=1e-13)
    assert abs(out[-1][0] - np.exp(-1j * w * 2.0)) < 1e-8


def test_matrix_state_shape():
    y0 = np.eye(3, dtype=complex)
    out = solve_to(lambda t, y: -0.5 * y, y0, [0.0, 0.4])
    assert out[1].shape == (3, 3)
    assert np.allclose(out[1], np.exp(-0.2) * np.eye(3), atol=1e-8)


def test_outputs_exactly_on_grid():
    grid = np.array([0.0, 0.123456, 0.3, 1.0])
    collected = []
    solve_to(lambda t, y: -y, np.array([1.0 + 0j]), grid,
             callback=lambda i, t, y: collected.append(t))
    assert collected == list(grid)


def test_hermite_interpolant_accuracy():
    st = DormandPrince45(lambda t, y: -1j * y, 0.0, np.array([1.0 + 0j]),
                         rtol=1e-10, atol=1e-12)
    st.step()
    mid = 0.5 * (st.t_old + st.t)
    est = st.interpolate(mid)[0]
    assert abs(est - np.exp(-1j * mid)) < 1e-10


def test_step_underflow_raises():
    def bad(t, y):
        return y / max(1e-300, (0.5 - t))  # non-integrable blowup at t=0.5
    with pytest.raises(IntegrationError) as err:
        solve_to(bad, np.array([1.0 + 0j]), [0.0, 1.0])
    assert err.value.last_good_t < 0.5 + 1e-6


def test_grid_validation():
    with pytest.raises(ValueError):
        solve_to(lambda t, y: y, np.array([1.0]), [])
    with pytest.raises(ValueError):
        solve_to(lambda t, y: y, np.array([1.0]), [0.0, 1.0, 0.5])


def test_rk4_fixed_convergence():
    grid = [0.0, 1.0]
    errs = []
    for dt in (0.1, 0.05):
        out = rk4_fixed(lambda t, y: -y, np.array([1.0]), grid, dt)
        errs.append(abs(out[1][0] - np.exp(-1)))
    assert errs[1] < errs[0] / 12  # fourth order: ~16x per halving


def test_rk4_preserves_real_dtype():
    out = rk4_fixed(lambda t, y: -y, np.array([1.0]), [0.0, 0.5], 0.01)
    assert out[1].dtype == np.float64
