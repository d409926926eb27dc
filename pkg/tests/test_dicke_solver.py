import numpy as np
import pytest

from spinforge.analytic import (collective_emission_variance,
                                oat_exact_correlators, oat_exact_xi2)
from spinforge.dicke_solver import (DimensionError, LindbladSpec,
                                    evolve_oat_master, evolve_tss_lab,
                                    evolve_tss_master_truncated,
                                    evolve_tss_unitary_truncated,
                                    oat_mixture_number_fluct,
                                    trajectory_unravel,
                                    tss_mixture_number_fluct,
                                    xi2_batch_standard_error)


def test_oat_closed_form_match_exact_path():
    N, tau = 40, 0.07
    res = evolve_oat_master(N, 1.0, 0.0, np.array([0.0, tau]))
    vy, vz, b = oat_exact_correlators(N / 2, tau)
    assert abs(res.records["var_Sy"][1] - vy) < 1e-10 * max(1, vy)
    assert abs(res.records["var_T2"][1] - vz) < 1e-10
    assert abs(res.records["B"][1] - b) < 1e-10 * max(1, abs(b))


def test_oat_rk45_dense_matches_closed_form_at_gamma_zero():
    # explicit integrator run (no jump) against the exact correlators
    N, tau = 30, 0.05
    grid = np.array([0.0, tau])
    res = evolve_oat_master(N, 1.0, 0.0, grid, method="dense", rtol=1e-11,
                            atol=1e-13)
    vy, vz, b = oat_exact_correlators(N / 2, tau)
    assert abs(res.records["var_Sy"][1] - vy) < 1e-8
    assert abs(res.records["B"][1] - b) < 1e-8


def test_oat_xi2_exact_equals_analytic_oracle():
    for N in (60, 200):
        taus = np.linspace(0.0, 2 * 3 ** (1 / 6) * N ** (-2 / 3), 25)
        res = evolve_oat_master(N, 1.0, 0.0, taus)
        series = res.squeezing_series(N)
        for i, tau in enumerate(taus):
            if tau == 0:
                continue
            ref = oat_exact_xi2(N, tau, "proj")
            assert abs(series[i].xi2_proj - ref) < 1e-8 * max(ref, 1e-3)


def test_zero_rates_static():
    res = evolve_oat_master(24, 0.0, 0.0, np.linspace(0, 1, 5), method="exact")
    for c in ("Sx", "var_Sy", "var_T2", "B", "SpSm"):
        assert np.allclose(res.records[c], res.records[c][0], atol=1e-12)


def test_dense_vs_diagonals_dissipative():
    grid = np.linspace(0, 0.25, 6)
    r1 = evolve_oat_master(16, 1.0, 0.08, grid, method="dense",
                           rtol=1e-10, atol=1e-12)
    r2 = evolve_oat_master(16, 1.0, 0.08, grid, method="diagonals",
                           rtol=1e-10, atol=1e-12)
    for c in ("Sx", "Sy", "T2", "var_Sy", "var_T2", "B", "SpSm"):
        assert np.max(np.abs(r1.records[c] - r2.records[c])) < 1e-8


def test_density_matrix_diagnostics():
    grid = np.linspace(0, 0.3, 4)
    res = evolve_oat_master(14, 1.0, 0.1, grid, method="dense")
    assert res.meta["max_trace_drift"] < 1e-8
    assert np.min(res.records["min_eig"]) > -1e-8
    assert np.max(res.records["herm_defect"]) < 1e-10


def test_added_variance_follows_emission_law():
    # leading-order added inversion noise; the asymptotic law carries a 1/N
    # slope correction, so the check stays in the verified window
    N, g = 20, 0.05
    grid = np.linspace(0.0, 0.25, 11)
    res = evolve_oat_master(N, 1.0, g, grid, method="diagonals")
    added = res.records["var_T2"] - N / 4
    law = collective_emission_variance(N, g, grid)
    ratio = added[1:] / law[1:]
    assert np.all(np.abs(ratio - 1) < 0.10)
    # the t -> 0 ratio approaches 1 - 1/N
    assert abs(ratio[0] - (1 - 1 / N)) < 0.01


def test_hamiltonian_variant_same_xi2():
    # chi S+S- differs from chi Sz^2 by a frame rotation and a twist-sign
    # flip; the squeezing parameter is identical
    N = 30
    grid = np.linspace(0, 0.1, 6)
    r1 = evolve_oat_master(N, 1.0, 0.05, grid, method="dense",
                           hamiltonian="oat_twist_only", rtol=1e-10)
    r2 = evolve_oat_master(N, 1.0, 0.05, grid, method="dense",
                           hamiltonian="oat", rtol=1e-10)
    s1 = [s.xi2_proj for s in r1.squeezing_series(N)]
    s2 = [s.xi2_proj for s in r2.squeezing_series(N)]
    assert np.max(np.abs(np.array(s1) - s2)) < 1e-8


def test_dense_cap_error_directs_elsewhere():
    with pytest.raises(DimensionError) as err:
        evolve_oat_master(1200, 1.0, 0.1, [0.0, 0.1], method="dense")
    assert "trajectory_unravel" in str(err.value)


def test_grid_validation():
    with pytest.raises(ValueError):
        evolve_oat_master(10, 1.0, 0.0, [])
    with pytest.raises(ValueError):
        evolve_oat_master(10, 1.0, -0.1, [0.0, 0.1])


# ---------------------------------------------------------------------------
# two-spin solvers
# ---------------------------------------------------------------------------

def test_tss_initial_state():
    res = evolve_tss_unitary_truncated(40, 5, 1.0, np.array([0.0]))
    s = res.squeezing_series(40)[0]
    assert abs(s.xi2 - 1.0) < 1e-9
    assert res.manifold_populations[0, 0] > 1 - 1e-10
    assert abs(res.records["SpSm"][0] - 10.0) < 1e-9  # N/4


def test_tss_truncation_convergence():
    # n_trunc = 4 optimum within 0.2 dB of n_trunc = 6
    N = 100
    tau = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
    grid = np.linspace(0.4 * tau, 1.6 * tau, 30)
    vals = {}
    for n in (4, 6):
        res = evolve_tss_unitary_truncated(N, n, 1.0, grid, integrator="expm")
        vals[n], _, _ = res.min_xi2(N, "xi2_proj")
    assert abs(10 * np.log10(vals[4] / vals[6])) < 0.2


def test_tss_energy_and_norm_conservation():
    N = 60
    grid = np.linspace(0, 0.05, 6)
    res = evolve_tss_unitary_truncated(N, 5, 1.0, grid, rtol=1e-11, atol=1e-13)
    e = res.records["energy"]
    assert np.max(np.abs(e - e[0])) < 1e-7 * max(1.0, abs(e[0]))
    assert np.max(np.abs(res.records["trace_drift"])) < 1e-9


def test_truncated_full_blocks_vs_lab_frame():
    # complete manifold set + exact rotated Hamiltonian == lab evolution
    N = 24
    grid = np.array([0.0, 0.03, 0.06])
    r1 = evolve_tss_unitary_truncated(N, 99, 1.0, grid,
                                      hamiltonian="tss_rotated_exact",
                                      rtol=1e-12, atol=1e-14)
    r2 = evolve_tss_lab(N, 1.0, 0.0, grid, rtol=1e-12, atol=1e-14)
    for c in ("Sx", "Sy", "T2", "var_Sy", "var_T2", "B", "SpSm"):
        assert np.max(np.abs(r1.records[c] - r2.records[c])) < 1e-8


def test_truncation_beyond_leakage_is_exact():
    # with more blocks than the dynamics populates, truncation is exact
    N = 24
    grid = np.array([0.0, 0.02])
    r1 = evolve_tss_unitary_truncated(N, 13, 1.0, grid, rtol=1e-12, atol=1e-14)
    r2 = evolve_tss_unitary_truncated(N, 8, 1.0, grid, rtol=1e-12, atol=1e-14)
    for c in ("var_Sy", "var_T2", "B"):
        assert np.max(np.abs(r1.records[c] - r2.records[c])) < 1e-8


def test_unconverged_flag_warns():
    N = 40
    tau = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
    with pytest.warns(UserWarning, match="n_trunc"):
        res = evolve_tss_unitary_truncated(N, 3, 1.0, [0.0, tau],
                                           convergence_tol=1e-8)
    assert res.meta["unconverged"]


def test_lab_magnetization_conservation():
    res = evolve_tss_lab(16, 1.0, 0.0, np.linspace(0, 0.1, 5))
    sz = res.records["Sz_total_lab"]
    assert np.max(np.abs(sz - sz[0])) < 1e-9
    # with emission the total inversion decays
    res = evolve_tss_lab(16, 1.0, 0.5, np.linspace(0, 0.1, 5), method="dense")
    assert res.records["Sz_total_lab"][-1] < -0.01


def test_master_gamma_zero_reduces_to_unitary():
    N = 30
    grid = np.linspace(0, 0.05, 4)
    r1 = evolve_tss_master_truncated(N, 5, 1.0, 0.0, grid)
    r2 = evolve_tss_unitary_truncated(N, 5, 1.0, grid)
    for c in ("var_Sy", "var_T2", "B"):
        assert np.max(np.abs(r1.records[c] - r2.records[c])) < 1e-10


def test_dense_master_vs_trajectories():
    N, g = 20, 0.2
    grid = np.linspace(0, 0.12, 5)
    dense = evolve_tss_master_truncated(N, 5, 1.0, g, grid, method="dense",
                                        rtol=1e-9)
    traj = evolve_tss_master_truncated(N, 5, 1.0, g, grid, method="traj",
                                       n_traj=600, seed=3)
    for c in ("Sy", "T2", "var_Sy", "var_T2", "B"):
        scale = np.max(np.abs(dense.records[c])) + 1.0
        # 600 trajectories: agreement within a few standard errors
        assert np.max(np.abs(dense.records[c] - traj.records[c])) < 0.2 * scale
    v_d, _, i = dense.min_xi2(N, "xi2_proj")
    v_t, _, _ = traj.min_xi2(N, "xi2_proj")
    se = xi2_batch_standard_error(traj, N, i, "xi2_proj")
    assert abs(v_d - v_t) < 4 * se + 1e-4


def test_trajectory_determinism_and_jobs():
    spec = LindbladSpec("tss_rotated", ("rotated_frame_full",), 16, 1.0, 0.3)
    grid = np.linspace(0, 0.1, 4)
    r1 = trajectory_unravel(spec, None, 24, 99, grid)
    r2 = trajectory_unravel(spec, None, 24, 99, grid)
    r3 = trajectory_unravel(spec, None, 24, 99, grid, n_jobs=2)
    for c in r1.records:
        assert np.array_equal(r1.records[c], r2.records[c])
        assert np.array_equal(r1.records[c], r3.records[c])
    r4 = trajectory_unravel(spec, None, 24, 100, grid)
    assert not np.array_equal(r1.records["var_Sy"], r4.records["var_Sy"])


def test_single_trajectory_gamma_zero_is_unitary():
    spec = LindbladSpec("tss_rotated", (), 20, 1.0, 0.0)
    grid = np.linspace(0, 0.08, 4)
    r1 = trajectory_unravel(spec, None, 1, 0, grid, rtol=1e-11, atol=1e-13)
    r2 = evolve_tss_unitary_truncated(20, 5, 1.0, grid, rtol=1e-11, atol=1e-13)
    for c in ("var_Sy", "var_T2", "B"):
        assert np.max(np.abs(r1.records[c] - r2.records[c])) < 1e-8


def test_oat_trajectories_match_master():
    N, g = 20, 0.1
    grid = np.linspace(0, 0.2, 5)
    master = evolve_oat_master(N, 1.0, g, grid, method="diagonals")
    spec = LindbladSpec("oat_twist_only", ("collective_emission",), N, 1.0, g)
    traj = trajectory_unravel(spec, None, 2000, 17, grid)
    for c in ("Sy", "T2", "var_Sy", "var_T2", "B"):
        diff = np.abs(master.records[c] - traj.records[c])
        scale = np.max(np.abs(master.records[c])) + 1.0
        assert np.max(diff) < 0.08 * scale  # ~3 standard errors at n=2000


def test_mixture_zero_width_equals_plain():
    grid = np.linspace(0, 0.1, 4)
    plain = evolve_oat_master(30, 1.0, 0.05, grid, method="diagonals")
    mix = oat_mixture_number_fluct(30, 0.0, 1.0, 0.05, grid)
    for c in ("var_Sy", "var_T2", "B"):
        assert np.max(np.abs(plain.records[c] - mix.records[c])) < 1e-10
    tmix = tss_mixture_number_fluct(24, 0.0, 1.0, 0.0, grid)
    tp = evolve_tss_unitary_truncated(24, 5, 1.0, grid, integrator="expm")
    for c in ("var_Sy", "var_T2", "B"):
        assert np.max(np.abs(tmix.records[c] - tp.records[c])) < 1e-9


def test_mixture_moments_are_weighted_averages():
    grid = np.array([0.0, 0.05])
    mix = oat_mixture_number_fluct(20, 1.0, 1.0, 0.0, grid, n_sigma=2.0)
    parts = []
    from spinforge.dicke_solver import _gaussian_integer_weights
    offs, w = _gaussian_integer_weights(1.0, 2.0, 1)
    for d in offs:
        parts.append(evolve_oat_master(20 + int(d), 1.0, 0.0, grid))
    ref = sum(wi * p.records["m_Sy2"][1] for wi, p in zip(w, parts))
    assert abs(mix.records["m_Sy2"][1] - ref) < 1e-12


def test_csv_and_metadata_roundtrip(tmp_path):
    res = evolve_oat_master(12, 1.0, 0.05, np.linspace(0, 0.2, 4),
                            method="diagonals")
    p = tmp_path / "data.csv"
    res.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("time,")
    assert len(lines) == 5
    res.write_metadata(tmp_path / "meta.json")
    import json
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["N"] == 12 and meta["columns"]


def test_lindblad_spec_validation():
    with pytest.raises(ValueError):
        LindbladSpec("bogus", (), 10, 1.0)
    with pytest.raises(ValueError):
        LindbladSpec("oat", ("bogus",), 10, 1.0)
    with pytest.raises(ValueError):
        LindbladSpec("oat", (), 10, 1.0, -0.1)
    with pytest.raises(ValueError):
        LindbladSpec("tss_rotated", (), 9, 1.0)
