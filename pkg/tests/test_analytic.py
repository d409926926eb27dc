import numpy as np
import pytest

from spinforge import analytic
from spinforge.analytic import (CavityRates, DecoherenceChannels,
                                audit_fixed_ratio_coefficient, cavity_rates,
                                collective_emission_variance, cooperativity,
                                golden_section, number_fluctuation_bound,
                                oat_exact_correlators, oat_exact_xi2,
                                oat_mean_spin_x, optimum_fixed_ratio,
                                optimum_over_detuning, xi2_model)

TWOPI = 2 * np.pi


def test_cavity_rates_arithmetic():
    cr = cavity_rates(g=1.0, kappa=2.0, delta_c=1.0)
    assert abs(cr.chi - 0.5) < 1e-14
    assert abs(cr.Gamma - 1.0) < 1e-14
    assert abs(cr.gamma_over_chi - 2.0) < 1e-14


def test_cavity_rates_large_detuning():
    g, kappa, dc = 1.3, 2.1, 5e4
    cr = cavity_rates(g, kappa, dc)
    assert abs(cr.chi - g**2 / dc) / (g**2 / dc) < 1e-8
    assert abs(cr.Gamma - g**2 * kappa / dc**2) / (g**2 * kappa / dc**2) < 1e-8


def test_cavity_rates_resonant_and_degenerate():
    cr = cavity_rates(1.0, 2.0, 0.0)
    assert cr.chi == 0.0 and cr.Gamma > 0
    with pytest.raises(ValueError):
        cavity_rates(1.0, 0.0, 0.0)


def test_exact_correlators_at_zero():
    vy, vz, b = oat_exact_correlators(5.0, 0.0)
    assert vy == 2.5 and vz == 2.5 and b == 0.0


def test_exact_cross_correlator_small_spin():
    _, _, b = oat_exact_correlators(2.0, 0.1)
    assert abs(b - 6 * np.sin(0.1) * np.cos(0.1) ** 2) < 1e-14


def test_exact_correlators_vs_dense_evolution():
    # matrix-exponential oracle over random (S, tau), 1e-10 agreement
    from spinforge.spin_core import SpinLength, coherent_state, collective_matrix
    rng = np.random.default_rng(23)
    for _ in range(8):
        twice_S = int(rng.integers(2, 201))
        S = twice_S / 2.0
        tau = float(rng.uniform(0.0, 1.0))
        sl = SpinLength(twice_S)
        st = coherent_state(sl, (1.0, 0.0, 0.0))
        m = sl.m_values
        psi = st.amps * np.exp(-1j * tau * m**2)
        Sy = collective_matrix("Sy", sl)
        Sz = collective_matrix("Sz", sl)
        ev = lambda O: np.vdot(psi, O @ psi).real
        vy = ev(Sy @ Sy) - ev(Sy) ** 2
        vz = ev(Sz @ Sz) - ev(Sz) ** 2
        b = ev(Sy @ Sz + Sz @ Sy) - 2 * ev(Sy) * ev(Sz)
        ry, rz, rb = oat_exact_correlators(S, tau)
        scale = max(1.0, abs(ry))
        assert abs(vy - ry) < 1e-10 * scale
        assert abs(vz - rz) < 1e-10
        assert abs(b - rb) < 1e-10 * scale
        Sx = collective_matrix("Sx", sl)
        assert abs(ev(Sx) - oat_mean_spin_x(S, tau)) < 1e-10 * max(1.0, S)


def test_var_sz_constant():
    _, vz, _ = oat_exact_correlators(50.0, np.linspace(0, 1, 7))
    assert np.allclose(vz, 25.0)


def test_collective_emission_variance_limits():
    assert collective_emission_variance(100, 0.1, 0.0) == 0.0
    t = 1e-6
    lead = collective_emission_variance(100, 0.1, t)
    assert abs(lead - 100**2 * 0.1 * t / 4) / lead < 1e-3
    assert collective_emission_variance(100, 0.1, 1e9) < 1e-12
    with pytest.raises(ValueError):
        collective_emission_variance(10, 0.1, -1.0)


def test_xi2_model_oat_ideal():
    pred = xi2_model("oat", DecoherenceChannels(), 1000, 1.0, 0.0, 1e-2)
    beta = 1000 * 1e-4 / 2
    assert abs(pred.terms["shear"] - 1 / (2 * 1000 * beta)) < 1e-15
    assert abs(pred.terms["curvature"] - (2 / 3) * beta**2) < 1e-15
    assert abs(pred.total - sum(pred.terms.values())) < 1e-15


def test_xi2_model_term_additivity():
    t = 3e-3
    with_g = xi2_model("oat", DecoherenceChannels(Gamma=0.1), 1000, 1.0, 0.0, t)
    without = xi2_model("oat", DecoherenceChannels(), 1000, 1.0, 0.0, t)
    assert abs((with_g.total - without.total) - 0.1 * 1000 * t) < 1e-12


def test_xi2_model_tss_forms():
    t = 5e-3
    chan = DecoherenceChannels(Gamma=0.05)
    plain = xi2_model("tss", chan, 400, 1.0, 0.0, t)
    assert "collective_suppressed" in plain.terms
    beta = 400 * t**2 / 2
    assert abs(plain.terms["collective_suppressed"]
               - 0.05 * 400 * t / (2 * 400 * beta)) < 1e-14
    assert abs(plain.terms["curvature"] - (14 / 9) * beta**2) < 1e-14
    bare = xi2_model("tss", chan, 400, 1.0, 0.0, t, tss_curvature="bare")
    assert abs(bare.terms["curvature"] - (2 / 3) * beta**2) < 1e-14
    bp = xi2_model("tss", chan, 400, 1.0, 0.0, t, tss_form="beta_prime")
    bprime = beta + 0.05 * t / 2
    assert abs(bp.terms["shear"] - 1 / (2 * 400 * bprime)) < 1e-14


def test_xi2_model_single_particle_channels():
    t = 2e-3
    gs = xi2_model("oat", DecoherenceChannels(Gamma=0.01, gamma_s=0.3),
                   1000, 1.0, 0.0, t)
    assert abs(gs.terms["single_particle"] - 2 * 0.3 * t) < 1e-15  # sm form
    gs_main = xi2_model("oat", DecoherenceChannels(gamma_s=0.3), 1000, 1.0,
                        0.0, t, oat_gamma_s_coeff="main")
    assert abs(gs_main.terms["single_particle"] - 0.3 * t) < 1e-15
    gel = xi2_model("oat", DecoherenceChannels(Gamma=0.01, gamma_el=0.3),
                    1000, 1.0, 0.0, t)
    beta = 1000 * t**2 / 2
    assert abs(gel.terms["single_particle"] - 2 * 0.3 * t / (2 * 1000 * beta)) < 1e-15
    gel_x = xi2_model("oat", DecoherenceChannels(Gamma=0.01, gamma_el=0.3),
                      1000, 1.0, 0.0, t, gamma_el_form="exact")
    assert abs(gel_x.terms["shear_dephased"]
               - np.exp(2 * 0.3 * t) / (2 * 1000 * beta)) < 1e-15
    tss_s = xi2_model("tss", DecoherenceChannels(Gamma=0.01, gamma_s=0.3),
                      1000, 1.0, 0.0, t)
    assert abs(tss_s.terms["single_particle"] - 0.3 * t) < 1e-15
    assert "curvature" not in tss_s.terms  # dropped with an active channel


def test_xi2_model_number_fluct():
    t = 2e-3
    base = xi2_model("tss", DecoherenceChannels(), 10_000, 1.0, 0.0, t)
    fluc = xi2_model("tss", DecoherenceChannels(), 10_000, 1.0, 50.0, t)
    beta = 10_000 * t**2 / 2
    assert abs(fluc.terms["number_fluct"] - 16 * 2500 * beta / 10_000) < 1e-12
    # sigma_n = 0 reduces exactly to the ideal model
    zero = xi2_model("tss", DecoherenceChannels(), 10_000, 1.0, 0.0, t)
    assert abs(zero.total - base.total) < 1e-16


def test_xi2_model_errors_and_flags():
    with pytest.raises(ValueError):
        xi2_model("oat", DecoherenceChannels(gamma_s=1.0, gamma_el=1.0),
                  100, 1.0, 0.0, 1e-3)
    with pytest.raises(ValueError):
        xi2_model("oat", DecoherenceChannels(), 100, 1.0, 5.0, 1e-3)
    with pytest.raises(ValueError):
        xi2_model("tss", DecoherenceChannels(Gamma=0.1), 100, 1.0, 5.0, 1e-3)
    pred = xi2_model("oat", DecoherenceChannels(Gamma=1.0), 100, 1.0, 0.0, 0.5)
    assert not pred.validity["GammaNt_ok"]


def test_dimensional_invariance():
    # scaling (chi, Gamma, gamma, 1/t) by lambda leaves xi^2 unchanged
    rng = np.random.default_rng(2)
    for _ in range(10):
        lam = float(rng.uniform(0.1, 30))
        t = float(rng.uniform(1e-4, 1e-2))
        chan1 = DecoherenceChannels(Gamma=0.02, gamma_s=0.4)
        chan2 = DecoherenceChannels(Gamma=0.02 * lam, gamma_s=0.4 * lam)
        p1 = xi2_model("tss", chan1, 500, 1.0, 0.0, t)
        p2 = xi2_model("tss", chan2, 500, lam, 0.0, t / lam)
        assert abs(p1.total - p2.total) < 1e-12 * p1.total


def test_optimum_fixed_ratio_oat():
    opt = optimum_fixed_ratio("oat", 123456, 0.1)
    assert abs(opt.xi2_opt - 3 / 2 ** (2 / 3) * 0.1 ** (2 / 3)) < 1e-14
    assert abs(opt.xi2_opt - 0.4072) < 1e-3  # ~ -3.9 dB, any N
    assert opt.numeric_rel_err < 1e-6 and not opt.discrepancy
    ideal = optimum_fixed_ratio("oat", 1000, 0.0)
    assert abs(ideal.xi2_opt - (9 / 8) ** (1 / 3) * 1000 ** (-2 / 3)) < 1e-14
    assert abs(ideal.t_opt - 3 ** (1 / 6) * 1000 ** (-2 / 3)) < 1e-14
    assert ideal.numeric_rel_err < 1e-6


def test_optimum_fixed_ratio_tss():
    opt = optimum_fixed_ratio("tss", 1000, 0.1)
    ideal = 21 ** (1 / 3) / (2 * 1000 ** (2 / 3))
    corr = (7 / 9) ** (1 / 6) * 0.1 * 1000 ** (-1 / 3)
    assert abs(opt.xi2_opt - (ideal + corr)) < 1e-14
    assert abs(opt.xi2_opt - 0.0234) < 2e-4  # ~ -16.3 dB
    assert opt.numeric_rel_err < 1e-6
    assert abs(ideal - 0.0138) < 1e-4
    assert abs(corr - 0.00959) < 2e-5
    z = optimum_fixed_ratio("tss", 1000, 0.0)
    assert abs(z.xi2_opt - ideal) < 1e-14


def test_detuning_optima_closed_forms():
    kappa = TWOPI * 145e3
    gam = TWOPI * 0.1
    eta = 0.0041
    g = np.sqrt(eta * kappa * gam / 4)
    tss = optimum_over_detuning("tss", "gamma_s", 1e5, g, kappa, gam)
    assert abs(tss.xi2_opt - np.sqrt(24 / 410)) < 1e-12
    assert abs(tss.xi2_dB + 6.2) < 0.1
    assert tss.numeric_rel_err < 1e-6 and not tss.discrepancy
    oat = optimum_over_detuning("oat", "gamma_s", 1e5, g, kappa, gam)
    assert abs(oat.xi2_opt - 6 * 410 ** (-1 / 3)) < 1e-12
    assert abs(oat.xi2_dB + 0.9) < 0.05
    assert oat.numeric_rel_err < 1e-6 and not oat.discrepancy
    # fundamental linewidth limit
    gam_f = TWOPI * 1e-3
    g_f = np.sqrt(0.41 * kappa * gam_f / 4)
    tss_f = optimum_over_detuning("tss", "gamma_s", 1e5, g_f, kappa, gam_f)
    oat_f = optimum_over_detuning("oat", "gamma_s", 1e5, g_f, kappa, gam_f)
    assert abs(tss_f.xi2_dB + 16.2) < 0.1
    assert abs(oat_f.xi2_dB + 7.6) < 0.05
    # dephasing channel: identical formula for tss
    tss_el = optimum_over_detuning("tss", "gamma_el", 1e5, g, kappa, gam)
    assert abs(tss_el.xi2_opt - tss.xi2_opt) < 1e-14
    oat_el = optimum_over_detuning("oat", "gamma_el", 1e5, g, kappa, gam)
    ref = np.sqrt(4 * (41 + 13 * np.sqrt(10)) / (3 * 0.0041 * 1e5))
    assert abs(oat_el.xi2_opt - ref) < 1e-12
    assert oat_el.numeric_rel_err < 1e-6
    assert abs(oat_el.t_opt - (np.sqrt(10) - 1) / (6 * gam)) < 1e-12


def test_detuning_optima_structure():
    kappa, gam = TWOPI * 145e3, TWOPI * 0.1
    g = np.sqrt(0.0041 * kappa * gam / 4)
    tss = optimum_over_detuning("tss", "gamma_s", 1e5, g, kappa, gam)
    eta_n = cooperativity(g, kappa, gam) * 1e5
    assert abs(tss.t_opt - (2 / gam) * np.sqrt(2 / (3 * eta_n))) < 1e-9
    assert abs(tss.delta_c_opt - kappa * (eta_n / 18) ** 0.25) < 1e-3
    # the printed detuning balances Gamma N t = sqrt(3)
    assert tss.diagnostics["balance_rel_err"] < 1e-12
    oat = optimum_over_detuning("oat", "gamma_s", 1e5, g, kappa, gam)
    assert abs(oat.t_opt - (eta_n) ** (-1 / 3) / gam) < 1e-9
    assert abs(oat.delta_c_opt - (kappa / 2) * np.sqrt(eta_n / 2)) < 1e-3
    with pytest.raises(ValueError):
        optimum_over_detuning("oat", "gamma_s", 100, 0.0, kappa, gam)


def test_number_fluctuation_bound():
    b = number_fluctuation_bound(10_000, 100 / np.sqrt(2))
    assert abs(b.xi2_bound - 0.01) < 1e-12
    assert abs(10 * np.log10(b.xi2_bound) + 20) < 1e-9
    assert abs(10 * np.log10(b.xi2_ideal) + 25.27) < 0.01
    assert b.fluctuation_limited and b.crossover
    z = number_fluctuation_bound(10_000, 0.0)
    assert z.xi2_bound == 0.0 and not z.fluctuation_limited and not z.crossover
    edge = number_fluctuation_bound(1000, 10.0)  # N^(1/3) = 10
    assert edge.crossover


def test_known_inconsistency_audit():
    rep = audit_fixed_ratio_coefficient()
    assert rep["main_text_confirmed"]
    assert rep["alternative_ruled_out"]
    assert rep["rel_err_main_text"] < 1e-6
    assert rep["rel_err_alternative"] > 0.3


def test_golden_section():
    x, fx = golden_section(lambda x: (x - 1.7) ** 2 + 3.0, -5, 5, tol=1e-13)
    assert abs(x - 1.7) < 1e-7 and abs(fx - 3.0) < 1e-13


def test_oat_exact_xi2_normalizations():
    tau = 3 ** (1 / 6) * 300 ** (-2 / 3)
    proj = oat_exact_xi2(300, tau, "proj")
    win = oat_exact_xi2(300, tau, "wineland")
    assert win > proj  # the spin length has decayed
    with pytest.raises(ValueError):
        oat_exact_xi2(300, tau, "bogus")
