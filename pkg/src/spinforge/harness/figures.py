"""Figure-reproduction presets.

Each preset writes its data series as CSV files, renders an SVG from those
CSVs, and records its declared acceptance tolerance plus any desk-scale
substitution in meta.json. Identical seeds give bit-identical CSVs.
"""

import json
import os
import time

import numpy as np

from .. import analytic
from ..dicke_solver import (LindbladSpec, _json_default, evolve_oat_master,
                            evolve_tss_master_truncated,
                            evolve_tss_unitary_truncated,
                            oat_mixture_number_fluct, trajectory_unravel,
                            tss_mixture_number_fluct)
from ..twa import MeanFieldParams, WignerSamplingSpec, run_twa
from .plotting import plot_curves
from .runner import write_run_csv

__all__ = ["PRESETS", "preset_figure"]


def _xi2_curve_csv(path, res, N):
    write_run_csv(path, res, N)
    return path


def _min_proj(res, N):
    v, t, i = res.min_xi2(N, "xi2_proj")
    return v, t, i


def _tau_grid(lo_frac, hi_frac, t_opt, n):
    return np.linspace(lo_frac * t_opt, hi_frac * t_opt, n)


def _oat_gamma_grid(N, r, n=70):
    t_opt = (2.0 / (N**3 * r)) ** (1 / 3)
    return np.linspace(0.0, 2.6 * t_opt, n)


def fig2a(out, n_jobs=1, full=False, seed=20260811):
    """Squeezing vs time, N = 1000, ideal and Gamma = 0.1 chi, both protocols."""
    N, r = 1000, 0.1
    tau_oat = 3 ** (1 / 6) * N ** (-2 / 3)
    tau_tss = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
    grid = np.linspace(0.0, 2.2 * tau_tss, 90)
    files = {}
    res = evolve_oat_master(N, 1.0, 0.0, grid, method="exact")
    files["oat_ideal"] = _xi2_curve_csv(os.path.join(out, "oat_ideal.csv"), res, N)
    res = evolve_oat_master(N, 1.0, r, grid, method="diagonals")
    files["oat_diss"] = _xi2_curve_csv(os.path.join(out, "oat_diss.csv"), res, N)
    res = evolve_tss_unitary_truncated(N, 5, 1.0, grid, integrator="expm")
    files["tss_ideal"] = _xi2_curve_csv(os.path.join(out, "tss_ideal.csv"), res, N)
    n_traj = 512 if full else 96
    res = evolve_tss_master_truncated(N, 5, 1.0, r, grid, variant="full",
                                      method="traj", n_traj=n_traj, seed=seed,
                                      n_jobs=n_jobs)
    files["tss_diss"] = _xi2_curve_csv(os.path.join(out, "tss_diss.csv"), res, N)
    plot_curves(os.path.join(out, "fig2a.svg"), [
        {"file": files["oat_ideal"], "x": "time", "y": "xi2_proj_dB",
         "label": "oat ideal", "alpha": 0.4},
        {"file": files["tss_ideal"], "x": "time", "y": "xi2_proj_dB",
         "label": "tss ideal", "alpha": 0.4, "style": "--"},
        {"file": files["oat_diss"], "x": "time", "y": "xi2_proj_dB",
         "label": "oat, G=0.1chi"},
        {"file": files["tss_diss"], "x": "time", "y": "xi2_proj_dB",
         "label": "tss, G=0.1chi", "style": "--"},
    ], xlabel="chi t", ylabel="xi^2 (dB)", title="N = 1000")
    mins = {k: min(np.array(_read_col(v, "xi2_proj_dB"))) for k, v in files.items()}
    return {"files": files, "minima_dB": mins, "n_traj": n_traj,
            "tolerance": "tss optimum >= 10 dB below oat optimum; oat optimum "
                         "within 1.5 dB of the -3.9 dB fixed-ratio bound"}


def _read_col(path, col):
    from .plotting import read_csv_columns
    return read_csv_columns(path)[col]


def fig2inset(out, n_jobs=1, full=False, seed=0):
    """Optimal squeezing vs Gamma/chi: oat at N = 200 and 1000 (exact),
    two-spin bound and fixed-ratio oat bound as analytic references."""
    ratios = np.geomspace(1e-3, 1e-1, 9 if full else 7)
    rows = {200: [], 1000: []}
    for N in rows:
        for r in ratios:
            res = evolve_oat_master(N, 1.0, r, _oat_gamma_grid(N, r),
                                    method="diagonals")
            v, t, _ = _min_proj(res, N)
            rows[N].append((r, v, 10 * np.log10(v), t))
    files = {}
    for N, data in rows.items():
        p = os.path.join(out, f"oat_optima_N{N}.csv")
        with open(p, "w") as f:
            f.write("gamma_over_chi,xi2,xi2_dB,t_opt\n")
            for r, v, db, t in data:
                f.write(f"{r:.17g},{v:.17g},{db:.17g},{t:.17g}\n")
        files[f"oat_N{N}"] = p
    p = os.path.join(out, "analytic_bounds.csv")
    with open(p, "w") as f:
        f.write("gamma_over_chi,oat_bound_dB,tss_bound_dB_N1000\n")
        for r in ratios:
            oat = analytic.optimum_fixed_ratio("oat", 1000, r).xi2_opt
            tss = analytic.optimum_fixed_ratio("tss", 1000, r).xi2_opt
            f.write(f"{r:.17g},{10 * np.log10(oat):.17g},"
                    f"{10 * np.log10(tss):.17g}\n")
    files["bounds"] = p
    plot_curves(os.path.join(out, "fig2inset.svg"), [
        {"file": files["oat_N1000"], "x": "gamma_over_chi", "y": "xi2_dB",
         "label": "oat N=1000", "marker": "o"},
        {"file": files["oat_N200"], "x": "gamma_over_chi", "y": "xi2_dB",
         "label": "oat N=200", "style": "-.", "marker": "s"},
        {"file": files["bounds"], "x": "gamma_over_chi", "y": "oat_bound_dB",
         "label": "oat bound", "alpha": 0.5},
        {"file": files["bounds"], "x": "gamma_over_chi",
         "y": "tss_bound_dB_N1000", "label": "tss bound N=1000",
         "style": "--", "alpha": 0.7},
    ], xlabel="Gamma/chi", ylabel="optimal xi^2 (dB)", xscale="log")
    return {"files": files,
            "tolerance": "log-log slope of the oat optima = 2/3 +- 0.07; "
                         "N=200 vs N=1000 within 1 dB"}


def figS1(out, n_jobs=1, full=False, seed=11):
    """Ideal squeezing vs N: analytic scalings, exact points, twa points."""
    N_ed = [100, 200, 400, 700, 1000]
    rows_ed = []
    for N in N_ed:
        tau = 3 ** (1 / 6) * N ** (-2 / 3)
        res = evolve_oat_master(N, 1.0, 0.0, _tau_grid(0.5, 1.6, tau, 60),
                                method="exact")
        v_oat, _, _ = _min_proj(res, N)
        tau = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
        res = evolve_tss_unitary_truncated(N, 5, 1.0,
                                           _tau_grid(0.5, 1.6, tau, 60),
                                           integrator="expm")
        v_tss, _, _ = _min_proj(res, N)
        rows_ed.append((N, v_oat, v_tss))
    N_twa = [1000, 10_000, 100_000]
    n_traj = 100_000 if full else 20_000
    rows_twa = []
    for N in N_twa:
        out_rows = []
        for proto in ("oat", "tss"):
            tau = ((3 if proto == "oat" else 9 / 7) ** (1 / 6)
                   * N ** (-2 / 3) * (1 if proto == "oat" else 1.0))
            grid = _tau_grid(0.5, 1.6, tau, 40)
            res = run_twa(WignerSamplingSpec(N, proto, 0.0, n_traj, seed),
                          MeanFieldParams(1.0), grid)
            v, _, _ = _min_proj(res, N)
            out_rows.append(v)
        rows_twa.append((N, out_rows[0], out_rows[1]))
    files = {}
    p = os.path.join(out, "ed_points.csv")
    with open(p, "w") as f:
        f.write("N,oat_xi2,oat_dB,tss_xi2,tss_dB,offset_dB\n")
        for N, a, b in rows_ed:
            f.write(f"{N},{a:.17g},{10 * np.log10(a):.17g},{b:.17g},"
                    f"{10 * np.log10(b):.17g},"
                    f"{10 * np.log10(b / a):.17g}\n")
    files["ed"] = p
    p = os.path.join(out, "twa_points.csv")
    with open(p, "w") as f:
        f.write("N,oat_xi2,oat_dB,tss_xi2,tss_dB\n")
        for N, a, b in rows_twa:
            f.write(f"{N},{a:.17g},{10 * np.log10(a):.17g},{b:.17g},"
                    f"{10 * np.log10(b):.17g}\n")
    files["twa"] = p
    p = os.path.join(out, "analytic_lines.csv")
    Ns = np.geomspace(100, 2e5, 60)
    with open(p, "w") as f:
        f.write("N,oat_dB,tss_dB\n")
        for N in Ns:
            f.write(f"{N:.17g},"
                    f"{10 * np.log10((9 / 8) ** (1 / 3) * N ** (-2 / 3)):.17g},"
                    f"{10 * np.log10(21 ** (1 / 3) / 2 * N ** (-2 / 3)):.17g}\n")
    files["analytic"] = p
    plot_curves(os.path.join(out, "figS1.svg"), [
        {"file": files["analytic"], "x": "N", "y": "oat_dB", "label": "oat scaling",
         "alpha": 0.4},
        {"file": files["analytic"], "x": "N", "y": "tss_dB", "label": "tss scaling",
         "alpha": 0.4, "style": "--"},
        {"file": files["twa"], "x": "N", "y": "oat_dB", "label": "oat twa",
         "style": "", "marker": "o"},
        {"file": files["twa"], "x": "N", "y": "tss_dB", "label": "tss twa",
         "style": "", "marker": "s"},
        {"file": files["ed"], "x": "N", "y": "oat_dB", "label": "oat exact",
         "style": ":", "marker": "."},
        {"file": files["ed"], "x": "N", "y": "tss_dB", "label": "tss exact",
         "style": ":", "marker": "."},
    ], xlabel="N", ylabel="optimal xi^2 (dB)", xscale="log")
    offsets = [10 * np.log10(b / a) for _, a, b in rows_ed]
    return {"files": files, "ed_offsets_dB": offsets, "n_traj": n_traj,
            "tolerance": "tss parallel to oat with offset 1.2 +- 0.4 dB"}


def figS2(out, n_jobs=1, full=False, seed=5150):
    """Jump-operator approximation check at N = 200 (desk-scale stand-in for
    N = 1000): complete vs Sy-only dissipator, and the fully reduced model."""
    N = 200
    ratios = [0.3, 1.0] if not full else [0.1, 0.3, 1.0]
    n_traj = 384 if full else 144
    tau = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
    grid = np.linspace(0.0, 2.2 * tau, 40)
    combos = {"full": ("tss_rotated", "full"),
              "sy_jump": ("tss_rotated", "sy_only"),
              "sy_both": ("tss_sy_only", "sy_only")}
    files = {}
    optima = {}
    for r in ratios:
        for name, (ham, var) in combos.items():
            res = evolve_tss_master_truncated(
                N, 8, 1.0, r, grid, variant=var, hamiltonian=ham,
                method="traj", n_traj=n_traj, seed=seed, n_jobs=n_jobs)
            key = f"{name}_r{r:g}"
            files[key] = _xi2_curve_csv(os.path.join(out, key + ".csv"), res, N)
            v, t, _ = _min_proj(res, N)
            optima[key] = 10 * np.log10(v)
    p = os.path.join(out, "optima.csv")
    with open(p, "w") as f:
        f.write("gamma_over_chi," + ",".join(combos) + "\n")
        for r in ratios:
            f.write(f"{r:.17g}," + ",".join(
                f"{optima[f'{name}_r{r:g}']:.17g}" for name in combos) + "\n")
    files["optima"] = p
    curves = [{"file": files[f"{name}_r{ratios[-1]:g}"], "x": "time",
               "y": "xi2_proj_dB", "label": name,
               "style": {"full": "-", "sy_jump": "--", "sy_both": ":"}[name]}
              for name in combos]
    plot_curves(os.path.join(out, "figS2.svg"), curves, xlabel="chi t",
                ylabel="xi^2 (dB)",
                title=f"N={N}, Gamma/chi={ratios[-1]:g}")
    return {"files": files, "optima_dB": optima, "n_traj": n_traj,
            "desk_scale": "N=200 in place of N=1000",
            "tolerance": "full vs sy-only optimal xi^2 within 0.3 dB "
                         "for Gamma/chi <= 1"}


def figS3(out, n_jobs=1, full=False, seed=0):
    """Detuning-optimized bounds vs N for current and fundamental rates.

    The single-atom co-operativity eta = 4g^2/(kappa gamma) = 0.41 is set by
    the clock-transition linewidth gamma/2pi = 1 mHz, which fixes g; the
    channel rates gamma_s, gamma_el then give eta_s = eta (gamma/gamma_s)
    (0.0041 at the current 0.1 Hz rates, 0.41 at the fundamental limit).
    """
    twopi = 2 * np.pi
    kappa = twopi * 145e3
    gamma_atom = twopi * 1e-3
    g = np.sqrt(0.41 * kappa * gamma_atom / 4)
    cases = {
        "current": dict(gamma_s=twopi * 0.1, gamma_el=twopi * 0.1),
        "fundamental": dict(gamma_s=gamma_atom, gamma_el=None),
    }
    Ns = np.geomspace(1e2, 1e6, 41)
    files = {}
    for case, rates in cases.items():
        p = os.path.join(out, f"{case}.csv")
        with open(p, "w") as f:
            cols = ["N", "oat_gs_dB", "tss_gs_dB"]
            if rates["gamma_el"] is not None:
                cols += ["oat_gel_dB", "tss_gel_dB"]
            f.write(",".join(cols) + "\n")
            for N in Ns:
                row = [N]
                for proto in ("oat", "tss"):
                    opt = analytic.optimum_over_detuning(proto, "gamma_s", N,
                                                         g, kappa,
                                                         rates["gamma_s"])
                    row.append(opt.xi2_dB)
                if rates["gamma_el"] is not None:
                    for proto in ("oat", "tss"):
                        opt = analytic.optimum_over_detuning(
                            proto, "gamma_el", N, g, kappa, rates["gamma_el"])
                        row.append(opt.xi2_dB)
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")
        files[case] = p
    plot_curves(os.path.join(out, "figS3.svg"), [
        {"file": files["current"], "x": "N", "y": "oat_gs_dB",
         "label": "oat, current"},
        {"file": files["current"], "x": "N", "y": "tss_gs_dB",
         "label": "tss, current", "style": "--"},
        {"file": files["fundamental"], "x": "N", "y": "oat_gs_dB",
         "label": "oat, fundamental", "alpha": 0.5},
        {"file": files["fundamental"], "x": "N", "y": "tss_gs_dB",
         "label": "tss, fundamental", "alpha": 0.5, "style": "--"},
    ], xlabel="N", ylabel="optimal xi^2 (dB)", xscale="log")
    marks = {
        "tss_current_N1e5_dB": analytic.optimum_over_detuning(
            "tss", "gamma_s", 1e5, g, kappa, twopi * 0.1).xi2_dB,
        "oat_current_N1e5_dB": analytic.optimum_over_detuning(
            "oat", "gamma_s", 1e5, g, kappa, twopi * 0.1).xi2_dB,
        "tss_fundamental_N1e5_dB": analytic.optimum_over_detuning(
            "tss", "gamma_s", 1e5, g, kappa, gamma_atom).xi2_dB,
        "oat_fundamental_N1e5_dB": analytic.optimum_over_detuning(
            "oat", "gamma_s", 1e5, g, kappa, gamma_atom).xi2_dB,
    }
    return {"files": files, "marked_points": marks,
            "tolerance": "marked points at (-6.2, -0.9) and (-16.2, -7.6) dB; "
                         "closed forms vs numeric minimization to 1e-6"}


def figS4(out, n_jobs=1, full=False, seed=97):
    """Number-fluctuation scan with the Wigner solver at N = 1e4 (and the
    1e6-atom curve replaced by N = 1e5 at desk scale)."""
    n_traj = 100_000 if full else 20_000
    Ns = [10_000, 100_000]
    files = {}
    for N in Ns:
        tau = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
        grid = _tau_grid(0.15, 1.6, tau, 50)
        dNs = np.concatenate([[0.0], np.geomspace(1.0, 1000.0, 10)])
        p = os.path.join(out, f"twa_N{N}.csv")
        with open(p, "w") as f:
            f.write("delta_N,xi2,xi2_dB,t_opt,sin2_psi,bound_xi2\n")
            for dN in dNs:
                spec = WignerSamplingSpec(N, "tss", dN / np.sqrt(2), n_traj,
                                          seed)
                res = run_twa(spec, MeanFieldParams(1.0), grid)
                v, t, i = _min_proj(res, N)
                c = res.correlators(i)
                from ..squeezing import variances_from_correlators
                _, _, nu = variances_from_correlators(c)
                psi = np.pi / 2 - nu
                dev = min(abs(psi) % np.pi, np.pi - abs(psi) % np.pi)
                bound = analytic.number_fluctuation_bound(
                    N, dN / np.sqrt(2)).xi2_bound
                f.write(f"{dN:.17g},{v:.17g},{10 * np.log10(v):.17g},"
                        f"{t:.17g},{np.sin(dev) ** 2:.17g},{bound:.17g}\n")
        files[f"N{N}"] = p
    plot_curves(os.path.join(out, "figS4.svg"), [
        {"file": files["N10000"], "x": "delta_N", "y": "xi2_dB",
         "label": "twa N=1e4", "marker": "o"},
        {"file": files["N100000"], "x": "delta_N", "y": "xi2_dB",
         "label": "twa N=1e5", "marker": "s"},
    ], xlabel="delta N", ylabel="optimal xi^2 (dB)", xscale="log")
    return {"files": files, "n_traj": n_traj,
            "desk_scale": "N = 1e5 stands in for the 1e6-atom curve",
            "tolerance": "flat within 1 dB for delta_N <= N^(1/3); within 20% "
                         "of delta_N/N for delta_N >= 10 N^(1/3)"}


def figS5(out, n_jobs=1, full=False, seed=31):
    """Number fluctuations with collective emission, exact backend, N = 200."""
    N, r = 200, 0.1
    tau = (9 / 7) ** (1 / 6) * N ** (-2 / 3)
    grid = np.linspace(0.0, 2.0 * tau, 32)
    crossover = N ** (1 / 3)
    dNs = [0.0, 2.0, 4.0, crossover] + ([8.0, 16.0] if full else [])
    n_traj = 48 if full else 12
    files = {}
    p = os.path.join(out, "tss_vs_dN.csv")
    with open(p, "w") as f:
        f.write("delta_N,tss_xi2_dB,oat_xi2_dB,advantage_dB\n")
        for dN in dNs:
            sig = dN / np.sqrt(2)
            if dN == 0:
                res = evolve_tss_master_truncated(N, 5, 1.0, r, grid,
                                                  method="traj",
                                                  n_traj=16 * n_traj,
                                                  seed=seed, n_jobs=n_jobs)
            else:
                res = tss_mixture_number_fluct(N, sig, 1.0, r, grid,
                                               n_traj=n_traj, seed=seed,
                                               n_jobs=n_jobs, step=2)
            v_tss, _, _ = _min_proj(res, N)
            res = oat_mixture_number_fluct(N, dN, 1.0, r,
                                           _oat_gamma_grid(N, r))
            v_oat, _, _ = _min_proj(res, N)
            f.write(f"{dN:.17g},{10 * np.log10(v_tss):.17g},"
                    f"{10 * np.log10(v_oat):.17g},"
                    f"{10 * np.log10(v_oat / v_tss):.17g}\n")
    files["vs_dN"] = p
    ratios = [0.1, 1.0] if not full else [0.03, 0.1, 0.3, 1.0]
    p = os.path.join(out, "tss_vs_gamma.csv")
    with open(p, "w") as f:
        f.write("gamma_over_chi,tss_dN0_dB,tss_dNcross_dB,oat_dB\n")
        for rr in ratios:
            res = evolve_tss_master_truncated(N, 5, 1.0, rr, grid,
                                              method="traj", n_traj=16 * n_traj,
                                              seed=seed + 1, n_jobs=n_jobs)
            v0, _, _ = _min_proj(res, N)
            res = tss_mixture_number_fluct(N, crossover / np.sqrt(2), 1.0, rr,
                                           grid, n_traj=n_traj, seed=seed + 2,
                                           n_jobs=n_jobs, step=2)
            vc, _, _ = _min_proj(res, N)
            res = evolve_oat_master(N, 1.0, rr, _oat_gamma_grid(N, rr),
                                    method="diagonals")
            vo, _, _ = _min_proj(res, N)
            f.write(f"{rr:.17g},{10 * np.log10(v0):.17g},"
                    f"{10 * np.log10(vc):.17g},{10 * np.log10(vo):.17g}\n")
    files["vs_gamma"] = p
    plot_curves(os.path.join(out, "figS5.svg"), [
        {"file": files["vs_dN"], "x": "delta_N", "y": "tss_xi2_dB",
         "label": "tss", "marker": "o"},
        {"file": files["vs_dN"], "x": "delta_N", "y": "oat_xi2_dB",
         "label": "oat", "marker": "s", "style": "--"},
    ], xlabel="delta N", ylabel="optimal xi^2 (dB)",
        title=f"N={N}, Gamma/chi={r}")
    return {"files": files, "n_traj_per_component": n_traj,
            "tolerance": "tss advantage >= 5 dB over oat for "
                         "delta_N <= N^(1/3) at Gamma = 0.1 chi"}


PRESETS = {
    "fig2a": (fig2a, "squeezing vs time for both protocols, N=1000, "
                     "ideal and Gamma=0.1chi"),
    "fig2inset": (fig2inset, "optimal squeezing vs Gamma/chi, oat N-invariance"),
    "figS1": (figS1, "ideal scaling with N: analytic, exact, twa"),
    "figS2": (figS2, "complete vs approximate dissipator (N=200 stand-in)"),
    "figS3": (figS3, "detuning-optimized bounds vs N"),
    "figS4": (figS4, "number-fluctuation robustness, twa"),
    "figS5": (figS5, "number fluctuations with collective emission, exact"),
}


def preset_figure(name, out_root=None, n_jobs=1, full=False, seed=None):
    """Run a named preset into a directory; returns the directory path."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    func, desc = PRESETS[name]
    out = out_root or os.path.join("figures", name)
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    kwargs = {} if seed is None else {"seed": seed}
    info = func(out, n_jobs=n_jobs, full=full, **kwargs)
    info["preset"] = name
    info["description"] = desc
    info["full"] = full
    info["wall_time_s"] = time.time() - t0
    with open(os.path.join(out, "meta.json"), "w") as f:
        json.dump(info, f, indent=2, default=_json_default)
    return out
