"""Scenario execution: backend dispatch, run directories, sweeps."""

import json
import os
import time
import traceback

import numpy as np

from .. import analytic
from ..dicke_solver import (LindbladSpec, evolve_oat_master,
                            evolve_tss_master_truncated,
                            evolve_tss_unitary_truncated, _json_default,
                            oat_mixture_number_fluct, trajectory_unravel,
                            tss_mixture_number_fluct)
from ..twa import MeanFieldParams, WignerSamplingSpec, run_twa
from .config import ScenarioConfig
from .plotting import plot_curves

__all__ = ["run_scenario", "run_sweep", "write_run_csv"]


def write_run_csv(path, res, N):
    """Run CSV: correlator columns plus the squeezing report per time row.

    dB values are stored at full precision; rounding happens only at
    presentation. Identical seeds reproduce this file bit for bit.
    """
    series = res.squeezing_series(N)
    cols = res.columns()
    sq_cols = ["V_minus", "V_plus", "psi_min", "xi2", "xi2_dB", "spin_length",
               "xi2_proj", "xi2_proj_dB"]
    with open(path, "w") as f:
        f.write("time," + ",".join(cols + sq_cols))
        if res.manifold_populations is not None:
            f.write("," + ",".join(
                f"pop_block_{k}"
                for k in range(res.manifold_populations.shape[1])))
        f.write("\n")
        for i, t in enumerate(res.times):
            row = [f"{t:.17g}"]
            row += [f"{res.records[c][i]:.17g}" for c in cols]
            row += [f"{getattr(series[i], c):.17g}" for c in sq_cols]
            if res.manifold_populations is not None:
                row += [f"{p:.17g}" for p in res.manifold_populations[i]]
            f.write(",".join(row) + "\n")


def _analytic_series(cfg: ScenarioConfig, t_grid):
    chi, Gamma = cfg.rates()
    channels = analytic.DecoherenceChannels(Gamma=Gamma, gamma_s=cfg.gamma_s,
                                            gamma_el=cfg.gamma_el)
    rows = []
    for t in t_grid:
        if t <= 0:
            rows.append(None)
            continue
        rows.append(analytic.xi2_model(cfg.protocol, channels, cfg.N, chi,
                                       cfg.sigma_n, t / abs(chi)))
    return rows


def _write_analytic_csv(path, t_grid, rows):
    term_names = sorted({k for r in rows if r is not None for k in r.terms})
    with open(path, "w") as f:
        f.write("time,xi2,xi2_dB,beta," + ",".join(term_names) + "\n")
        for t, r in zip(t_grid, rows):
            if r is None:
                continue
            terms = [f"{r.terms.get(k, 0.0):.17g}" for k in term_names]
            f.write(f"{t:.17g},{r.total:.17g},{10 * np.log10(r.total):.17g},"
                    f"{r.beta:.17g}," + ",".join(terms) + "\n")


def _dispatch(cfg: ScenarioConfig, n_jobs):
    chi, Gamma = cfg.rates()
    t_grid = cfg.time_grid() / abs(chi)          # absolute time
    t_unit = "1/chi" if cfg.g is None else "s"
    if cfg.backend == "ed":
        if cfg.protocol == "oat":
            if cfg.delta_N > 0:
                return oat_mixture_number_fluct(cfg.N, cfg.sigma_n, chi, Gamma,
                                                t_grid, time_unit=t_unit)
            method = "auto" if cfg.N <= 200 or Gamma == 0 else "diagonals"
            return evolve_oat_master(cfg.N, chi, Gamma, t_grid, method=method,
                                     time_unit=t_unit,
                                     hamiltonian=cfg.hamiltonian or "oat_twist_only")
        if cfg.delta_N > 0:
            return tss_mixture_number_fluct(
                cfg.N, cfg.sigma_n, chi, Gamma, t_grid, n_trunc=cfg.n_trunc,
                variant=cfg.variant, n_traj=max(8, cfg.n_traj), seed=cfg.seed,
                n_jobs=n_jobs, time_unit=t_unit)
        if Gamma == 0:
            return evolve_tss_unitary_truncated(
                cfg.N, cfg.n_trunc, chi, t_grid, integrator="expm",
                hamiltonian=cfg.hamiltonian or "tss_rotated", time_unit=t_unit)
        # dense rho fits memory up to dim ~ 4000 but its runtime grows as
        # dim^2 per step; keep it for small systems and unravel beyond
        method = "auto" if cfg.N <= 240 else "traj"
        return evolve_tss_master_truncated(
            cfg.N, cfg.n_trunc, chi, Gamma, t_grid, variant=cfg.variant,
            hamiltonian=cfg.hamiltonian or "tss_rotated", method=method,
            n_traj=cfg.n_traj, seed=cfg.seed, n_jobs=n_jobs, time_unit=t_unit)
    if cfg.backend == "traj":
        if cfg.protocol == "oat":
            spec = LindbladSpec(cfg.hamiltonian or "oat_twist_only",
                                ("collective_emission",) if Gamma > 0 else (),
                                cfg.N, chi, Gamma)
        else:
            jump = ("rotated_frame_full" if cfg.variant == "full"
                    else "rotated_frame_sy_only")
            spec = LindbladSpec(cfg.hamiltonian or "tss_rotated",
                                (jump,) if Gamma > 0 else (), cfg.N, chi,
                                Gamma, cfg.n_trunc)
        return trajectory_unravel(spec, None, cfg.n_traj, cfg.seed, t_grid,
                                  n_jobs=n_jobs, time_unit=t_unit)
    if cfg.backend == "twa":
        spec = WignerSamplingSpec(cfg.N, cfg.protocol, cfg.sigma_n,
                                  cfg.n_traj, cfg.seed)
        params = MeanFieldParams(chi, cfg.gamma_s, cfg.gamma_el)
        return run_twa(spec, params, t_grid)
    raise ValueError(f"backend {cfg.backend!r} has no time-series dispatch")


def run_scenario(cfg: ScenarioConfig, out_dir=None, n_jobs=1):
    """Execute one scenario into a run directory.

    Writes resolved_config.json, data.csv (correlators + squeezing report),
    meta.json (parameters, seeds, tolerances, diagnostics, wall time),
    summary.json (optima), and figure.svg when plotting is on. Outputs are
    deterministic for fixed seeds.
    """
    cfg.validate()
    out_dir = out_dir or os.path.join("runs", cfg.label or cfg.content_hash())
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(cfg.resolved(), f, indent=2, default=_json_default)

    data_csv = os.path.join(out_dir, "data.csv")
    if cfg.backend == "analytic":
        t_grid = cfg.time_grid()
        rows = _analytic_series(cfg, t_grid)
        _write_analytic_csv(data_csv, t_grid, rows)
        finite = [(t, r.total) for t, r in zip(t_grid, rows) if r is not None]
        tmin, xmin = min(finite, key=lambda p: p[1])
        summary = {"min_xi2": xmin, "min_xi2_dB": 10 * np.log10(xmin),
                   "t_opt": tmin, "backend": "analytic"}
        meta = {"backend": "analytic", "wall_time_s": time.time() - t0}
        ycol = "xi2_dB"
    else:
        res = _dispatch(cfg, n_jobs)
        write_run_csv(data_csv, res, cfg.N)
        res.write_metadata(os.path.join(out_dir, "meta.json"))
        xw, tw, _ = res.min_xi2(cfg.N, "xi2")
        xp, tp, _ = res.min_xi2(cfg.N, "xi2_proj")
        summary = {"min_xi2": xw, "min_xi2_dB": 10 * np.log10(xw), "t_opt": tw,
                   "min_xi2_proj": xp, "min_xi2_proj_dB": 10 * np.log10(xp),
                   "t_opt_proj": tp, "backend": cfg.backend,
                   "unconverged": res.meta.get("unconverged", False)}
        meta = res.meta
        ycol = "xi2_proj_dB"
    summary["wall_time_s"] = time.time() - t0
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, default=_json_default)
    if cfg.plot:
        try:
            plot_curves(os.path.join(out_dir, "figure.svg"),
                        [{"file": data_csv, "x": "time", "y": ycol,
                          "label": cfg.label or cfg.protocol}],
                        xlabel=f"time ({'s' if cfg.g is not None else '1/chi'})",
                        ylabel="squeezing (dB)",
                        title=f"{cfg.protocol} N={cfg.N}")
        except Exception:  # plotting must not kill a finished run
            traceback.print_exc()
    return out_dir


def _sweep_point(args):
    cfg_dict, out_dir, n_jobs = args
    cfg = ScenarioConfig(**cfg_dict)
    try:
        run_scenario(cfg, out_dir=out_dir, n_jobs=n_jobs)
        return (out_dir, None)
    except Exception as exc:
        return (out_dir, f"{type(exc).__name__}: {exc}")


def run_sweep(spec, out_root=None, n_jobs=1):
    """Run every point of a sweep; points are independent and resumable.

    A point directory is named by the scenario content hash; completed points
    (summary.json present) are skipped. Failures are recorded per point in
    the aggregate; the aggregate CSV collects each point's optima.
    """
    import dataclasses
    spec.validate()
    out_root = out_root or "sweep"
    os.makedirs(out_root, exist_ok=True)
    configs = spec.point_configs()
    jobs, done = [], []
    for cfg in configs:
        pdir = os.path.join(out_root, f"point-{cfg.content_hash()}")
        if os.path.exists(os.path.join(pdir, "summary.json")):
            done.append((cfg, pdir, None))
            continue
        jobs.append((dataclasses.asdict(cfg), pdir, 1))
    if n_jobs > 1 and len(jobs) > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    failures = {}
    by_dir = {pdir: err for pdir, err in results}
    agg_path = os.path.join(out_root, "aggregate.csv")
    with open(agg_path, "w") as f:
        f.write(f"{spec.axis},min_xi2,min_xi2_dB,t_opt,min_xi2_proj,"
                "min_xi2_proj_dB,point_dir\n")
        for cfg, value in zip(configs, spec.values):
            pdir = os.path.join(out_root, f"point-{cfg.content_hash()}")
            err = by_dir.get(pdir)
            if err:
                failures[pdir] = err
                continue
            with open(os.path.join(pdir, "summary.json")) as g:
                s = json.load(g)
            f.write(f"{value:.17g},{s['min_xi2']:.17g},{s['min_xi2_dB']:.17g},"
                    f"{s['t_opt']:.17g},{s.get('min_xi2_proj', s['min_xi2']):.17g},"
                    f"{s.get('min_xi2_proj_dB', s['min_xi2_dB']):.17g},{pdir}\n")
    if failures:
        with open(os.path.join(out_root, "failures.json"), "w") as f:
            json.dump(failures, f, indent=2)
    return agg_path, failures
