"""spinforge command line: run scenarios, reproduce figures, sweep, and
evaluate the analytic models.

    spinforge run CONFIG [--out DIR] [--seed S] [--jobs J] [--backend B]
    spinforge figure NAME [--out DIR] [--jobs J] [--full]
    spinforge sweep SPEC [--out DIR] [--jobs J]
    spinforge model --protocol P [--channel C] [options]

Exit code 0 only when every requested point succeeds. The environment
variable SPINFORGE_BUDGET_GIB caps dense-solver memory.
"""

import argparse
import json
import sys

import numpy as np

from .. import analytic
from .config import ConfigError, load_config, load_sweep
from .figures import PRESETS, preset_figure
from .runner import run_scenario, run_sweep


def _add_common(p):
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")


def build_parser():
    ap = argparse.ArgumentParser(prog="spinforge", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario from a TOML/JSON config")
    p.add_argument("config")
    _add_common(p)
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--backend", default=None,
                   choices=["ed", "traj", "twa", "analytic"])
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("figure", help="reproduce a preset figure")
    p.add_argument("name", choices=sorted(PRESETS))
    _add_common(p)
    p.add_argument("--full", action="store_true",
                   help="full-resolution grids and trajectory counts")
    p.add_argument("--seed", type=int, default=None,
                   help="override the preset seed")

    p = sub.add_parser("sweep", help="run a parameter sweep from a spec file")
    p.add_argument("spec")
    _add_common(p)
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")

    p = sub.add_parser("model", help="evaluate the closed-form models")
    p.add_argument("--protocol", choices=["oat", "tss"], default="tss")
    p.add_argument("--channel", choices=["gamma_s", "gamma_el"], default=None)
    p.add_argument("--N", type=float, default=1000)
    p.add_argument("--chi", type=float, default=1.0)
    p.add_argument("--gamma-over-chi", type=float, default=0.0)
    p.add_argument("--g", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None,
                   help="single-particle rate for --channel")
    p.add_argument("--sigma-n", type=float, default=0.0)
    p.add_argument("--t", type=float, default=None,
                   help="evaluation time (1/chi units); default: scan")
    p.add_argument("--out", default=None, help="write the term table CSV here")
    return ap


def _cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.backend is not None:
        cfg.backend = args.backend
    if args.no_plot:
        cfg.plot = False
    cfg.validate()
    out = run_scenario(cfg, out_dir=args.out, n_jobs=args.jobs)
    print(out)
    return 0


def _cmd_figure(args):
    out = preset_figure(args.name, out_root=args.out, n_jobs=args.jobs,
                        full=args.full, seed=args.seed)
    print(out)
    return 0


def _cmd_sweep(args):
    spec = load_sweep(args.spec)
    if args.seed is not None:
        spec.scenario.seed = args.seed
    agg, failures = run_sweep(spec, out_root=args.out, n_jobs=args.jobs)
    print(agg)
    if failures:
        for pdir, err in failures.items():
            print(f"FAILED {pdir}: {err}", file=sys.stderr)
        return 1
    return 0


def _cmd_model(args):
    N = int(args.N)
    audit = analytic.audit_fixed_ratio_coefficient()
    print("fixed-ratio coefficient audit:")
    print(f"  numeric minimization : {audit['coefficient_numeric']:.9f}")
    print(f"  main-text value      : {audit['coefficient_main_text']:.9f} "
          f"(rel err {audit['rel_err_main_text']:.2e})")
    print(f"  competing transcription {audit['coefficient_alternative']:.9f} "
          f"(rel err {audit['rel_err_alternative']:.2e}) -> "
          f"{'ruled out' if audit['alternative_ruled_out'] else 'NOT ruled out'}")

    if args.channel:
        if args.g is None or args.kappa is None or args.gamma is None:
            print("model --channel needs --g, --kappa, --gamma", file=sys.stderr)
            return 2
        opt = analytic.optimum_over_detuning(args.protocol, args.channel, N,
                                             args.g, args.kappa, args.gamma)
        print(f"{args.protocol}/{args.channel}: xi2 = {opt.xi2_opt:.6g} "
              f"({opt.xi2_dB:.2f} dB), t_opt = {opt.t_opt:.6g} s, "
              f"delta_c_opt = {opt.delta_c_opt:.6g} rad/s")
        print(f"  numeric cross-check rel err {opt.numeric_rel_err:.2e} "
              f"(discrepancy={opt.discrepancy})")
        if opt.diagnostics:
            print("  diagnostics:", json.dumps(opt.diagnostics, default=float))
        return 0

    opt = analytic.optimum_fixed_ratio(args.protocol, N, args.gamma_over_chi,
                                       chi=args.chi)
    print(f"{args.protocol} fixed Gamma/chi={args.gamma_over_chi:g}: "
          f"xi2_opt = {opt.xi2_opt:.6g} ({opt.xi2_dB:.2f} dB) at "
          f"t_opt = {opt.t_opt:.6g}")
    print(f"  numeric cross-check rel err {opt.numeric_rel_err:.2e}")
    channels = analytic.DecoherenceChannels(
        Gamma=args.gamma_over_chi * args.chi)
    ts = ([args.t / args.chi] if args.t is not None
          else np.linspace(0.3, 2.0, 18) * opt.t_opt)
    lines = []
    names = None
    for t in ts:
        pred = analytic.xi2_model(args.protocol, channels, N, args.chi,
                                  args.sigma_n, t)
        if names is None:
            names = sorted(pred.terms)
            header = "t,xi2,xi2_dB," + ",".join(names)
            lines.append(header)
        vals = ",".join(f"{pred.terms.get(k, 0.0):.10g}" for k in names)
        lines.append(f"{t:.10g},{pred.total:.10g},"
                     f"{10 * np.log10(pred.total):.10g},{vals}")
    table = "\n".join(lines)
    if args.out:
        with open(args.out, "w") as f:
            f.write(table + "\n")
        print(f"term table written to {args.out}")
    else:
        print(table)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return {"run": _cmd_run, "figure": _cmd_figure, "sweep": _cmd_sweep,
                "model": _cmd_model}[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
