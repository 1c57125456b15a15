"""Command line entry point: ``distqn {run,preset,oracle,sweep}``."""

from __future__ import annotations

import argparse
import json
import sys
import time

from distqn import pmm
from distqn.errors import DistqnError
from distqn.harness import experiment as ex


def _summary(result, out):
    print(f"{'solver':<22}{'status':<11}{'iters':>7}{'comms':>8}  {'final rel_err':>14}", file=out)
    for o in result.outcomes.values():
        r = o.record
        err = r["final_rel_err"]
        err = f"{err:.6e}" if isinstance(err, float) else str(err)
        extra = f"  beta={r['beta']:g}" if r.get("family") == "pmm" else ""
        print(f"{o.name:<22}{o.status:<11}{r['iterations']:>7}{r['comms']:>8}  {err:>14}{extra}",
              file=out)


def _budget_overrides(args):
    out = {}
    if getattr(args, "max_iter", None) is not None:
        out["max_iter"] = args.max_iter
    if getattr(args, "stop_rel_err", None) is not None:
        out["stop_rel_err"] = args.stop_rel_err
    return out


def _apply_budget(config, overrides):
    for k, v in overrides.items():
        setattr(config.budget, k, v)
    return config


def cmd_run(args):
    config = _apply_budget(ex.load_config(args.config), _budget_overrides(args))
    out_dir = args.out or config.output
    if out_dir is None:
        raise ex.ConfigError("no output directory: pass --out or set 'output' in the config")
    t0 = time.perf_counter()
    result = ex.run_experiment(config, out_dir)
    _summary(result, sys.stdout)
    print(f"wrote {len(result.outcomes)} traces and manifest.json to {out_dir} "
          f"({time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_preset(args):
    config = ex.preset(args.name, **_budget_overrides(args))
    if args.config_only:
        ex.save_config(args.out, config)
        print(f"wrote preset {args.name} to {args.out}")
        return 0
    t0 = time.perf_counter()
    result = ex.run_experiment(config, args.out)
    _summary(result, sys.stdout)
    print(f"wrote {len(result.outcomes)} traces and manifest.json to {args.out} "
          f"({time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_oracle(args):
    config = ex.load_config(args.config)
    json.dump(ex.oracle_report(config), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_sweep(args):
    if args.param != "beta":
        raise ex.ConfigError(f"only the PMM parameter 'beta' can be swept, not {args.param!r}")
    if args.config:
        config = ex.load_config(args.config)
    else:
        config = ex.preset(args.preset)
    _apply_budget(config, _budget_overrides(args))
    inst = ex.build_instance(config)
    grid = ex.parse_grid(args.grid)
    spec = {"name": "sweep", "variant": args.variant, "eps_pmm": args.eps_pmm,
            "dual_beta_scaling": not args.unscaled_dual}
    base = ex.resolve_pmm(spec, inst, config.budget, float(grid[0]))
    results, best = pmm.sweep_beta(inst.problem, inst.weights, base, grid, y_star=inst.y_star,
                                   divergence_factor=config.budget.divergence_factor)
    rows = ["beta,final_rel_err,iterations,status"]
    rows += [f"{r.beta!r},{r.final_rel_err!r},{r.iterations},{r.status}" for r in results]
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    print(f"best beta = {best.beta!r} (final rel_err {best.final_rel_err:.3e}, "
          f"{best.iterations} iterations)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distqn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def budget_args(p):
        p.add_argument("--max-iter", type=int, help="override the iteration budget")
        p.add_argument("--stop-rel-err", type=float, help="override the relative-error target")

    p = sub.add_parser("run", help="run an experiment from a JSON config or manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (defaults to the config's 'output')")
    budget_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("--name", required=True, choices=sorted(ex.PRESETS))
    p.add_argument("--out", required=True, help="output directory (or file with --config-only)")
    p.add_argument("--config-only", action="store_true", help="write the preset config and exit")
    budget_args(p)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("oracle", help="print y*, x*_alpha and derived constants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="sweep the PMM-DQN dual step beta over a grid")
    p.add_argument("--param", default="beta")
    p.add_argument("--grid", default="log:-4:4:0.5")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="take the instance from this config")
    src.add_argument("--preset", default="fig5", choices=sorted(ex.PRESETS))
    p.add_argument("--variant", default="PMM2", choices=["PMM0", "PMM1", "PMM2"])
    p.add_argument("--eps-pmm", type=float, default=pmm.DEFAULT_EPS_PMM)
    p.add_argument("--unscaled-dual", action="store_true",
                   help="use the unit dual step instead of beta")
    p.add_argument("--out", help="also write the sweep table as CSV")
    budget_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DistqnError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
