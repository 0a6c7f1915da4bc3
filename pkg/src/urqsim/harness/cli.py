"""Command line entry point: ``urqsim run|sigma-table|theory <spec>``."""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from ..algorithms import AutoStep, ConfigError
from ..loss import ConvergenceError
from .config import load_spec
from .experiment import build_problem, run_experiment, table_sigma, theory_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urqsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every (run, seed) pair of a spec")
    r.add_argument("spec")
    r.add_argument("--out", help="output directory (default: spec 'outputs' key)")
    r.add_argument("--seeds", help="comma separated seeds, overriding the spec")
    r.add_argument("--no-plot", action="store_true", help="skip SVG figures")
    r.add_argument("--jobs", type=int, default=1, help="parallel processes")

    s = sub.add_parser("sigma-table", help="static and sampled sparsity factors")
    s.add_argument("spec")

    t = sub.add_parser("theory", help="print predicted step sizes and rates")
    t.add_argument("spec")

    for sp in (r, s, t):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a spec key (repeatable)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        spec = load_spec(args.spec, _overrides(args.set))
        if args.command == "run":
            seeds = None
            if args.seeds:
                try:
                    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError(f"bad --seeds {args.seeds!r}") from None
            summary, code = run_experiment(spec, args.out, seeds=seeds,
                                           plot=False if args.no_plot else None, jobs=args.jobs)
            for name, info in summary["runs"].items():
                gaps = [s["final_f_gap"] for s in info["seeds"].values() if s["final_f_gap"] is not None]
                bits = [s["bits_total"] for s in info["seeds"].values()]
                print(f"{name}: gamma={info['gamma']:.6g} final f_gap mean={sum(gaps) / len(gaps):.3e} "
                      f"bits mean={sum(bits) / len(bits):.0f}")
            for d in summary["diverged"]:
                print(f"diverged: {d['run']} seed {d['seed']}: {d['error']}", file=sys.stderr)
            return code
        if args.command == "sigma-table":
            rep = table_sigma(spec)
            print(f"{rep['dataset']} n={rep['n']} d={rep['d']} level={rep['level']} "
                  f"sigma/m={rep['sigma_over_m']:.4f}")
            for row in rep["rows"]:
                print(f"  {row['quantizer']:>10}  E[sigma_k]/m={row['E_sigma_k_over_m']:.4f} "
                      f"(+/- {row['stderr']:.4f}, {row['samples']} draws)")
            return EXIT_OK
        problem = build_problem(spec)
        for cfg in spec.runs:
            gamma = (problem.resolve_gamma(cfg)[0] if isinstance(cfg.gamma, AutoStep)
                     else float(cfg.gamma))
            print(json.dumps({"run": cfg.label,
                              **theory_report(problem, cfg, gamma, spec.eps_ratio)},
                             sort_keys=True, default=float))
        return EXIT_OK
    except (ConfigError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
