"""Command-line entry points for experiments, config checks, and self-checks.

    bfarl run CONFIG.toml [--seed S] [--out-dir DIR] [--jobs N] [--quiet]
    bfarl run label_bias_case --preset
    bfarl validate-config CONFIG.toml
    bfarl gen-synthetic --out data.csv [generator flags]
    bfarl check-oracles [--worlds N] [--seed S]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bias import epsilon_from_theta, theta_from_epsilon
from .data import save_dataset
from .experiments import (ExperimentConfig, aggregate_records, intensity_study,
                          preset, run_experiment, write_outputs)
from .oracle import sample_world, verify_decomposition
from .synthetic import SyntheticConfig, generate


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return ExperimentConfig.from_dict(raw)


def _cmd_run(args) -> int:
    if args.preset:
        config = preset(args.config)
    else:
        config = load_config(args.config)
    if args.seed is not None:
        config = ExperimentConfig.from_dict({**config.to_dict(), "base_seed": args.seed})
    if args.out_dir is not None:
        config = ExperimentConfig.from_dict({**config.to_dict(), "out_dir": args.out_dir})

    def progress(ci, rep):
        if not args.quiet:
            print(f"  cell {ci} rep {rep} done", flush=True)

    curve = None
    if config.kind == "intensity_study":
        records, curve, failures = intensity_study(config, jobs=args.jobs)
        aggregate = aggregate_records(records)
    else:
        records, aggregate, failures = run_experiment(config, jobs=args.jobs,
                                                      progress=progress)
    write_outputs(config.out_dir, config, records, aggregate, failures, curve)
    if not args.quiet:
        print(f"{len(records)} runs -> {config.out_dir}")
        for row in aggregate:
            print(f"  cell={row['cell']:g} {row['method']:<18} {row['metric']:<20} "
                  f"{row['mean']:.4f} ± {row['std']:.4f}")
    if failures:
        print(f"{len(failures)} run(s) failed; see "
              f"{Path(config.out_dir) / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def _cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except Exception as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    print(f"ok: kind={config.kind} grid={list(config.grid())} "
          f"reps={config.repetitions} hash={config.config_hash()}")
    return 0


def _cmd_gen_synthetic(args) -> int:
    config = SyntheticConfig(n=args.n, k=args.k, a_rate=args.a_rate,
                             rarity=args.rarity, flip_amount=args.flip_amount,
                             w_sigma=args.w_sigma, seed=args.seed)
    ds = generate(config)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} rows x {ds.d} features to {args.out} "
          f"(group-1 share {np.mean(ds.a):.3f}, flipped {ds.provenance['n_flipped']})")
    return 0


def _cmd_check_oracles(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    failed = 0
    for i in range(args.worlds):
        loss = "bce" if i % 2 == 0 else "zero_one"
        world, meta, rho_a, rho_b = sample_world(rng, loss=loss)
        ok, res = verify_decomposition(world, meta, rho_a, rho_b, tol=1e-8, loss=loss)
        worst = max(worst, res)
        failed += 0 if ok else 1
    print(f"decomposition identity: {args.worlds - failed}/{args.worlds} worlds "
          f"within 1e-8 (worst residual {worst:.3e})")

    grid_bad = 0
    checked = 0
    for sigma in (1.0, 1.05, 1.1):
        for r in np.arange(0.1, 0.95, 0.1):
            for eps in np.arange(0.0, 1.05, 0.1):
                try:
                    theta = theta_from_epsilon(float(eps), sigma, float(r))
                except ValueError:
                    continue
                checked += 1
                back = epsilon_from_theta(theta, sigma, float(r))
                if abs(back - eps) > 1e-12:
                    grid_bad += 1
    print(f"rate conversion round-trip: {checked - grid_bad}/{checked} grid cells "
          f"within 1e-12")
    return 0 if (failed == 0 and grid_bad == 0) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bfarl",
                                     description="bias-tolerant fair classification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a TOML config")
    p_run.add_argument("config", help="config file path, or a preset name with --preset")
    p_run.add_argument("--preset", action="store_true",
                       help="treat CONFIG as a named preset (clean_eval, "
                            "label_bias_case, selection_bias_case, intensity, "
                            "label_bias_sweep, selection_bias_sweep)")
    p_run.add_argument("--seed", type=int, default=None, help="override base_seed")
    p_run.add_argument("--out-dir", default=None, help="override output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate-config", help="parse and check a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_gen = sub.add_parser("gen-synthetic", help="write a synthetic dataset CSV")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--n", type=int, default=2000)
    p_gen.add_argument("--k", type=int, default=15)
    p_gen.add_argument("--a-rate", type=float, default=0.1, dest="a_rate")
    p_gen.add_argument("--rarity", type=float, default=0.5)
    p_gen.add_argument("--flip-amount", type=float, default=0.5, dest="flip_amount")
    p_gen.add_argument("--w-sigma", type=float, default=1.0, dest="w_sigma")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(func=_cmd_gen_synthetic)

    p_chk = sub.add_parser("check-oracles", help="run the numeric verification suites")
    p_chk.add_argument("--worlds", type=int, default=100)
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.set_defaults(func=_cmd_check_oracles)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
