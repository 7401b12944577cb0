"""Command-line front end.

Subcommands: run (full experiment), adapt (adaptation phase only), sample
(sampling phase with an explicit policy), analyze (aggregate run CSVs),
dump-gp (surrogate surface on a dense grid), models (list presets).

Exit codes: 0 success, 1 runtime failure, 2 bad usage or invalid config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .gp import load_snapshot, predict_many, snapshot_to_dict
from .harness import (
    ExperimentConfig,
    all_zero_constraint,
    build_manifest,
    build_model_from_config,
    init_state_rng,
    load_config,
    run_experiment,
    unit_rng,
    uniform_constrained_state,
    validate_config,
    write_adaptation_csv,
    write_draws_csv,
    write_outputs,
    write_policy_csv,
    write_run_csv,
    RunRecord,
    aggregate_acf,
    mean_energy_curve,
    read_run_csv,
    write_acf_csv,
    write_energy_csv,
)
from .bayesopt import adapt
from .policy import (
    build_boltzmann_policy,
    draw_policy,
    expert_policy,
    point_policy,
    sampling_phase,
    uniform_policy,
)
from .samplers import ParamBox, SamplerParams

PRESET_ENV = "BAYESMC_PRESET_DIR"


def preset_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(PRESET_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(__file__).parent / "presets")
    return dirs


def find_preset(name: str) -> Path:
    for d in preset_dirs():
        candidate = d / f"{name}.json"
        if candidate.is_file():
            return candidate
    raise ConfigError(
        f"preset {name!r} not found in " + ", ".join(str(d) for d in preset_dirs())
    )


def resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
    elif getattr(args, "preset", None):
        path = find_preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    try:
        config = load_config(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if getattr(args, "seed", None) is not None:
        config.master_seed = args.seed
    return config


def _bayesopt_box(config: ExperimentConfig) -> ParamBox:
    for arm in config.arms:
        if arm.kind == "bayesopt":
            return arm.box
    for arm in config.arms:
        if arm.box is not None:
            return arm.box
    raise ConfigError("config has no arm with a parameter box")


def cmd_run(args) -> int:
    config = resolve_config(args)
    validate_config(config)
    records = run_experiment(config, jobs=args.jobs)
    written = write_outputs(config, records, args.out, max_lag=args.max_lag)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_adapt(args) -> int:
    config = resolve_config(args)
    model = validate_config(config)
    spec = all_zero_constraint(model.num_sites, config.constraint_distance)
    box = _bayesopt_box(config)
    arm_name = next((a.name for a in config.arms if a.kind == "bayesopt"), "IMBayesOpt")
    state = uniform_constrained_state(model, spec, init_state_rng(config.master_seed, args.run))
    rng = unit_rng(config.master_seed, arm_name, args.run)
    record = adapt(model, spec, config.adaptation_config(box), state, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_adaptation_csv(out / "adaptation.csv", record)
    (out / "gp.json").write_text(json.dumps(snapshot_to_dict(record.gp_snapshot)))
    print(f"wrote adaptation record ({len(record.history)} iterations) to {out}")
    return 0


def _policy_from_args(args, config: ExperimentConfig, model, rng) -> tuple:
    num_draws = config.num_draws
    if args.gp_json:
        post = load_snapshot(args.gp_json)
        box = _bayesopt_box(config)
        support, weights = build_boltzmann_policy(post, box, config.grid_gamma)
        return draw_policy(support, weights, num_draws, rng), "boltzmann"
    name = args.policy
    if name == "kawasaki":
        return point_policy(SamplerParams(1, 0.0), num_draws), name
    if name == "point":
        if args.k is None or args.gamma is None:
            raise ConfigError("--policy point requires --k and --gamma")
        return point_policy(SamplerParams(args.k, args.gamma), num_draws), name
    if name == "unif":
        return uniform_policy(_bayesopt_box(config), num_draws, rng, config.grid_gamma), name
    if name == "expert":
        arm = next((a for a in config.arms if a.kind == "expert"), None)
        if arm is None:
            raise ConfigError("config has no expert arm")
        return expert_policy(arm.k_values, arm.gamma, num_draws, rng), name
    raise ConfigError("sample needs --gp-json or --policy")


def cmd_sample(args) -> int:
    config = resolve_config(args)
    model = validate_config(config)
    spec = all_zero_constraint(model.num_sites, config.constraint_distance)
    state = uniform_constrained_state(model, spec, init_state_rng(config.master_seed, args.run))
    steps = args.steps if args.steps is not None else config.steps_per_run
    source = args.gp_json or args.policy or "policy"
    rng = unit_rng(config.master_seed, f"sample:{source}", args.run)
    policy, label = _policy_from_args(args, config, model, rng)
    result = sampling_phase(model, spec, policy, state, steps, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = RunRecord(
        arm=label,
        run_index=args.run,
        energies=result.energies,
        accepted=result.accepted,
        k_used=result.k_used,
        gamma_used=result.gamma_used,
        acceptance_rate=result.acceptance_rate,
        wall_clock=0.0,
    )
    write_run_csv(out / f"run_{label}_{args.run}.csv", record)
    write_policy_csv(out / f"policy_{label}_{args.run}.csv", policy)
    write_draws_csv(out / f"draws_{label}_{args.run}.csv", policy)
    print(f"wrote {steps}-step trace (accept rate {result.acceptance_rate:.3f}) to {out}")
    return 0


def cmd_analyze(args) -> int:
    paths = [Path(p) for p in args.runs]
    if not paths:
        raise ConfigError("analyze needs at least one run CSV")
    records = []
    for path in paths:
        if not path.is_file():
            raise ConfigError(f"run CSV not found: {path}")
        stem = path.stem  # run_<arm>_<idx>
        parts = stem.split("_")
        if len(parts) < 3 or parts[0] != "run":
            raise ConfigError(f"cannot infer arm/run from file name {path.name!r}")
        arm = "_".join(parts[1:-1])
        data = read_run_csv(path)
        records.append(
            RunRecord(
                arm=arm,
                run_index=int(parts[-1]),
                energies=data["energy"],
                accepted=data["accepted"],
                k_used=data["k_used"],
                gamma_used=data["gamma_used"],
                acceptance_rate=float(data["accepted"].mean()),
                wall_clock=0.0,
            )
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shortest = min(r.energies.shape[0] for r in records)
    max_lag = min(args.max_lag, shortest - args.burn_in - 1)
    for arm, (mean, stderr) in aggregate_acf(records, args.burn_in, max_lag).items():
        write_acf_csv(out / f"acf_{arm}.csv", mean, stderr)
    for arm, means in mean_energy_curve(records).items():
        write_energy_csv(out / f"energy_{arm}.csv", means)
    print(f"wrote aggregates for {len(set(r.arm for r in records))} arms to {out}")
    return 0


def cmd_dump_gp(args) -> int:
    post = load_snapshot(args.gp_json)
    if args.k_max is not None and args.gamma_max is not None:
        box = ParamBox(k_max=args.k_max, gamma_max=args.gamma_max)
    else:
        config = resolve_config(args)
        box = _bayesopt_box(config)
    gammas = np.linspace(0.0, box.gamma_max, args.grid_gamma)
    lines = ["k,gamma,mu,sigma\n"]
    for k in range(1, box.k_max + 1):
        locs = np.array(
            [box.normalize(SamplerParams(k, float(g))) for g in gammas]
        )
        means, variances = predict_many(post, locs)
        for g, mu, var in zip(gammas, means, variances):
            lines.append(f"{k},{g!r},{mu!r},{np.sqrt(var)!r}\n")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines))
    print(f"wrote {box.k_max}x{args.grid_gamma} surrogate grid to {out}")
    return 0


def cmd_models(args) -> int:
    seen = set()
    for d in preset_dirs():
        if not d.is_dir():
            continue
        for path in sorted(d.glob("*.json")):
            if path.stem in seen:
                continue
            seen.add(path.stem)
            try:
                config = load_config(path)
            except (ConfigError, json.JSONDecodeError, KeyError):
                continue
            m = config.model
            topo = m.get("topology")
            if topo == "grid2d":
                size = f"{m['width']}x{m['height']}"
            elif topo == "cube3d":
                size = "x".join([str(m["side"])] * 3)
            elif topo == "rbm":
                size = f"|v|={m['num_visible']},|h|={m['num_hidden']}"
            else:
                size = "?"
            temp = m.get("temperature", 1.0 / m.get("beta", 1.0))
            print(
                f"{path.stem}: {topo} {size}, 1/beta={temp}, "
                f"n={config.constraint_distance}, arms="
                + ",".join(a.name for a in config.arms)
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesmc",
        description="Adaptive MCMC on constrained Boltzmann machines",
    )
    parser.add_argument("--version", action="version", version=f"bayesmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--preset", help="bundled preset name (see `bayesmc models`)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p_run = sub.add_parser("run", help="run the full experiment protocol")
    common(p_run)
    p_run.add_argument("--jobs", type=int, default=1, help="parallel arm x run units")
    p_run.add_argument("--max-lag", type=int, default=2000, help="ACF aggregate max lag")
    p_run.set_defaults(fn=cmd_run)

    p_adapt = sub.add_parser("adapt", help="run the adaptation phase only")
    common(p_adapt)
    p_adapt.add_argument("--run", type=int, default=0, help="run index (seed stream)")
    p_adapt.set_defaults(fn=cmd_adapt)

    p_sample = sub.add_parser("sample", help="run the sampling phase with a policy")
    common(p_sample)
    p_sample.add_argument("--run", type=int, default=0, help="run index (seed stream)")
    p_sample.add_argument("--steps", type=int, default=None)
    p_sample.add_argument("--gp-json", help="surrogate snapshot for a Boltzmann policy")
    p_sample.add_argument(
        "--policy", choices=["kawasaki", "unif", "expert", "point"], default=None
    )
    p_sample.add_argument("--k", type=int, default=None)
    p_sample.add_argument("--gamma", type=float, default=None)
    p_sample.set_defaults(fn=cmd_sample)

    p_an = sub.add_parser("analyze", help="aggregate ACF/energy curves from run CSVs")
    p_an.add_argument("runs", nargs="*", help="run_<arm>_<idx>.csv files")
    p_an.add_argument("--out", required=True)
    p_an.add_argument("--burn-in", type=int, default=10_000)
    p_an.add_argument("--max-lag", type=int, default=2000)
    p_an.set_defaults(fn=cmd_analyze)

    p_gp = sub.add_parser("dump-gp", help="dense (k, gamma, mu, sigma) surrogate grid")
    p_gp.add_argument("--gp-json", required=True)
    p_gp.add_argument("--config")
    p_gp.add_argument("--preset")
    p_gp.add_argument("--seed", type=int, default=None)
    p_gp.add_argument("--k-max", type=int, default=None)
    p_gp.add_argument("--gamma-max", type=float, default=None)
    p_gp.add_argument("--grid-gamma", type=int, default=100)
    p_gp.add_argument("--out", required=True, help="output CSV path")
    p_gp.set_defaults(fn=cmd_dump_gp)

    p_models = sub.add_parser("models", help="list available presets")
    p_models.set_defaults(fn=cmd_models)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
