"""Experiment orchestration: arm x run execution with strict seed discipline,
exact-enumeration validation oracles, ACF aggregation, and CSV export.

Every stochastic quantity is a pure function of (master_seed, arm, run):
each unit gets its own generator, so records for one arm are identical
whether or not other arms are enabled, and units can run in any order or
in parallel without changing the results.
"""

from __future__ import annotations

import itertools
import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bayesopt import AdaptationConfig, AdaptationRecord, adapt
from .errors import ConfigError, StateSpaceTooLargeError
from .gp import snapshot_to_dict
from .model import (
    BitState,
    BoltzmannModel,
    ConstraintSpec,
    all_zero_constraint,
    build_cube3d,
    build_grid2d,
    build_rbm,
    hamming_to_reference,
    load_model,
)
from .objective import autocorr_curve
from .policy import (
    DEFAULT_GAMMA_GRID,
    DEFAULT_NUM_DRAWS,
    MixturePolicy,
    SamplingResult,
    build_boltzmann_policy,
    draw_policy,
    expert_policy,
    point_policy,
    sampling_phase,
    uniform_policy,
)
from .samplers import ParamBox, SamplerParams

ARM_KINDS = ("kawasaki", "expert", "uniform", "bayesopt")

# Largest constrained space the enumeration oracle will attempt.
MAX_ENUMERATION = 2_000_000


# ---------------------------------------------------------------------------
# seeding

def child_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a labelled stream under one master seed."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(path)))


def _arm_stream(arm_name: str) -> int:
    return zlib.crc32(arm_name.encode())


def unit_rng(master_seed: int, arm_name: str, run: int) -> np.random.Generator:
    return child_rng(master_seed, 1, _arm_stream(arm_name), run)


def init_state_rng(master_seed: int, run: int) -> np.random.Generator:
    """Stream for the per-run initial state, shared by every arm."""
    return child_rng(master_seed, 0, run)


def uniform_constrained_state(
    model: BoltzmannModel, spec: ConstraintSpec, rng: np.random.Generator
) -> BitState:
    """Uniform draw from the constraint set: flip n reference bits at random."""
    bits = spec.reference.copy()
    flip = rng.choice(model.num_sites, size=spec.distance, replace=False)
    bits[flip] ^= 1
    return BitState.from_bits(model, bits)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ArmSpec:
    name: str
    kind: str
    k_max: int | None = None
    gamma_max: float | None = None
    k_values: list[int] | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ARM_KINDS:
            raise ConfigError(f"unknown arm kind {self.kind!r}")
        if self.kind in ("uniform", "bayesopt"):
            if not self.k_max or self.gamma_max is None:
                raise ConfigError(f"arm {self.name!r} needs k_max and gamma_max")
        if self.kind == "expert":
            if not self.k_values or self.gamma is None:
                raise ConfigError(f"arm {self.name!r} needs k_values and gamma")

    @property
    def box(self) -> ParamBox | None:
        if self.kind in ("uniform", "bayesopt"):
            return ParamBox(k_max=int(self.k_max), gamma_max=float(self.gamma_max))
        return None

    def max_k(self) -> int:
        if self.kind == "kawasaki":
            return 1
        if self.kind == "expert":
            return max(self.k_values)
        return int(self.k_max)

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind in ("uniform", "bayesopt"):
            out["k_max"] = int(self.k_max)
            out["gamma_max"] = float(self.gamma_max)
        if self.kind == "expert":
            out["k_values"] = [int(k) for k in self.k_values]
            out["gamma"] = float(self.gamma)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ArmSpec":
        kind = data.get("kind")
        if kind is None:
            raise ConfigError(f"arm entry missing 'kind': {data}")
        name = data.get("name", {"kawasaki": "Kawasaki", "expert": "IMExpert",
                                  "uniform": "IMUnif", "bayesopt": "IMBayesOpt"}[kind])
        k_values = data.get("k_values")
        if k_values is None and "k_range" in data:
            lo, hi = data["k_range"]
            k_values = list(range(int(lo), int(hi) + 1))
        return cls(
            name=name,
            kind=kind,
            k_max=data.get("k_max"),
            gamma_max=data.get("gamma_max"),
            k_values=k_values,
            gamma=data.get("gamma"),
        )


@dataclass
class ExperimentConfig:
    name: str
    model: dict
    constraint_distance: int
    arms: list[ArmSpec]
    num_runs: int = 5
    steps_per_run: int = 90_000
    burn_in: int = 10_000
    adaptation: dict = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    master_seed: int = 0

    @property
    def grid_gamma(self) -> int:
        return int(self.policy.get("grid_gamma", DEFAULT_GAMMA_GRID))

    @property
    def num_draws(self) -> int:
        return int(self.policy.get("num_draws", DEFAULT_NUM_DRAWS))

    def adaptation_config(self, box: ParamBox) -> AdaptationConfig:
        a = self.adaptation
        return AdaptationConfig(
            param_box=box,
            num_adaptations=int(a.get("num_adaptations", 100)),
            steps_per_adaptation=int(a.get("steps_per_adaptation", 100)),
            init_design_size=int(a.get("init_design_size", 10)),
            ei_exploration=float(a.get("ei_exploration", 0.01)),
            direct_budget=int(a.get("direct_budget", 500)),
            restart_chain=bool(a.get("restart_chain", False)),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model": dict(self.model),
            "constraint": {"distance": self.constraint_distance},
            "arms": [arm.to_dict() for arm in self.arms],
            "num_runs": self.num_runs,
            "steps_per_run": self.steps_per_run,
            "burn_in": self.burn_in,
            "adaptation": dict(self.adaptation),
            "policy": {"grid_gamma": self.grid_gamma, "num_draws": self.num_draws},
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            return cls(
                name=data.get("name", "experiment"),
                model=dict(data["model"]),
                constraint_distance=int(data["constraint"]["distance"]),
                arms=[ArmSpec.from_dict(a) for a in data["arms"]],
                num_runs=int(data.get("num_runs", 5)),
                steps_per_run=int(data.get("steps_per_run", 90_000)),
                burn_in=int(data.get("burn_in", 10_000)),
                adaptation=dict(data.get("adaptation", {})),
                policy=dict(data.get("policy", {})),
                master_seed=int(data.get("master_seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"config missing required field: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def build_model_from_config(model_cfg: dict) -> BoltzmannModel:
    cfg = dict(model_cfg)
    topology = cfg.get("topology")
    if "beta" in cfg:
        beta = float(cfg["beta"])
    elif "temperature" in cfg:
        beta = 1.0 / float(cfg["temperature"])
    else:
        raise ConfigError("model config needs 'beta' or 'temperature'")
    if topology == "grid2d":
        return build_grid2d(
            int(cfg["width"]),
            int(cfg["height"]),
            coupling=float(cfg.get("coupling", 1.0)),
            bias=float(cfg.get("bias", 0.0)),
            beta=beta,
        )
    if topology == "cube3d":
        return build_cube3d(int(cfg["side"]), beta=beta, seed=int(cfg.get("seed", 0)))
    if topology == "rbm":
        return build_rbm(
            int(cfg["num_visible"]),
            int(cfg["num_hidden"]),
            beta=beta,
            seed=int(cfg.get("seed", 0)),
        )
    if topology == "file":
        return load_model(cfg["path"])
    raise ConfigError(f"unknown model topology {topology!r}")


def validate_config(config: ExperimentConfig) -> BoltzmannModel:
    """Check feasibility of every arm before any run starts; returns the model."""
    try:
        model = build_model_from_config(config.model)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}") from exc
    n = config.constraint_distance
    if not 0 < n < model.num_sites:
        raise ConfigError(f"constraint distance {n} must satisfy 0 < n < N={model.num_sites}")
    if not 0 <= config.burn_in < config.steps_per_run:
        raise ConfigError(
            f"burn_in {config.burn_in} must be < steps_per_run {config.steps_per_run}"
        )
    if config.num_runs < 1:
        raise ConfigError("num_runs must be >= 1")
    if len({arm.name for arm in config.arms}) != len(config.arms):
        raise ConfigError("arm names must be unique")
    limit = min(n, model.num_sites - n)
    for arm in config.arms:
        if arm.max_k() > limit:
            raise ConfigError(
                f"arm {arm.name!r}: walk length {arm.max_k()} exceeds "
                f"min(n, N-n) = {limit}"
            )
        if arm.kind == "bayesopt":
            config.adaptation_config(arm.box)  # raises on bad adaptation values
    return model


# ---------------------------------------------------------------------------
# execution

@dataclass
class RunRecord:
    arm: str
    run_index: int
    energies: np.ndarray
    accepted: np.ndarray
    k_used: np.ndarray
    gamma_used: np.ndarray
    acceptance_rate: float
    wall_clock: float
    policy: MixturePolicy | None = None
    adaptation: AdaptationRecord | None = None


def _build_arm_policy(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    config: ExperimentConfig,
    arm: ArmSpec,
    initial_state: BitState,
    rng: np.random.Generator,
) -> tuple[MixturePolicy, AdaptationRecord | None]:
    if arm.kind == "kawasaki":
        return point_policy(SamplerParams(1, 0.0), config.num_draws), None
    if arm.kind == "expert":
        return expert_policy(arm.k_values, arm.gamma, config.num_draws, rng), None
    if arm.kind == "uniform":
        return uniform_policy(arm.box, config.num_draws, rng, config.grid_gamma), None
    record = adapt(model, spec, config.adaptation_config(arm.box), initial_state.copy(), rng)
    support, weights = build_boltzmann_policy(record.gp_snapshot, arm.box, config.grid_gamma)
    return draw_policy(support, weights, config.num_draws, rng), record


def execute_unit(config: ExperimentConfig, arm: ArmSpec, run: int) -> RunRecord:
    """Run one (arm, run) unit from scratch; deterministic in isolation."""
    t0 = time.perf_counter()
    model = build_model_from_config(config.model)
    spec = all_zero_constraint(model.num_sites, config.constraint_distance)
    initial_state = uniform_constrained_state(model, spec, init_state_rng(config.master_seed, run))
    rng = unit_rng(config.master_seed, arm.name, run)
    policy, adaptation = _build_arm_policy(model, spec, config, arm, initial_state, rng)
    # Sampling starts from the shared per-run state even after adaptation.
    result = sampling_phase(model, spec, policy, initial_state, config.steps_per_run, rng)
    return RunRecord(
        arm=arm.name,
        run_index=run,
        energies=result.energies,
        accepted=result.accepted,
        k_used=result.k_used,
        gamma_used=result.gamma_used,
        acceptance_rate=result.acceptance_rate,
        wall_clock=time.perf_counter() - t0,
        policy=policy,
        adaptation=adaptation,
    )


def _execute_unit_args(args) -> RunRecord:
    return execute_unit(*args)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """All arm x run units; results ordered by (arm position, run index)."""
    validate_config(config)
    units = [(config, arm, run) for arm in config.arms for run in range(config.num_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_execute_unit_args, units))
    else:
        records = [execute_unit(*u) for u in units]
    return records


# ---------------------------------------------------------------------------
# aggregation

def aggregate_acf(
    records: list[RunRecord], burn_in: int, max_lag: int
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Across-run mean and standard error of r(l), l = 1..max_lag, per arm.

    The first `burn_in` samples of every trace are excluded.
    """
    by_arm: dict[str, list[np.ndarray]] = {}
    for rec in records:
        by_arm.setdefault(rec.arm, []).append(rec.energies[burn_in:])
    out = {}
    for arm, traces in by_arm.items():
        if len(traces) < 2:
            raise ValueError(f"arm {arm!r} needs >= 2 runs for standard errors")
        if any(max_lag >= t.shape[0] for t in traces):
            raise ValueError(f"max_lag {max_lag} >= post-burn-in trace length")
        curves = np.stack([autocorr_curve(t, max_lag)[1:] for t in traces])
        mean = curves.mean(axis=0)
        stderr = curves.std(axis=0, ddof=1) / math.sqrt(curves.shape[0])
        out[arm] = (mean, stderr)
    return out


def mean_energy_curve(records: list[RunRecord]) -> dict[str, np.ndarray]:
    by_arm: dict[str, list[np.ndarray]] = {}
    for rec in records:
        by_arm.setdefault(rec.arm, []).append(rec.energies)
    return {arm: np.stack(tr).mean(axis=0) for arm, tr in by_arm.items()}


# ---------------------------------------------------------------------------
# exact oracle

def state_key(bits: np.ndarray) -> int:
    """Bit-vector to integer key (site i is bit i)."""
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def exact_distribution(model: BoltzmannModel, spec: ConstraintSpec) -> dict[int, float]:
    """Enumerate the constraint set and return state-key -> probability."""
    n_sites = model.num_sites
    n = spec.distance
    count = math.comb(n_sites, n)
    if count > MAX_ENUMERATION:
        raise StateSpaceTooLargeError(
            f"|S_n| = C({n_sites},{n}) = {count} exceeds {MAX_ENUMERATION}"
        )
    keys = np.empty(count, dtype=object)
    log_weights = np.empty(count)
    beta = model.inv_temperature
    ei, ej, w = model.edge_i, model.edge_j, model.edge_weights
    biases = model.biases
    chunk_states = np.empty((4096, n_sites), dtype=np.int8)
    buffer = []
    pos = 0

    def flush(rows):
        nonlocal pos
        x = np.array(rows, dtype=np.float64)
        energies = -np.einsum("se,se->s", x[:, ei] * w[None, :], x[:, ej]) - x @ biases
        for row, e in zip(rows, energies):
            keys[pos] = state_key(row)
            log_weights[pos] = -beta * e
            pos += 1

    for combo in itertools.combinations(range(n_sites), n):
        bits = spec.reference.copy()
        bits[list(combo)] ^= 1
        buffer.append(bits)
        if len(buffer) == 4096:
            flush(buffer)
            buffer = []
    if buffer:
        flush(buffer)

    log_z = float(np.logaddexp.reduce(log_weights))
    probs = np.exp(log_weights - log_z)
    return {int(k): float(p) for k, p in zip(keys, probs)}


def empirical_distribution(visited_keys) -> dict[int, float]:
    total = len(visited_keys)
    counts: dict[int, int] = {}
    for k in visited_keys:
        counts[k] = counts.get(k, 0) + 1
    return {k: c / total for k, c in counts.items()}


def tv_distance(p: dict[int, float], q: dict[int, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def chain_vs_oracle(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    kernel_step,
    steps: int,
    rng: np.random.Generator,
    initial_state: BitState | None = None,
    burn_in: int = 0,
) -> float:
    """TV distance between the chain's visited-state histogram and the oracle.

    `kernel_step(state, rng) -> (state, accepted)` is applied `steps` times;
    the initial state plus every post-step state is recorded, and the first
    `burn_in` entries are dropped.
    """
    oracle = exact_distribution(model, spec)
    if initial_state is None:
        initial_state = uniform_constrained_state(model, spec, rng)
    state = initial_state.copy()
    visited = [state_key(state.bits)]
    for _ in range(steps):
        state, _ = kernel_step(state, rng)
        visited.append(state_key(state.bits))
    return tv_distance(empirical_distribution(visited[burn_in:]), oracle)


# ---------------------------------------------------------------------------
# CSV / manifest output

def _fmt(x: float) -> str:
    return repr(float(x))


def write_run_csv(path, record: RunRecord) -> None:
    lines = ["step,energy,accepted,k_used,gamma_used\n"]
    for t in range(record.energies.shape[0]):
        lines.append(
            f"{t},{_fmt(record.energies[t])},{int(record.accepted[t])},"
            f"{int(record.k_used[t])},{_fmt(record.gamma_used[t])}\n"
        )
    Path(path).write_text("".join(lines))


def read_run_csv(path) -> dict[str, np.ndarray]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {
        "step": raw[:, 0].astype(np.int64),
        "energy": raw[:, 1],
        "accepted": raw[:, 2].astype(bool),
        "k_used": raw[:, 3].astype(np.int64),
        "gamma_used": raw[:, 4],
    }


def write_acf_csv(path, mean: np.ndarray, stderr: np.ndarray) -> None:
    lines = ["lag,acf_mean,acf_stderr\n"]
    for lag, (m, s) in enumerate(zip(mean, stderr), start=1):
        lines.append(f"{lag},{_fmt(m)},{_fmt(s)}\n")
    Path(path).write_text("".join(lines))


def write_energy_csv(path, means: np.ndarray) -> None:
    lines = ["step,mean_energy\n"]
    for t, v in enumerate(means):
        lines.append(f"{t},{_fmt(v)}\n")
    Path(path).write_text("".join(lines))


def write_policy_csv(path, policy: MixturePolicy) -> None:
    lines = ["k,gamma,weight\n"]
    for params, weight in zip(policy.support, policy.weights):
        lines.append(f"{params.saw_length},{_fmt(params.energy_bias)},{_fmt(weight)}\n")
    Path(path).write_text("".join(lines))


def write_draws_csv(path, policy: MixturePolicy) -> None:
    lines = ["k,gamma\n"]
    for params in policy.draws:
        lines.append(f"{params.saw_length},{_fmt(params.energy_bias)}\n")
    Path(path).write_text("".join(lines))


def write_adaptation_csv(path, record: AdaptationRecord) -> None:
    lines = ["iteration,k,gamma,z,accept_rate\n"]
    for i, entry in enumerate(record.history, start=1):
        lines.append(
            f"{i},{entry.params.saw_length},{_fmt(entry.params.energy_bias)},"
            f"{_fmt(entry.score)},{_fmt(entry.accept_rate)}\n"
        )
    Path(path).write_text("".join(lines))


def config_sha256(config: ExperimentConfig) -> str:
    import hashlib

    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def build_manifest(config: ExperimentConfig, model: BoltzmannModel | None = None) -> dict:
    """Expansion of the experiment protocol; contains no wall-clock data so
    reruns with the same config and seed are byte-identical."""
    import numba
    import scipy

    if model is None:
        model = build_model_from_config(config.model)
    per_arm = {}
    for arm in config.arms:
        info: dict = {"kind": arm.kind}
        if arm.kind == "kawasaki":
            info["k_set"] = [1]
            info["gamma_set"] = [0.0]
        elif arm.kind == "expert":
            info["k_set"] = [int(k) for k in arm.k_values]
            info["gamma_set"] = [float(arm.gamma)]
        else:
            info["k_set"] = {"min": 1, "max": int(arm.k_max)}
            info["gamma_set"] = {"min": 0.0, "max": float(arm.gamma_max)}
        if arm.kind == "bayesopt":
            acfg = config.adaptation_config(arm.box)
            info["adaptation"] = {
                "num_adaptations": acfg.num_adaptations,
                "steps_per_adaptation": acfg.steps_per_adaptation,
                "total_steps": acfg.num_adaptations * acfg.steps_per_adaptation,
                "init_design_size": acfg.init_design_size,
            }
        per_arm[arm.name] = info
    return {
        "config": config.to_dict(),
        "config_sha256": config_sha256(config),
        "master_seed": config.master_seed,
        "model": {
            "topology": model.topology,
            "num_sites": model.num_sites,
            "num_edges": model.num_edges,
            "beta": model.inv_temperature,
            "temperature": 1.0 / model.inv_temperature,
            "constraint_distance": config.constraint_distance,
        },
        "expansion": {
            "arms": [arm.name for arm in config.arms],
            "num_runs": config.num_runs,
            "steps_per_run": config.steps_per_run,
            "burn_in": config.burn_in,
            "per_arm": per_arm,
        },
        "seed_streams": {
            "initial_state": {"spawn_key": [0, "run"]},
            "unit": {"spawn_key": [1, "crc32(arm_name)", "run"]},
        },
        "versions": {
            "bayesmc": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }


def write_outputs(
    config: ExperimentConfig,
    records: list[RunRecord],
    out_dir,
    max_lag: int = 2000,
) -> list[str]:
    """Write the full output tree for a finished experiment; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, writer, *args) -> None:
        path = out / name
        writer(path, *args)
        written.append(str(path))

    for rec in records:
        base = f"{rec.arm}_{rec.run_index}"
        emit(f"run_{base}.csv", write_run_csv, rec)
        if rec.policy is not None:
            emit(f"policy_{base}.csv", write_policy_csv, rec.policy)
            emit(f"draws_{base}.csv", write_draws_csv, rec.policy)
        if rec.adaptation is not None:
            emit(f"adapt_{base}.csv", write_adaptation_csv, rec.adaptation)
            gp_path = out / f"gp_{base}.json"
            gp_path.write_text(json.dumps(snapshot_to_dict(rec.adaptation.gp_snapshot)))
            written.append(str(gp_path))

    effective_lag = min(max_lag, config.steps_per_run - config.burn_in - 1)
    if config.num_runs >= 2:
        for arm, (mean, stderr) in aggregate_acf(records, config.burn_in, effective_lag).items():
            emit(f"acf_{arm}.csv", write_acf_csv, mean, stderr)
    for arm, means in mean_energy_curve(records).items():
        emit(f"energy_{arm}.csv", write_energy_csv, means)

    manifest = build_manifest(config)
    manifest["outputs"] = sorted(Path(p).name for p in written)
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(str(manifest_path))
    return written
