"""The adaptation loop: score parameter settings, fit the surrogate, pick
the next setting by maximizing expected improvement with DIRECT.

One continuing Markov chain runs through the whole adaptation phase (no
resets between evaluations unless `restart_chain` is set): each iteration
advances the chain L steps under the candidate parameters, scores the L
visited energies, and feeds the observation to the surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import InfeasibleWalkError, NumericalError
from .gp import (
    Dataset,
    GPPosterior,
    Hyperparams,
    default_hyperparams,
    fit_hyperparams,
    fit_posterior,
    latin_hypercube,
    predict,
)
from .model import BitState, BoltzmannModel, ConstraintSpec, hamming_to_reference
from .objective import MIN_WINDOW, performance_criterion
from .samplers import ParamBox, SamplerParams, im_step

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _norm_pdf(u: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * u * u)


def _norm_cdf(u: float) -> float:
    return 0.5 * math.erfc(-u / _SQRT2)


def expected_improvement(mean: float, std: float, best: float, xi: float = 0.0) -> float:
    """Expected gain over `best + xi` for a N(mean, std^2) belief (maximization)."""
    if any(math.isnan(v) for v in (mean, std, best, xi)):
        raise ValueError("expected_improvement got NaN input")
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    gap = mean - best - xi
    if std == 0.0:
        return max(0.0, gap)
    u = gap / std
    return std * (u * _norm_cdf(u) + _norm_pdf(u))


@dataclass
class _Rect:
    center: np.ndarray
    levels: np.ndarray  # per-dimension trisection depth; side_d = 3^-levels[d]
    value: float

    @property
    def size(self) -> float:
        return 0.5 * math.sqrt(float(np.sum(3.0 ** (-2.0 * self.levels))))


def _potentially_optimal(rects: list[_Rect]) -> list[_Rect]:
    """Pareto-nondominated in (size, value): per-size champions, then keep
    champions whose value strictly beats every larger size class."""
    by_size: dict[float, _Rect] = {}
    for r in rects:
        key = round(r.size, 12)
        cur = by_size.get(key)
        if (
            cur is None
            or r.value > cur.value
            or (r.value == cur.value and tuple(r.center) < tuple(cur.center))
        ):
            by_size[key] = r
    chosen = []
    running = -math.inf
    for key in sorted(by_size, reverse=True):
        r = by_size[key]
        if r.value > running:
            chosen.append(r)
            running = r.value
    return chosen


def direct_maximize(
    objective: Callable[[np.ndarray], float], dim: int, budget: int
) -> tuple[np.ndarray, float]:
    """DIvided-RECTangles global maximization on the unit hypercube.

    Deterministic: trisects potentially-optimal rectangles (larger first,
    ties to lexicographically smaller centers) until `budget` evaluations.
    Returns the best evaluated point and its value.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    evals = 0

    def call(point: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        return float(objective(point))

    center = np.full(dim, 0.5)
    best_point, best_value = center, call(center)
    rects = [_Rect(center, np.zeros(dim, dtype=np.int64), best_value)]

    while evals < budget:
        progressed = False
        for rect in _potentially_optimal(rects):
            if evals >= budget:
                break
            depth = int(rect.levels.min())
            long_dims = [d for d in range(dim) if rect.levels[d] == depth]
            delta = 3.0 ** (-(depth + 1))
            sampled = []
            for d in long_dims:
                if evals + 2 > budget:
                    break
                lo_pt = rect.center.copy()
                lo_pt[d] -= delta
                hi_pt = rect.center.copy()
                hi_pt[d] += delta
                f_lo = call(lo_pt)
                f_hi = call(hi_pt)
                for pt, fv in ((lo_pt, f_lo), (hi_pt, f_hi)):
                    if fv > best_value:
                        best_point, best_value = pt, fv
                sampled.append((d, lo_pt, f_lo, hi_pt, f_hi))
            if not sampled:
                break
            progressed = True
            # Best sampled values claim the largest subrectangles.
            sampled.sort(key=lambda s: max(s[2], s[4]), reverse=True)
            levels = rect.levels.copy()
            for d, lo_pt, f_lo, hi_pt, f_hi in sampled:
                levels = levels.copy()
                levels[d] += 1
                rects.append(_Rect(lo_pt, levels, f_lo))
                rects.append(_Rect(hi_pt, levels, f_hi))
            rect.levels = levels
        if not progressed:
            break  # remaining budget < one pair of evaluations
    return best_point, best_value


class HistoryEntry(NamedTuple):
    params: SamplerParams
    location: tuple[float, float]  # normalized (k, gamma) coordinates
    score: float
    accept_rate: float


@dataclass
class AdaptationConfig:
    param_box: ParamBox
    num_adaptations: int = 100
    steps_per_adaptation: int = 100
    init_design_size: int = 10
    ei_exploration: float = 0.01
    direct_budget: int = 500
    restart_chain: bool = False
    hyper_refit_interval: int = 10

    def __post_init__(self):
        if not (self.num_adaptations >= self.init_design_size >= 1):
            raise ValueError(
                f"need num_adaptations >= init_design_size >= 1, got "
                f"{self.num_adaptations} and {self.init_design_size}"
            )
        if self.steps_per_adaptation < MIN_WINDOW:
            raise ValueError(
                f"steps_per_adaptation must be >= {MIN_WINDOW} for the objective"
            )
        if self.ei_exploration < 0 or self.direct_budget < 1:
            raise ValueError("ei_exploration must be >= 0 and direct_budget >= 1")


@dataclass
class AdaptationRecord:
    history: list[HistoryEntry]
    gp_snapshot: GPPosterior | None
    final_state: BitState | None
    energies: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def total_steps(self) -> int:
        return int(self.energies.shape[0])


class AdaptationAborted(RuntimeError):
    """Adaptation failed part-way; `.record` holds the partial history."""

    def __init__(self, message: str, record: AdaptationRecord):
        super().__init__(message)
        self.record = record


def adapt(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    config: AdaptationConfig,
    initial_state: BitState,
    rng: np.random.Generator,
) -> AdaptationRecord:
    """Run the full adaptation phase and return the observation history,
    the fitted surrogate snapshot, and the final chain state."""
    n = hamming_to_reference(initial_state.bits, spec)
    box = config.param_box
    if box.k_max > min(n, model.num_sites - n):
        raise InfeasibleWalkError(
            f"box k_max={box.k_max} infeasible for n={n}, N={model.num_sites}"
        )

    state = initial_state.copy()
    design = latin_hypercube(config.init_design_size, 2, rng)
    hyper = default_hyperparams(2)
    history: list[HistoryEntry] = []
    locations: list[np.ndarray] = []
    scores: list[float] = []
    all_energies: list[np.ndarray] = []
    steps = config.steps_per_adaptation

    def partial() -> AdaptationRecord:
        return AdaptationRecord(
            history=history,
            gp_snapshot=None,
            final_state=state,
            energies=np.concatenate(all_energies) if all_energies else np.zeros(0),
        )

    try:
        for i in range(config.num_adaptations):
            if i < config.init_design_size:
                loc = design[i]
            else:
                data = Dataset(np.array(locations), np.array(scores))
                if (i - config.init_design_size) % config.hyper_refit_interval == 0:
                    hyper = fit_hyperparams(data, rng=rng)
                post = fit_posterior(data, hyper)
                best = max(scores)
                xi = config.ei_exploration

                def acquisition(theta: np.ndarray) -> float:
                    mean, var = predict(post, theta)
                    return expected_improvement(mean, math.sqrt(var), best, xi)

                loc, _ = direct_maximize(acquisition, 2, config.direct_budget)

            params = box.denormalize(loc[0], loc[1])
            if config.restart_chain:
                state = initial_state.copy()
            energies = np.empty(steps)
            accepted = 0
            for t in range(steps):
                state, acc = im_step(model, spec, state, params, rng)
                energies[t] = state.energy
                accepted += acc
            score = performance_criterion(energies).value
            locations.append(np.asarray(loc, dtype=np.float64))
            scores.append(score)
            all_energies.append(energies)
            history.append(
                HistoryEntry(
                    params=params,
                    location=(float(loc[0]), float(loc[1])),
                    score=score,
                    accept_rate=accepted / steps,
                )
            )
    except (InfeasibleWalkError, NumericalError) as exc:
        raise AdaptationAborted(
            f"adaptation aborted at iteration {len(history)}: {exc}", partial()
        ) from exc

    snapshot = fit_posterior(Dataset(np.array(locations), np.array(scores)), hyper)
    return AdaptationRecord(
        history=history,
        gp_snapshot=snapshot,
        final_state=state,
        energies=np.concatenate(all_energies),
    )
