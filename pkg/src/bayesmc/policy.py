"""Sampling-phase policies: a distribution over sampler parameters and the
mixture-of-kernels chain it drives.

The Boltzmann policy weights a (k, gamma) grid proportionally to
exp(surrogate posterior mean).  The other experimental arms are degenerate
instances of the same machinery: a uniform grid policy, an expert policy
(fixed gamma, uniform k over a listed set), and point masses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GPPosterior, predict_many
from .model import BitState, BoltzmannModel, ConstraintSpec, hamming_to_reference
from .errors import InfeasibleWalkError
from .samplers import ParamBox, SamplerParams, im_step

DEFAULT_GAMMA_GRID = 100
DEFAULT_NUM_DRAWS = 1000


@dataclass
class MixturePolicy:
    """Support points with weights, plus the M kernel draws actually used."""

    support: list[SamplerParams]
    weights: np.ndarray
    draws: list[SamplerParams]


def _grid_support(box: ParamBox, grid_gamma: int) -> tuple[list[SamplerParams], np.ndarray]:
    """All k in {1..k_max} crossed with grid_gamma evenly spaced gamma values."""
    gammas = np.linspace(0.0, box.gamma_max, grid_gamma)
    support = [
        SamplerParams(k, float(g)) for k in range(1, box.k_max + 1) for g in gammas
    ]
    locations = np.array([box.normalize(p) for p in support])
    return support, locations


def softmax_weights(values: np.ndarray) -> np.ndarray:
    """exp(values) normalized to a probability vector (log-sum-exp safe)."""
    v = np.asarray(values, dtype=np.float64)
    shifted = v - v.max()
    w = np.exp(shifted)
    return w / w.sum()


def build_boltzmann_policy(
    gp_post: GPPosterior, box: ParamBox, grid_gamma: int = DEFAULT_GAMMA_GRID
) -> tuple[list[SamplerParams], np.ndarray]:
    """Weights proportional to exp(posterior mean) over the parameter grid."""
    support, locations = _grid_support(box, grid_gamma)
    means, _ = predict_many(gp_post, locations)
    return support, softmax_weights(means)


def draw_policy(
    support: list[SamplerParams],
    weights: np.ndarray,
    num_draws: int,
    rng: np.random.Generator,
) -> MixturePolicy:
    """num_draws i.i.d. inverse-CDF draws (with replacement) from the support."""
    if num_draws < 1:
        raise ValueError(f"num_draws must be >= 1, got {num_draws}")
    weights = np.asarray(weights, dtype=np.float64)
    if len(support) != weights.shape[0]:
        raise ValueError("support and weights differ in length")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(num_draws), side="right")
    return MixturePolicy(
        support=list(support),
        weights=weights,
        draws=[support[i] for i in idx],
    )


def uniform_policy(
    box: ParamBox,
    num_draws: int,
    rng: np.random.Generator,
    grid_gamma: int = DEFAULT_GAMMA_GRID,
) -> MixturePolicy:
    """Uniform over the (k, gamma) grid: the naive baseline arm."""
    support, _ = _grid_support(box, grid_gamma)
    weights = np.full(len(support), 1.0 / len(support))
    return draw_policy(support, weights, num_draws, rng)


def expert_policy(
    k_values,
    gamma: float,
    num_draws: int,
    rng: np.random.Generator,
) -> MixturePolicy:
    """Fixed expert gamma with k drawn uniformly from a listed set."""
    support = [SamplerParams(int(k), float(gamma)) for k in k_values]
    weights = np.full(len(support), 1.0 / len(support))
    return draw_policy(support, weights, num_draws, rng)


def point_policy(params: SamplerParams, num_draws: int = 1) -> MixturePolicy:
    """Degenerate policy: every draw is the same parameter setting."""
    return MixturePolicy(
        support=[params], weights=np.ones(1), draws=[params] * num_draws
    )


@dataclass
class SamplingResult:
    """Energy trace of the sampling phase plus per-step kernel bookkeeping."""

    energies: np.ndarray
    accepted: np.ndarray
    k_used: np.ndarray
    gamma_used: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.accepted.size else 0.0


def sampling_phase(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    policy: MixturePolicy,
    initial_state: BitState,
    num_steps: int,
    rng: np.random.Generator,
) -> SamplingResult:
    """Run the mixture chain: each step applies one uniformly chosen draw.

    The energy of every visited state (accepted or retained) is recorded.
    """
    n = hamming_to_reference(initial_state.bits, spec)
    limit = min(n, model.num_sites - n)
    worst = max(p.saw_length for p in policy.draws)
    if worst > limit:
        raise InfeasibleWalkError(
            f"policy draw k={worst} infeasible for n={n}, N={model.num_sites}"
        )
    state = initial_state.copy()
    num_draws = len(policy.draws)
    energies = np.empty(num_steps)
    accepted = np.zeros(num_steps, dtype=bool)
    k_used = np.empty(num_steps, dtype=np.int64)
    gamma_used = np.empty(num_steps)
    for t in range(num_steps):
        params = policy.draws[int(rng.integers(num_draws))]
        state, acc = im_step(model, spec, state, params, rng)
        energies[t] = state.energy
        accepted[t] = acc
        k_used[t] = params.saw_length
        gamma_used[t] = params.energy_bias
    return SamplingResult(
        energies=energies, accepted=accepted, k_used=k_used, gamma_used=gamma_used
    )
