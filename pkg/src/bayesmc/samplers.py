"""Metropolis-Hastings kernels on the Hamming-constrained state space.

Two proposal mechanisms, both exchange moves that preserve the Hamming
distance to the reference state:

* Kawasaki: a two-stage uniform flip (any bit, then any restoring bit other
  than the first).  The induced proposal over exchange outcomes is uniform,
  hence symmetric.
* The walk sampler: k successive exchanges forming a self-avoiding walk.
  Each half-exchange selects a site with probability proportional to
  exp(gamma * E(state after the flip)); gamma > 0 favours higher-energy
  intermediate states.  Forward and reverse walk densities are accumulated
  in log space so the MH correction is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import DimensionMismatchError, InfeasibleWalkError, NoValidMoveError
from .model import (
    BitState,
    BoltzmannModel,
    ConstraintSpec,
    _flip_site,
    hamming_to_reference,
)


class SamplerParams(NamedTuple):
    """Tunable pair theta = (walk length k, energy bias gamma)."""

    saw_length: int
    energy_bias: float


@dataclass(frozen=True)
class ParamBox:
    """Search box: k in {1..k_max}, gamma in [0, gamma_max]."""

    k_max: int
    gamma_max: float

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if not (math.isfinite(self.gamma_max) and self.gamma_max > 0):
            raise ValueError(f"gamma_max must be finite and > 0, got {self.gamma_max}")

    def contains(self, params: SamplerParams) -> bool:
        return (
            1 <= params.saw_length <= self.k_max
            and 0.0 <= params.energy_bias <= self.gamma_max
        )

    def normalize(self, params: SamplerParams) -> tuple[float, float]:
        u = 0.0 if self.k_max == 1 else (params.saw_length - 1) / (self.k_max - 1)
        return (u, params.energy_bias / self.gamma_max)

    def denormalize(self, u: float, v: float) -> SamplerParams:
        k = 1 if self.k_max == 1 else 1 + round(u * (self.k_max - 1))
        k = min(max(k, 1), self.k_max)
        g = min(max(v, 0.0), 1.0) * self.gamma_max
        return SamplerParams(saw_length=int(k), energy_bias=float(g))


@dataclass
class ProposalOutcome:
    """A walk proposal with its forward/reverse generation log-densities.

    walk lists the exchanges in order as (site flipped down, site flipped
    up); all 2k sites are distinct.
    """

    proposal: BitState
    log_q_forward: float
    log_q_reverse: float
    walk: list[tuple[int, int]]


def mh_accept(log_pi_ratio: float, log_q_ratio: float, rng: np.random.Generator) -> bool:
    """Accept with probability min{1, exp(log_pi_ratio + log_q_ratio)}."""
    if math.isnan(log_pi_ratio) or math.isnan(log_q_ratio):
        raise ValueError("MH ratio is NaN")
    total = log_pi_ratio + log_q_ratio
    if math.isnan(total):
        raise ValueError("MH ratio is NaN (opposite infinities)")
    u = rng.random()
    log_u = math.log(u) if u > 0.0 else -math.inf
    return log_u < total


@njit(cache=True)
def _kawasaki_propose(bits, fields, ref, indptr, nbr_sites, nbr_weights, u_first, u_second):
    """Two-stage uniform exchange, applied in place.  Returns (s1, s2, dE)."""
    n_sites = bits.shape[0]
    first = int(u_first * n_sites)
    if first >= n_sites:
        first = n_sites - 1
    first_up = bits[first] != ref[first]
    # Second flip restores the Hamming distance: opposite kind, not `first`.
    m = 0
    for i in range(n_sites):
        if i != first and (bits[i] != ref[i]) != first_up:
            m += 1
    pick = int(u_second * m)
    if pick >= m:
        pick = m - 1
    second = -1
    cnt = 0
    for i in range(n_sites):
        if i != first and (bits[i] != ref[i]) != first_up:
            if cnt == pick:
                second = i
                break
            cnt += 1
    d = _flip_site(bits, fields, first, indptr, nbr_sites, nbr_weights)
    d += _flip_site(bits, fields, second, indptr, nbr_sites, nbr_weights)
    return first, second, d


@njit(cache=True)
def _stage_pick(bits, fields, ref, touched, want_up, gamma, u):
    """Boltzmann-weighted site selection among untouched up/down sites.

    Weights are exp(gamma * dE_i) up to the common exp(gamma * E) factor,
    normalized with max-subtraction.  Returns (site, log selection prob).
    """
    n_sites = bits.shape[0]
    mx = -np.inf
    for i in range(n_sites):
        if not touched[i] and (bits[i] != ref[i]) == want_up:
            v = gamma * (1.0 - 2.0 * bits[i]) * (-fields[i])
            if v > mx:
                mx = v
    total = 0.0
    for i in range(n_sites):
        if not touched[i] and (bits[i] != ref[i]) == want_up:
            total += math.exp(gamma * (1.0 - 2.0 * bits[i]) * (-fields[i]) - mx)
    target = u * total
    acc = 0.0
    chosen = -1
    for i in range(n_sites):
        if not touched[i] and (bits[i] != ref[i]) == want_up:
            acc += math.exp(gamma * (1.0 - 2.0 * bits[i]) * (-fields[i]) - mx)
            chosen = i
            if acc >= target:
                break
    logp = gamma * (1.0 - 2.0 * bits[chosen]) * (-fields[chosen]) - mx - math.log(total)
    return chosen, logp


@njit(cache=True)
def _stage_logprob(bits, fields, ref, touched, want_up, gamma, site):
    """Log probability that _stage_pick would select `site`."""
    n_sites = bits.shape[0]
    mx = -np.inf
    for i in range(n_sites):
        if not touched[i] and (bits[i] != ref[i]) == want_up:
            v = gamma * (1.0 - 2.0 * bits[i]) * (-fields[i])
            if v > mx:
                mx = v
    total = 0.0
    for i in range(n_sites):
        if not touched[i] and (bits[i] != ref[i]) == want_up:
            total += math.exp(gamma * (1.0 - 2.0 * bits[i]) * (-fields[i]) - mx)
    return gamma * (1.0 - 2.0 * bits[site]) * (-fields[site]) - mx - math.log(total)


@njit(cache=True)
def _saw_propose(bits, fields, ref, indptr, nbr_sites, nbr_weights, k, gamma, us):
    """k-exchange self-avoiding walk with forward and reverse log-densities.

    Mutates (bits, fields) through the forward walk, snapshots the proposal,
    then replays the exchanges in reverse order (up-site down, down-site up)
    to accumulate the reverse density, restoring the original bits exactly.
    Returns (walk_down, walk_up, log_qf, log_qr, dE, y_bits, y_fields).
    """
    n_sites = bits.shape[0]
    touched = np.zeros(n_sites, dtype=np.bool_)
    walk_down = np.empty(k, dtype=np.int64)
    walk_up = np.empty(k, dtype=np.int64)
    log_qf = 0.0
    d_total = 0.0
    for t in range(k):
        site, lp = _stage_pick(bits, fields, ref, touched, True, gamma, us[2 * t])
        log_qf += lp
        d_total += _flip_site(bits, fields, site, indptr, nbr_sites, nbr_weights)
        touched[site] = True
        walk_down[t] = site
        site, lp = _stage_pick(bits, fields, ref, touched, False, gamma, us[2 * t + 1])
        log_qf += lp
        d_total += _flip_site(bits, fields, site, indptr, nbr_sites, nbr_weights)
        touched[site] = True
        walk_up[t] = site

    y_bits = bits.copy()
    y_fields = fields.copy()

    log_qr = 0.0
    for i in range(n_sites):
        touched[i] = False
    for t in range(k - 1, -1, -1):
        site = walk_up[t]
        log_qr += _stage_logprob(bits, fields, ref, touched, True, gamma, site)
        _flip_site(bits, fields, site, indptr, nbr_sites, nbr_weights)
        touched[site] = True
        site = walk_down[t]
        log_qr += _stage_logprob(bits, fields, ref, touched, False, gamma, site)
        _flip_site(bits, fields, site, indptr, nbr_sites, nbr_weights)
        touched[site] = True

    return walk_down, walk_up, log_qf, log_qr, d_total, y_bits, y_fields


def _exchange_counts(model: BoltzmannModel, spec: ConstraintSpec, state: BitState) -> int:
    n = hamming_to_reference(state.bits, spec)
    if state.bits.shape[0] != model.num_sites:
        raise DimensionMismatchError("state does not match model size")
    return n


def kawasaki_step(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    state: BitState,
    rng: np.random.Generator,
) -> tuple[BitState, bool]:
    """One Kawasaki exchange with MH acceptance, in place."""
    n = _exchange_counts(model, spec, state)
    if n == 0 or n == model.num_sites:
        raise NoValidMoveError(f"no exchange moves exist at n={n} of {model.num_sites}")
    u = rng.random(2)
    s1, s2, d = _kawasaki_propose(
        state.bits,
        state.local_fields,
        spec.reference,
        model.nbr_indptr,
        model.nbr_sites,
        model.nbr_weights,
        u[0],
        u[1],
    )
    # Proposal is symmetric: q = 1 / (n (N - n)) in both directions.
    accepted = mh_accept(-model.inv_temperature * d, 0.0, rng)
    if accepted:
        state.energy += d
        state.count_flips(model, 2)
    else:
        _flip_site(state.bits, state.local_fields, s2, model.nbr_indptr, model.nbr_sites, model.nbr_weights)
        _flip_site(state.bits, state.local_fields, s1, model.nbr_indptr, model.nbr_sites, model.nbr_weights)
        state.count_flips(model, 4)
    return state, accepted


def _validate_walk(model: BoltzmannModel, spec: ConstraintSpec, state: BitState, params: SamplerParams) -> int:
    n = _exchange_counts(model, spec, state)
    k = params.saw_length
    if k < 1:
        raise InfeasibleWalkError(f"walk length must be >= 1, got {k}")
    if not (math.isfinite(params.energy_bias) and params.energy_bias >= 0):
        raise ValueError(f"energy bias must be finite and >= 0, got {params.energy_bias}")
    if k > min(n, model.num_sites - n):
        raise InfeasibleWalkError(
            f"walk length {k} exceeds min(n, N-n) = {min(n, model.num_sites - n)}"
        )
    return n


def im_propose(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    state: BitState,
    params: SamplerParams,
    rng: np.random.Generator,
) -> ProposalOutcome:
    """Generate a k-exchange walk proposal; the input state is left unchanged."""
    _validate_walk(model, spec, state, params)
    k = params.saw_length
    us = rng.random(2 * k)
    walk_down, walk_up, log_qf, log_qr, d, y_bits, y_fields = _saw_propose(
        state.bits,
        state.local_fields,
        spec.reference,
        model.nbr_indptr,
        model.nbr_sites,
        model.nbr_weights,
        k,
        params.energy_bias,
        us,
    )
    state.count_flips(model, 4 * k)
    proposal = BitState(bits=y_bits, energy=state.energy + d, local_fields=y_fields)
    walk = [(int(a), int(b)) for a, b in zip(walk_down, walk_up)]
    return ProposalOutcome(
        proposal=proposal, log_q_forward=float(log_qf), log_q_reverse=float(log_qr), walk=walk
    )


def im_step(
    model: BoltzmannModel,
    spec: ConstraintSpec,
    state: BitState,
    params: SamplerParams,
    rng: np.random.Generator,
) -> tuple[BitState, bool]:
    """One walk proposal plus MH acceptance, in place."""
    outcome = im_propose(model, spec, state, params, rng)
    log_pi_ratio = -model.inv_temperature * (outcome.proposal.energy - state.energy)
    accepted = mh_accept(log_pi_ratio, outcome.log_q_reverse - outcome.log_q_forward, rng)
    if accepted:
        state.bits = outcome.proposal.bits
        state.local_fields = outcome.proposal.local_fields
        state.energy = outcome.proposal.energy
    return state, accepted
