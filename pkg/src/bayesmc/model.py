"""Binary pairwise energy models and the Hamming-constrained state space.

A model is an undirected weighted graph over N binary sites plus per-site
biases and an inverse temperature.  The energy of a configuration x in
{0,1}^N is

    E(x) = - sum_{edges {i,j}} J_ij x_i x_j - sum_i b_i x_i

where every unordered edge is summed exactly once.  The target distribution
is pi(x) proportional to exp(-beta * E(x)), optionally restricted to the set
of states at exact Hamming distance n from a reference state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import DimensionMismatchError, UnsupportedTopologyError

# Flips between from-scratch recomputes of the cached energy/local fields,
# bounding float drift from incremental updates.
REANCHOR_INTERVAL = 10_000

TOPOLOGIES = ("grid2d", "cube3d", "rbm", "custom")


@njit(cache=True)
def _flip_site(bits, fields, site, indptr, nbr_sites, nbr_weights):
    """Toggle one bit in place, update neighbour local fields, return dE."""
    old = bits[site]
    d_energy = (1.0 - 2.0 * old) * (-fields[site])
    bits[site] = 1 - old
    sign = -1.0 if old == 1 else 1.0
    for a in range(indptr[site], indptr[site + 1]):
        fields[nbr_sites[a]] += sign * nbr_weights[a]
    return d_energy


@dataclass
class BoltzmannModel:
    """Immutable energy model: share freely, never mutate after construction.

    Edges are stored once per unordered pair {i, j} with i < j, plus a CSR
    adjacency view used for O(degree) local-field updates.
    """

    num_sites: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_weights: np.ndarray
    biases: np.ndarray
    inv_temperature: float
    topology: str = "custom"
    seed: int | None = None
    nbr_indptr: np.ndarray = field(repr=False, default=None)
    nbr_sites: np.ndarray = field(repr=False, default=None)
    nbr_weights: np.ndarray = field(repr=False, default=None)

    @property
    def num_edges(self) -> int:
        return int(self.edge_i.shape[0])

    def coupling(self, i: int, j: int) -> float:
        """Symmetric edge-weight lookup; 0.0 for non-adjacent pairs."""
        a, b = (i, j) if i < j else (j, i)
        mask = (self.edge_i == a) & (self.edge_j == b)
        idx = np.flatnonzero(mask)
        return float(self.edge_weights[idx[0]]) if idx.size else 0.0

    def degree(self, i: int) -> int:
        return int(self.nbr_indptr[i + 1] - self.nbr_indptr[i])


def from_edges(
    num_sites: int,
    edges,
    biases,
    beta: float,
    topology: str = "custom",
    seed: int | None = None,
) -> BoltzmannModel:
    """Build a model from (i, j, weight) unordered edges.

    `edges` may be any iterable of triples or a pre-built (i, j, w) column
    triple; duplicates and self-pairs are rejected.
    """
    if not (math.isfinite(beta) and beta > 0):
        raise ValueError(f"inverse temperature must be finite and > 0, got {beta}")
    if topology not in TOPOLOGIES:
        raise UnsupportedTopologyError(f"unknown topology tag {topology!r}")
    biases = np.asarray(biases, dtype=np.float64)
    if biases.shape != (num_sites,):
        raise DimensionMismatchError(
            f"biases shape {biases.shape} does not match {num_sites} sites"
        )

    if isinstance(edges, tuple) and len(edges) == 3:
        raw_i, raw_j, raw_w = edges
    else:
        triples = list(edges)
        raw_i = [t[0] for t in triples]
        raw_j = [t[1] for t in triples]
        raw_w = [t[2] for t in triples]
    raw_i = np.asarray(raw_i, dtype=np.int64)
    raw_j = np.asarray(raw_j, dtype=np.int64)
    edge_w = np.asarray(raw_w, dtype=np.float64)

    if raw_i.size:
        if raw_i.min() < 0 or raw_j.min() < 0 or max(raw_i.max(), raw_j.max()) >= num_sites:
            raise DimensionMismatchError(f"edge endpoint out of range for N={num_sites}")
        if np.any(raw_i == raw_j):
            raise ValueError("self-pairs {i,i} are not allowed")
    edge_i = np.minimum(raw_i, raw_j)
    edge_j = np.maximum(raw_i, raw_j)
    pair_key = edge_i * num_sites + edge_j
    if np.unique(pair_key).shape[0] != pair_key.shape[0]:
        raise ValueError("duplicate unordered edges are not allowed")

    # CSR adjacency: each edge appears in both endpoint rows.
    rows = np.concatenate([edge_i, edge_j])
    cols = np.concatenate([edge_j, edge_i])
    both_w = np.concatenate([edge_w, edge_w])
    order = np.argsort(rows, kind="stable")
    sites = cols[order]
    weights = both_w[order]
    counts = np.bincount(rows, minlength=num_sites)
    indptr = np.zeros(num_sites + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])

    return BoltzmannModel(
        num_sites=num_sites,
        edge_i=edge_i,
        edge_j=edge_j,
        edge_weights=edge_w,
        biases=biases,
        inv_temperature=float(beta),
        topology=topology,
        seed=seed,
        nbr_indptr=indptr,
        nbr_sites=sites,
        nbr_weights=weights,
    )


def _check_bits(model: BoltzmannModel, bits) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.shape != (model.num_sites,):
        raise DimensionMismatchError(
            f"state of length {bits.shape} does not match {model.num_sites} sites"
        )
    return bits.astype(np.int8)


def energy(model: BoltzmannModel, bits) -> float:
    """From-scratch energy; each unordered edge counted once."""
    x = _check_bits(model, bits).astype(np.float64)
    pair = float(x[model.edge_i] @ (model.edge_weights * x[model.edge_j]))
    return -pair - float(model.biases @ x)


def local_fields(model: BoltzmannModel, bits) -> np.ndarray:
    """From-scratch local fields h_i = sum_j J_ij x_j + b_i."""
    x = _check_bits(model, bits).astype(np.float64)
    h = model.biases.copy()
    np.add.at(h, model.edge_i, model.edge_weights * x[model.edge_j])
    np.add.at(h, model.edge_j, model.edge_weights * x[model.edge_i])
    return h


@dataclass
class BitState:
    """Mutable chain state with cached energy and local fields.

    Single-owner: never share one instance across concurrent chains.
    """

    bits: np.ndarray
    energy: float
    local_fields: np.ndarray
    flips_since_anchor: int = 0

    @classmethod
    def from_bits(cls, model: BoltzmannModel, bits) -> "BitState":
        b = _check_bits(model, bits)
        return cls(bits=b.copy(), energy=energy(model, b), local_fields=local_fields(model, b))

    def copy(self) -> "BitState":
        return BitState(
            bits=self.bits.copy(),
            energy=self.energy,
            local_fields=self.local_fields.copy(),
            flips_since_anchor=self.flips_since_anchor,
        )

    def reanchor(self, model: BoltzmannModel) -> None:
        """Recompute the caches from scratch, bounding incremental drift."""
        self.energy = energy(model, self.bits)
        self.local_fields = local_fields(model, self.bits)
        self.flips_since_anchor = 0

    def count_flips(self, model: BoltzmannModel, nflips: int) -> None:
        self.flips_since_anchor += nflips
        if self.flips_since_anchor >= REANCHOR_INTERVAL:
            self.reanchor(model)


def delta_energy(model: BoltzmannModel, state: BitState, site: int) -> float:
    """Energy change of flipping `site`, from the cached local field (O(1))."""
    if not 0 <= site < model.num_sites:
        raise DimensionMismatchError(f"site {site} out of range for N={model.num_sites}")
    return float((1.0 - 2.0 * state.bits[site]) * (-state.local_fields[site]))


def apply_flip(state: BitState, site: int, model: BoltzmannModel) -> BitState:
    """Flip one bit in place, updating the caches in O(degree)."""
    if not 0 <= site < model.num_sites:
        raise DimensionMismatchError(f"site {site} out of range for N={model.num_sites}")
    d = _flip_site(
        state.bits,
        state.local_fields,
        site,
        model.nbr_indptr,
        model.nbr_sites,
        model.nbr_weights,
    )
    state.energy += d
    state.count_flips(model, 1)
    return state


@dataclass
class ConstraintSpec:
    """States at exact Hamming distance `distance` from `reference`."""

    reference: np.ndarray
    distance: int

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=np.int8)
        n = self.reference.shape[0]
        if not 0 <= self.distance <= n:
            raise ValueError(f"distance {self.distance} outside 0..{n}")


def all_zero_constraint(num_sites: int, distance: int) -> ConstraintSpec:
    return ConstraintSpec(reference=np.zeros(num_sites, dtype=np.int8), distance=distance)


def hamming_to_reference(bits, spec: ConstraintSpec) -> int:
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape != spec.reference.shape:
        raise DimensionMismatchError(
            f"state length {bits.shape} does not match reference {spec.reference.shape}"
        )
    return int(np.count_nonzero(bits != spec.reference))


def satisfies_constraint(bits, spec: ConstraintSpec) -> bool:
    return hamming_to_reference(bits, spec) == spec.distance


def build_grid2d(
    width: int,
    height: int,
    coupling: float = 1.0,
    bias: float = 0.0,
    beta: float = 1.0,
) -> BoltzmannModel:
    """Toroidal rectangular lattice; every site has exactly four neighbours."""
    if width < 3 or height < 3:
        raise UnsupportedTopologyError(
            "periodic grid sides must be >= 3 (smaller sides double edges)"
        )
    n = width * height
    edges = []
    for r in range(height):
        for c in range(width):
            s = r * width + c
            edges.append((s, r * width + (c + 1) % width, coupling))
            edges.append((s, ((r + 1) % height) * width + c, coupling))
    biases = np.full(n, float(bias))
    return from_edges(n, edges, biases, beta, topology="grid2d")


def build_cube3d(side: int, beta: float = 1.0, seed: int = 0) -> BoltzmannModel:
    """Toroidal cubic lattice, degree 6, couplings drawn uniformly from {-1,+1}."""
    if side < 3:
        raise UnsupportedTopologyError(
            "periodic cube side must be >= 3 (smaller sides double edges)"
        )
    n = side**3
    rng = np.random.default_rng(seed)

    def sid(x, y, z):
        return (x * side + y) * side + z

    pairs = []
    for x in range(side):
        for y in range(side):
            for z in range(side):
                s = sid(x, y, z)
                pairs.append((s, sid((x + 1) % side, y, z)))
                pairs.append((s, sid(x, (y + 1) % side, z)))
                pairs.append((s, sid(x, y, (z + 1) % side)))
    signs = rng.integers(0, 2, size=len(pairs)) * 2 - 1
    edges = [(i, j, float(s)) for (i, j), s in zip(pairs, signs)]
    return from_edges(n, edges, np.zeros(n), beta, topology="cube3d", seed=seed)


def build_rbm(num_visible: int, num_hidden: int, beta: float = 1.0, seed: int = 0) -> BoltzmannModel:
    """Complete bipartite model with synthetic Gabor-filter couplings.

    Visible sites sit on a square pixel grid; each hidden site carries one
    Gabor kernel (seeded random centre, orientation, phase, scale) evaluated
    at every visible position.  The weight matrix is rescaled to unit
    standard deviation.  Hidden sites are indexed after the visible ones.
    """
    if num_visible < 1 or num_hidden < 1:
        raise ValueError("both partitions need at least one site")
    rng = np.random.default_rng(seed)
    g = math.ceil(math.sqrt(num_visible))
    pos = np.arange(num_visible)
    px = (pos // g).astype(np.float64)
    py = (pos % g).astype(np.float64)

    cx = rng.integers(0, g, size=num_hidden).astype(np.float64)
    cy = rng.integers(0, g, size=num_hidden).astype(np.float64)
    orient = rng.uniform(0.0, math.pi, size=num_hidden)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=num_hidden)
    sigma = rng.uniform(0.05 * g, 0.25 * g, size=num_hidden)
    wavelength = sigma * rng.uniform(1.5, 3.0, size=num_hidden)

    dx = px[:, None] - cx[None, :]
    dy = py[:, None] - cy[None, :]
    xr = dx * np.cos(orient)[None, :] + dy * np.sin(orient)[None, :]
    yr = -dx * np.sin(orient)[None, :] + dy * np.cos(orient)[None, :]
    envelope = np.exp(-(xr**2 + yr**2) / (2.0 * sigma[None, :] ** 2))
    weights = envelope * np.cos(2.0 * math.pi * xr / wavelength[None, :] + phase[None, :])
    std = weights.std()
    if std > 0:
        weights = weights / std

    n = num_visible + num_hidden
    vi, hj = np.meshgrid(np.arange(num_visible), np.arange(num_hidden), indexing="ij")
    edges = (vi.ravel(), num_visible + hj.ravel(), weights.ravel())
    return from_edges(n, edges, np.zeros(n), beta, topology="rbm", seed=seed)


def model_to_dict(model: BoltzmannModel) -> dict:
    return {
        "topology": model.topology,
        "n_sites": model.num_sites,
        "beta": model.inv_temperature,
        "edges": [
            [int(i), int(j), float(w)]
            for i, j, w in zip(model.edge_i, model.edge_j, model.edge_weights)
        ],
        "biases": [float(b) for b in model.biases],
        "seed": model.seed,
    }


def model_from_dict(data: dict) -> BoltzmannModel:
    return from_edges(
        num_sites=int(data["n_sites"]),
        edges=data["edges"],
        biases=np.asarray(data["biases"], dtype=np.float64),
        beta=float(data["beta"]),
        topology=data.get("topology", "custom"),
        seed=data.get("seed"),
    )


def save_model(model: BoltzmannModel, path) -> None:
    """Dump to JSON; float round-trip is bit-exact (shortest-repr encoding)."""
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> BoltzmannModel:
    return model_from_dict(json.loads(Path(path).read_text()))
