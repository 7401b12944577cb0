"""Gaussian-process surrogate of the mixing score over normalized parameters.

All GP computation happens in the unit hypercube; callers map sampler
parameters into [0, 1]^d.  Zero prior mean, anisotropic squared-exponential
(ARD) covariance, exact Cholesky-based predictive equations, and
marginal-likelihood hyperparameter fitting by multi-start coordinate search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-6

# Defaults used until enough observations accumulate to fit by likelihood.
DEFAULT_LENGTHSCALE = 0.3
DEFAULT_NOISE_STD = 0.1

LENGTHSCALE_BOUNDS = (1e-2, 10.0)
NOISE_BOUNDS = (1e-4, 1.0)

FIT_RESTARTS = 10
FIT_EVALS_PER_RESTART = 200


@dataclass(frozen=True)
class Hyperparams:
    lengthscales: np.ndarray
    noise_std: float

    def __post_init__(self):
        object.__setattr__(
            self, "lengthscales", np.asarray(self.lengthscales, dtype=np.float64)
        )
        if not np.all(np.isfinite(self.lengthscales)) or np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be finite and positive")
        if not (math.isfinite(self.noise_std) and self.noise_std > 0):
            raise ValueError("noise_std must be finite and positive")


def default_hyperparams(dim: int) -> Hyperparams:
    return Hyperparams(np.full(dim, DEFAULT_LENGTHSCALE), DEFAULT_NOISE_STD)


@dataclass
class Dataset:
    """Observation set: points in [0,1]^d with noisy objective values."""

    locations: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64)
        if self.locations.ndim != 2:
            self.locations = np.atleast_2d(self.locations)
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.locations.shape[0] != self.observations.shape[0]:
            raise ValueError("locations and observations differ in length")
        if self.locations.size and (
            self.locations.min() < -1e-12 or self.locations.max() > 1 + 1e-12
        ):
            raise ValueError("locations must lie in the unit hypercube")

    def __len__(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]


def empty_dataset(dim: int) -> Dataset:
    return Dataset(np.zeros((0, dim)), np.zeros(0))


def kernel(a, b, hyper: Hyperparams) -> float:
    """ARD squared-exponential: exp(-0.5 * sum ((a_i - b_i) / psi_i)^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape != hyper.lengthscales.shape:
        raise ValueError("point/lengthscale dimension mismatch")
    z = (a - b) / hyper.lengthscales
    return float(np.exp(-0.5 * np.dot(z, z)))


def _kernel_matrix(xa: np.ndarray, xb: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    sa = xa / hyper.lengthscales
    sb = xb / hyper.lengthscales
    d2 = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    return np.exp(-0.5 * np.maximum(d2, 0.0))


@dataclass
class GPPosterior:
    """Fitted surrogate: read-only once constructed."""

    dataset: Dataset
    hyper: Hyperparams
    chol_factor: np.ndarray | None
    alpha: np.ndarray | None


def _factorize(k_matrix: np.ndarray, noise_var: float) -> np.ndarray:
    n = k_matrix.shape[0]
    jitter = JITTER_START
    while True:
        try:
            return scipy.linalg.cholesky(
                k_matrix + (noise_var + jitter) * np.eye(n), lower=True
            )
        except scipy.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > JITTER_MAX:
                raise NumericalError(
                    f"covariance not positive definite even with jitter {JITTER_MAX}"
                ) from None


def fit_posterior(data: Dataset, hyper: Hyperparams) -> GPPosterior:
    """Factorize K + noise^2 I and pre-solve for the predictive weights."""
    if len(data) == 0:
        return GPPosterior(dataset=data, hyper=hyper, chol_factor=None, alpha=None)
    k_matrix = _kernel_matrix(data.locations, data.locations, hyper)
    chol = _factorize(k_matrix, hyper.noise_std**2)
    alpha = scipy.linalg.cho_solve((chol, True), data.observations)
    return GPPosterior(dataset=data, hyper=hyper, chol_factor=chol, alpha=alpha)


def _check_query(post: GPPosterior, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if post.dataset.dim and theta.shape != (post.dataset.dim,):
        raise ValueError(f"query shape {theta.shape} != ({post.dataset.dim},)")
    if theta.min() < -1e-12 or theta.max() > 1 + 1e-12:
        raise ValueError("query must lie in the unit hypercube")
    return theta


def predict(post: GPPosterior, theta) -> tuple[float, float]:
    """Predictive mean and variance at one point (prior (0, 1) when empty)."""
    theta = _check_query(post, theta)
    if len(post.dataset) == 0:
        return 0.0, 1.0
    k_vec = _kernel_matrix(theta[None, :], post.dataset.locations, post.hyper)[0]
    mean = float(k_vec @ post.alpha)
    v = scipy.linalg.solve_triangular(post.chol_factor, k_vec, lower=True)
    var = 1.0 - float(v @ v)
    return mean, max(var, 0.0)


def predict_many(post: GPPosterior, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict over rows of `thetas` (same contract per row)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    if len(post.dataset) == 0:
        return np.zeros(thetas.shape[0]), np.ones(thetas.shape[0])
    k_mat = _kernel_matrix(thetas, post.dataset.locations, post.hyper)
    means = k_mat @ post.alpha
    v = scipy.linalg.solve_triangular(post.chol_factor, k_mat.T, lower=True)
    variances = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
    return means, variances


def log_marginal_likelihood(data: Dataset, hyper: Hyperparams) -> float:
    """-0.5 z^T (K+s^2 I)^{-1} z - 0.5 log det(K+s^2 I) - (i/2) log 2 pi."""
    if len(data) == 0:
        raise ValueError("log marginal likelihood needs at least one observation")
    k_matrix = _kernel_matrix(data.locations, data.locations, hyper)
    chol = _factorize(k_matrix, hyper.noise_std**2)
    alpha = scipy.linalg.cho_solve((chol, True), data.observations)
    return float(
        -0.5 * data.observations @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * len(data) * math.log(2.0 * math.pi)
    )


def _coordinate_search(fn, x0: np.ndarray, lo: np.ndarray, hi: np.ndarray, budget: int):
    """Greedy coordinate-wise adaptive-step ascent within [lo, hi]."""
    x = np.clip(x0, lo, hi).copy()
    best = fn(x)
    evals = 1
    steps = np.full(x.shape[0], 0.5)
    while evals < budget and np.any(steps > 1e-3):
        improved = False
        for j in range(x.shape[0]):
            if evals >= budget:
                break
            for sign in (1.0, -1.0):
                if evals >= budget:
                    break
                cand = x.copy()
                cand[j] = np.clip(cand[j] + sign * steps[j], lo[j], hi[j])
                if cand[j] == x[j]:
                    continue
                val = fn(cand)
                evals += 1
                if val > best:
                    best = val
                    x = cand
                    steps[j] = min(steps[j] * 2.0, hi[j] - lo[j])
                    improved = True
                    break
            else:
                steps[j] *= 0.5
    return x, best


def fit_hyperparams(
    data: Dataset,
    bounds: tuple[tuple[float, float], tuple[float, float]] | None = None,
    rng: np.random.Generator | None = None,
) -> Hyperparams:
    """Maximize the log marginal likelihood over log-(lengthscales, noise).

    Multi-start coordinate search in log space.  With fewer than d + 2
    observations (or if every start fails to factorize) returns defaults.
    """
    dim = data.dim
    if len(data) < dim + 2:
        return default_hyperparams(dim)
    if rng is None:
        rng = np.random.default_rng(0)
    ls_bounds, noise_bounds = bounds if bounds is not None else (LENGTHSCALE_BOUNDS, NOISE_BOUNDS)
    lo = np.log(np.array([ls_bounds[0]] * dim + [noise_bounds[0]]))
    hi = np.log(np.array([ls_bounds[1]] * dim + [noise_bounds[1]]))

    def objective(logx: np.ndarray) -> float:
        hyper = Hyperparams(np.exp(logx[:dim]), float(np.exp(logx[dim])))
        try:
            return log_marginal_likelihood(data, hyper)
        except NumericalError:
            return -np.inf

    defaults = default_hyperparams(dim)
    starts = [np.log(np.concatenate([defaults.lengthscales, [defaults.noise_std]]))]
    starts += [lo + (hi - lo) * rng.random(dim + 1) for _ in range(FIT_RESTARTS - 1)]

    best_x, best_val = None, -np.inf
    for x0 in starts:
        x, val = _coordinate_search(objective, x0, lo, hi, FIT_EVALS_PER_RESTART)
        if val > best_val:
            best_x, best_val = x, val
    if best_x is None or not np.isfinite(best_val):
        return defaults
    return Hyperparams(np.exp(best_x[:dim]), float(np.exp(best_x[dim])))


def latin_hypercube(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """count points in [0,1]^dim, one per equal-width bin in every dimension."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out = np.empty((count, dim))
    for j in range(dim):
        out[:, j] = (rng.permutation(count) + rng.random(count)) / count
    return out


def snapshot_to_dict(post: GPPosterior) -> dict:
    return {
        "locations": [[float(v) for v in row] for row in post.dataset.locations],
        "observations": [float(z) for z in post.dataset.observations],
        "lengthscales": [float(v) for v in post.hyper.lengthscales],
        "noise_std": float(post.hyper.noise_std),
    }


def snapshot_from_dict(data: dict) -> GPPosterior:
    hyper = Hyperparams(np.asarray(data["lengthscales"]), float(data["noise_std"]))
    locs = np.asarray(data["locations"], dtype=np.float64)
    if locs.size == 0:
        locs = locs.reshape(0, hyper.lengthscales.shape[0])
    ds = Dataset(locs, np.asarray(data["observations"], dtype=np.float64))
    return fit_posterior(ds, hyper)


def save_snapshot(post: GPPosterior, path) -> None:
    Path(path).write_text(json.dumps(snapshot_to_dict(post)))


def load_snapshot(path) -> GPPosterior:
    return snapshot_from_dict(json.loads(Path(path).read_text()))
