"""Gaussian-process surrogate with a jitter-retrying Cholesky, grid-search
hyperparameter fitting, and a UCB suggestion routine over mixed search
spaces (numeric dimensions unit-scaled, categoricals one-hot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..errors import CholeskyFailed
from ..model import Goal, StudySpec, Trial
from ..search_space import (ParameterAssignment, ParameterKind, ParameterSpec,
                            repair_assignment, sample_random, scale_to_unit,
                            unscale_from_unit)

SQRT5 = math.sqrt(5.0)

DEFAULT_AMPLITUDE_GRID = (0.5, 1.0, 2.0)
DEFAULT_LENGTHSCALE_GRID = (0.1, 0.3, 1.0)
DEFAULT_NOISE_GRID = (1e-6, 1e-4, 1e-2)
#: above this input dimension the lengthscale grid is shared isotropically
PER_DIMENSION_MAX_D = 4

UCB_BETA = 2.0
UCB_CANDIDATES = 1000
UCB_LOCAL_PERTURBATIONS = 10
UCB_LOCAL_SIGMA = 0.05


def robust_cholesky(a: np.ndarray, base_jitter: float = 1e-10,
                    max_retries: int = 10) -> tuple[np.ndarray, float]:
    """Lower-triangular factor of ``a`` (+ jitter*I when needed).

    Tries the plain factorization first, then retries with exponentially
    larger diagonal jitter base_jitter * 10**k, k = 0..max_retries-1.
    Returns (L, jitter_used).
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(a.shape[0])
    for k in range(max_retries):
        jitter = base_jitter * 10.0 ** k
        try:
            return np.linalg.cholesky(a + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise CholeskyFailed(
        f"factorization failed up to jitter {base_jitter * 10.0 ** (max_retries - 1):g}")


def matern52(sq_dist: np.ndarray, amplitude: float) -> np.ndarray:
    """Matern-5/2 kernel on pre-scaled squared distances."""
    r = np.sqrt(np.maximum(sq_dist, 0.0))
    return amplitude * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq_dist) * np.exp(-SQRT5 * r)


def _per_dim_sq_diffs(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    # (d, n1, n2); reused across lengthscale grid points
    diff = x1.T[:, :, None] - x2.T[:, None, :]
    return diff ** 2


def _scaled_sq_dist(d2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    inv = 1.0 / np.asarray(lengthscales, dtype=float) ** 2
    return np.tensordot(inv, d2, axes=1)


@dataclass
class GpModel:
    """Fitted posterior. ``targets`` are standardized (and already
    sign-flipped by the caller when minimizing, so larger is better)."""

    inputs: np.ndarray
    targets: np.ndarray
    target_mean: float
    target_std: float
    amplitude: float
    lengthscales: np.ndarray
    noise_variance: float
    jitter: float
    cholesky_factor: np.ndarray
    alpha: np.ndarray
    log_marginal_likelihood: float

    def _cross_kernel(self, x: np.ndarray) -> np.ndarray:
        d2 = _per_dim_sq_diffs(np.atleast_2d(x), self.inputs)
        return matern52(_scaled_sq_dist(d2, self.lengthscales), self.amplitude)

    def predict_f(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and raw latent variance in standardized units;
        the variance may dip a hair below zero from rounding."""
        ks = self._cross_kernel(x)
        mean = ks @ self.alpha
        v = solve_triangular(self.cholesky_factor, ks.T, lower=True)
        var = self.amplitude - np.einsum("ij,ij->j", v, v)
        return mean, var

    def predict(self, x: np.ndarray, raw_units: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and std, variance clamped at zero. With
        ``raw_units`` the standardization is undone."""
        mean, var = self.predict_f(x)
        std = np.sqrt(np.maximum(var, 0.0))
        if raw_units:
            return mean * self.target_std + self.target_mean, std * self.target_std
        return mean, std

    def predict_observation(self, x: np.ndarray, raw_units: bool = False
                            ) -> tuple[np.ndarray, np.ndarray]:
        """Like predict, but for a new measured value: the fitted
        observation noise is added to the latent variance."""
        mean, var = self.predict_f(x)
        std = np.sqrt(np.maximum(var, 0.0) + self.noise_variance)
        if raw_units:
            return mean * self.target_std + self.target_mean, std * self.target_std
        return mean, std


def _log_marginal_likelihood(chol: np.ndarray, alpha: np.ndarray,
                             y: np.ndarray) -> float:
    n = y.shape[0]
    return float(-0.5 * y @ alpha - np.log(np.diag(chol)).sum()
                 - 0.5 * n * math.log(2.0 * math.pi))


def _lengthscale_combos(d: int, grid: Sequence[float]) -> list[np.ndarray]:
    if d <= PER_DIMENSION_MAX_D:
        combos = [np.array(c, dtype=float)
                  for c in np.stack(np.meshgrid(*([list(grid)] * d),
                                                indexing="ij"), -1).reshape(-1, d)]
        return combos
    return [np.full(d, s) for s in grid]


def gp_fit(inputs: np.ndarray, targets: np.ndarray,
           amplitude_grid: Sequence[float] = DEFAULT_AMPLITUDE_GRID,
           lengthscale_grid: Sequence[float] = DEFAULT_LENGTHSCALE_GRID,
           noise_grid: Sequence[float] = DEFAULT_NOISE_GRID) -> GpModel:
    """Standardizes targets and picks hyperparameters by exhaustive
    log-marginal-likelihood over the grids (per-dimension lengthscales up
    to 4 input dimensions, shared above)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_raw = np.asarray(targets, dtype=float).ravel()
    n, d = x.shape
    if n < 1 or d < 1 or y_raw.shape[0] != n:
        raise ValueError(f"bad training shapes: inputs {x.shape}, targets {y_raw.shape}")
    mean = float(y_raw.mean())
    std = float(y_raw.std())
    if n < 2 or std == 0.0:
        std = 1.0
    y = (y_raw - mean) / std

    d2 = _per_dim_sq_diffs(x, x)
    eye = np.eye(n)
    best = None
    for lengthscales in _lengthscale_combos(d, lengthscale_grid):
        sq = _scaled_sq_dist(d2, lengthscales)
        for amplitude in amplitude_grid:
            k_base = matern52(sq, amplitude)
            for noise in noise_grid:
                try:
                    chol, jitter = robust_cholesky(k_base + noise * eye)
                except CholeskyFailed:
                    continue
                alpha = cho_solve((chol, True), y)
                lml = _log_marginal_likelihood(chol, alpha, y)
                if best is None or lml > best[0]:
                    best = (lml, lengthscales, amplitude, noise, jitter, chol, alpha)
    if best is None:
        raise CholeskyFailed("no hyperparameter grid point could be factorized")
    lml, lengthscales, amplitude, noise, jitter, chol, alpha = best
    return GpModel(inputs=x, targets=y, target_mean=mean, target_std=std,
                   amplitude=amplitude, lengthscales=lengthscales,
                   noise_variance=noise, jitter=jitter, cholesky_factor=chol,
                   alpha=alpha, log_marginal_likelihood=lml)


# -- feature embedding of search spaces ---------------------------------------


def embedding_layout(space: Sequence[ParameterSpec]) -> list[tuple[ParameterSpec, int, int]]:
    """Depth-first (declaration-order) list of (spec, offset, width): one
    column per numeric parameter, a one-hot block per categorical."""
    layout: list[tuple[ParameterSpec, int, int]] = []
    offset = 0

    def walk(spec: ParameterSpec):
        nonlocal offset
        width = (len(spec.feasible_values)
                 if spec.kind is ParameterKind.CATEGORICAL else 1)
        layout.append((spec, offset, width))
        offset += width
        for child in spec.children:
            walk(child.spec)

    for root in space:
        walk(root)
    return layout


def embed_assignment(layout: Sequence[tuple[ParameterSpec, int, int]],
                     assignment: ParameterAssignment) -> np.ndarray:
    """Unit-scaled feature vector; inactive numeric dimensions sit at the
    midpoint 0.5, inactive one-hot blocks at the uniform vector."""
    total = layout[-1][1] + layout[-1][2] if layout else 0
    vec = np.empty(total)
    for spec, offset, width in layout:
        value = assignment.values.get(spec.name)
        if spec.kind is ParameterKind.CATEGORICAL:
            if value is not None and spec.is_feasible(value):
                block = np.zeros(width)
                block[spec.feasible_values.index(value)] = 1.0
            else:
                block = np.full(width, 1.0 / width)
            vec[offset:offset + width] = block
        else:
            if value is not None and spec.is_feasible(value):
                vec[offset] = scale_to_unit(spec, value)
            else:
                vec[offset] = 0.5
    return vec


def _objective_values(trials: Sequence[Trial], metric_name: str,
                      goal: Goal) -> list[tuple[Trial, float]]:
    """Feasible completed trials with the objective, sign-flipped so larger
    is better."""
    sign = 1.0 if goal is Goal.MAXIMIZE else -1.0
    out = []
    for t in trials:
        if t.infeasible or t.final_measurement is None:
            continue
        if metric_name not in t.final_measurement.metrics:
            continue
        out.append((t, sign * float(t.final_measurement.metrics[metric_name])))
    return out


def gp_ucb_suggest(study_spec: StudySpec, completed: Sequence[Trial], count: int,
                   seed, history: Sequence[ParameterAssignment] | None = None,
                   beta: float = UCB_BETA,
                   n_candidates: int = UCB_CANDIDATES) -> list[ParameterAssignment]:
    """Maximizes mean + beta*std over seeded random candidates plus local
    perturbations of the incumbent; falls back to random sampling until two
    completed trials exist."""
    from .random_grid import dedupe_filter, random_search_suggest

    space = study_spec.search_space
    metric = study_spec.objective_metric()
    data = _objective_values(completed, metric.name, metric.goal)
    if len(data) < 2:
        return random_search_suggest(study_spec, count, seed,
                                     history=history or [])

    rng = np.random.default_rng(seed)
    layout = embedding_layout(space)
    x = np.stack([embed_assignment(layout, t.parameters) for t, _ in data])
    y = np.array([v for _, v in data])
    model = gp_fit(x, y)

    candidates = [sample_random(space, rng) for _ in range(n_candidates)]
    incumbent = max(data, key=lambda pair: pair[1])[0]
    for _ in range(UCB_LOCAL_PERTURBATIONS):
        nudged = {}
        for name, value in incumbent.parameters.values.items():
            spec = next((s for s, _, _ in layout if s.name == name), None)
            if spec is None or spec.kind is ParameterKind.CATEGORICAL:
                nudged[name] = value
                continue
            u = scale_to_unit(spec, value) + rng.normal(0.0, UCB_LOCAL_SIGMA)
            nudged[name] = unscale_from_unit(spec, min(max(u, 0.0), 1.0))
        candidates.append(repair_assignment(space, nudged, rng))

    feats = np.stack([embed_assignment(layout, c) for c in candidates])
    mean, std = model.predict(feats)
    acquisition = mean + beta * std
    order = np.argsort(-acquisition, kind="stable")

    chosen: list[ParameterAssignment] = []
    seen: set[str] = set()
    for idx in order:
        cand = candidates[int(idx)]
        key = repr(sorted(cand.values.items()))
        if key in seen:
            continue
        seen.add(key)
        chosen.append(cand)
        if len(chosen) == count:
            break
    return dedupe_filter(space, chosen, history or [],
                         study_spec.observation_noise, rng)
