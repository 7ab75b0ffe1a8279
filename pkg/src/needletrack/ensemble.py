"""Weighted ensembles, degeneracy measure and stratified resampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass
class WeightedEnsemble:
    """States (n, k) with normalized weights (n,)."""

    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.states) == 0:
            raise ValueError("ensemble must not be empty")
        if len(self.states) != len(self.weights):
            raise ValueError("states and weights differ in length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to one")

    @classmethod
    def uniform(cls, states) -> WeightedEnsemble:
        n = len(states)
        return cls(states, np.full(n, 1.0 / n))

    def __len__(self):
        return len(self.weights)


def effective_particles(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def stratified_indices(weights, rng) -> np.ndarray:
    """One uniform draw per stratum [i/n, (i+1)/n), mapped through the weight CDF."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    rng = np.random.default_rng(rng)
    positions = (np.arange(n) + rng.random(n)) / n
    cumsum = np.cumsum(w)
    cumsum /= cumsum[-1]
    return _kernels.stratified_indices(np.ascontiguousarray(cumsum), positions)


def stratified_resample(ensemble: WeightedEnsemble, rng) -> WeightedEnsemble:
    idx = stratified_indices(ensemble.weights, rng)
    return WeightedEnsemble.uniform(ensemble.states[idx])
