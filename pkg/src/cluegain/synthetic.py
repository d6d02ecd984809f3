"""Synthetic tables used by the tests, the acceptance suite and the README demo."""

from __future__ import annotations

import numpy as np

from .data import DataTable


def correlated_gaussian(n: int, d: int = 20, seed: int = 0, family_seed: int = 0,
                        rank: int = 3, noise: float = 0.3) -> DataTable:
    """Low-rank Gaussian factor model: ``x = f @ W + noise * e``.

    ``family_seed`` fixes the loading matrix ``W`` (the distribution);
    ``seed`` draws the rows. Two tables with the same family share a
    distribution.
    """
    loadings = np.random.default_rng([family_seed, 7919]).normal(size=(rank, d))
    rng = np.random.default_rng([family_seed, seed, 104729])
    factors = rng.normal(size=(n, rank))
    values = factors @ loadings + noise * rng.normal(size=(n, d))
    return DataTable(values, np.ones_like(values), (), tuple(f"g{j}" for j in range(d)))


def independent_uniform(n: int, d: int = 20, seed: int = 0) -> DataTable:
    """Columns drawn independently from Uniform(0, 1): nothing to transfer."""
    values = np.random.default_rng([seed, 15485863]).uniform(size=(n, d))
    return DataTable(values, np.ones_like(values), (), tuple(f"u{j}" for j in range(d)))


def skewed_mixture(n: int, d: int = 20, seed: int = 0, family_seed: int = 1) -> DataTable:
    """Independent columns, each a two-component mixture with exponential tails.

    Distinct in shape from the Gaussian factor family and without
    cross-column structure.
    """
    rng = np.random.default_rng([family_seed, seed, 32452843])
    centers = np.random.default_rng([family_seed, 49979687]).normal(scale=3.0, size=(2, d))
    comp = rng.integers(0, 2, size=(n, d))
    values = np.take_along_axis(centers, comp, axis=0) + rng.exponential(size=(n, d))
    return DataTable(values, np.ones_like(values), (), tuple(f"s{j}" for j in range(d)))


def separable_classes(n: int = 600, d: int = 6, n_classes: int = 3, seed: int = 0,
                      spread: float = 0.35) -> DataTable:
    """Well separated Gaussian blobs with one label per blob."""
    rng = np.random.default_rng([seed, 86028121])
    centers = 4.0 * np.eye(n_classes, d)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    values = centers[labels] + spread * rng.normal(size=(n, d))
    return DataTable(values, np.ones_like(values), (), tuple(f"f{j}" for j in range(d)),
                     labels, tuple(str(k) for k in range(n_classes)))
