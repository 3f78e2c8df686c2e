"""Shared fixtures: small exactly-solvable spaces and random metric generators."""
from __future__ import annotations

import numpy as np
import pytest

from mdslab.spaces import FiniteSpace, finite_space_from_matrix


def equilateral_triangle(side: float = 1.0) -> FiniteSpace:
    D = side * (np.ones((3, 3)) - np.eye(3))
    return finite_space_from_matrix(D, np.full(3, 1.0 / 3.0))


def four_cycle() -> FiniteSpace:
    """Graph metric of the 4-cycle: neighbors at 1, opposite corners at 2."""
    D = np.array(
        [[0, 1, 2, 1], [1, 0, 1, 2], [2, 1, 0, 1], [1, 2, 1, 0]], dtype=float
    )
    return finite_space_from_matrix(D, np.full(4, 0.25))


def two_points(gap: float = 1.0) -> FiniteSpace:
    return finite_space_from_matrix([[0.0, gap], [gap, 0.0]], [0.5, 0.5])


def shortest_path_completion(raw: np.ndarray) -> np.ndarray:
    """Floyd-Warshall closure of a symmetric nonnegative matrix with zero
    diagonal; the result satisfies the triangle inequality by construction."""
    D = raw.copy()
    n = D.shape[0]
    for k in range(n):
        np.minimum(D, D[:, k][:, None] + D[k, :][None, :], out=D)
    return D


def random_metric_space(rng: np.random.Generator, n: int, uniform: bool = True) -> FiniteSpace:
    raw = rng.uniform(0.2, 3.0, size=(n, n))
    raw = (raw + raw.T) / 2.0
    np.fill_diagonal(raw, 0.0)
    D = shortest_path_completion(raw)
    if uniform:
        w = np.full(n, 1.0 / n)
    else:
        w = rng.uniform(0.5, 1.5, size=n)
        w /= w.sum()
    return finite_space_from_matrix(D, w)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
