"""
Gauss-type quadratures on the reference n-cube [0, 1]^d and the unit n-simplex.

Simplex rules collapse a tensor Gauss-Legendre rule through the Duffy map
x_1 = s_1, x_2 = (1 - s_1) s_2, x_3 = (1 - s_1)(1 - s_2) s_3, ...
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import count
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from .polytope import Polytope

logger = logging.getLogger(__name__)

_quadrature_ids = count()


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Points (shape [d, n_points], reference coordinates) and positive weights."""

    num_dims: int
    coords: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        object.__setattr__(self, 'uid', next(_quadrature_ids))

    @property
    def num_points(self) -> int:
        return self.weights.shape[0]


@lru_cache(maxsize=None)
def gauss_legendre_1d(num_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if num_points < 1:
        raise ValueError(f"Gauss rule needs at least one point, got {num_points}")
    nodes, weights = leggauss(num_points)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _tensor_rule(num_dims: int, num_points: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre_1d(num_points)
    # indexing='ij' over reversed axes keeps x the fastest index
    grids = np.meshgrid(*([x] * num_dims), indexing='ij')
    wgrids = np.meshgrid(*([w] * num_dims), indexing='ij')
    coords = np.array([g.ravel() for g in reversed(grids)])
    weights = np.prod([g.ravel() for g in wgrids], axis=0)
    return coords, weights


def points_for_degree(degree: int) -> int:
    """Gauss points per direction that integrate degree ``degree`` exactly."""
    return max(1, math.ceil((degree + 1) / 2))


def tensor_gauss_quadrature(num_dims: int, degree: int) -> Quadrature:
    coords, weights = _tensor_rule(num_dims, points_for_degree(degree))
    return Quadrature(num_dims, coords, weights, degree)


def duffy_quadrature(num_dims: int, degree: int) -> Quadrature:
    """Collapsed tensor rule on the unit simplex, exact for P_degree."""
    n = points_for_degree(degree) + math.ceil((num_dims - 1) / 2)
    s, w = _tensor_rule(num_dims, n)
    coords = np.empty_like(s)
    weights = w.copy()
    remaining = np.ones(s.shape[1])
    for j in range(num_dims):
        coords[j] = remaining * s[j]
        weights *= (1.0 - s[j]) ** (num_dims - 1 - j)
        remaining = remaining * (1.0 - s[j])
    return Quadrature(num_dims, coords, weights, degree)


def point_quadrature() -> Quadrature:
    """Quadrature on a 0-dimensional facet: one point, unit weight."""
    return Quadrature(0, np.zeros((0, 1)), np.ones(1), 0)


@lru_cache(maxsize=None)
def create_polytope_quadrature(polytope: Polytope, degree: int) -> Quadrature:
    if degree < 0:
        raise ValueError(f"Quadrature degree must be non-negative, got {degree}")
    if polytope.is_n_cube:
        quadrature = tensor_gauss_quadrature(polytope.num_dims, degree)
    elif polytope.is_simplex:
        quadrature = duffy_quadrature(polytope.num_dims, degree)
    else:
        raise ValueError(f"No quadrature rule for {polytope!r}")
    logger.debug("[Quadrature] %r degree %d -> %d points", polytope, degree, quadrature.num_points)
    return quadrature


@lru_cache(maxsize=None)
def create_facet_quadrature(polytope: Polytope, degree: int) -> Quadrature:
    """Quadrature on the reference facet of a polytope whose facets all share one shape."""
    if polytope.num_dims == 1:
        return point_quadrature()
    facet_ids = list(polytope.n_faces_of_dim(polytope.num_dims - 1))
    shapes = {polytope.n_face_polytope(f) for f in facet_ids}
    if len(shapes) > 1:
        raise ValueError(f"{polytope!r} has facets of different shapes")
    return create_polytope_quadrature(shapes.pop(), degree)
