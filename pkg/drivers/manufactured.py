"""
Manufactured solutions with hand-derived forcing.

Functions take points of shape [d, n_points]. Scalar solutions return [n_points],
vector solutions [d, n_points]; gradients return [n_components, d, n_points].
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from django.db import models

Function = Callable[[np.ndarray], np.ndarray]


class PoissonCase(models.TextChoices):
    LINEAR = 'linear', 'u = sum of coordinates'
    SINE = 'sine', 'u = product of sin(pi x_i)'
    POLYNOMIAL = 'polynomial', 'u = sum of squared coordinates'


class StokesCase(models.TextChoices):
    POLYNOMIAL = 'polynomial', 'Rotation velocity, linear pressure'
    TRIGONOMETRIC = 'trigonometric', 'Divergence-free trigonometric velocity'


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    solution: Function
    gradient: Function
    forcing: Function
    pressure: Optional[Function] = None
    pressure_gradient: Optional[Function] = None

    def dirichlet_component(self, component: int) -> Function:
        def trace(x):
            return np.atleast_2d(self.solution(x))[component]
        return trace


def _linear(num_dims: int) -> ManufacturedCase:
    return ManufacturedCase(
        PoissonCase.LINEAR,
        solution=lambda x: x.sum(axis=0),
        gradient=lambda x: np.ones((1, num_dims, x.shape[1])),
        forcing=lambda x: np.zeros(x.shape[1]))


def _sine(num_dims: int) -> ManufacturedCase:
    def solution(x):
        return np.prod(np.sin(np.pi * x), axis=0)

    def gradient(x):
        s, c = np.sin(np.pi * x), np.cos(np.pi * x)
        out = np.empty((1, num_dims, x.shape[1]))
        for i in range(num_dims):
            out[0, i] = np.pi * c[i] * np.prod(np.delete(s, i, axis=0), axis=0)
        return out

    return ManufacturedCase(PoissonCase.SINE, solution, gradient,
                            forcing=lambda x: num_dims * np.pi ** 2 * solution(x))


def _polynomial(num_dims: int) -> ManufacturedCase:
    return ManufacturedCase(
        PoissonCase.POLYNOMIAL,
        solution=lambda x: (x ** 2).sum(axis=0),
        gradient=lambda x: 2.0 * x[None],
        forcing=lambda x: np.full(x.shape[1], -2.0 * num_dims))


def poisson_case(name: str, num_dims: int) -> ManufacturedCase:
    """-div(grad u) = f on the unit box."""
    builders: Dict[str, Callable[[int], ManufacturedCase]] = {
        PoissonCase.LINEAR: _linear,
        PoissonCase.SINE: _sine,
        PoissonCase.POLYNOMIAL: _polynomial,
    }
    if name not in builders:
        raise ValueError(f"Unknown Poisson case '{name}', choose from {list(PoissonCase.values)}")
    return builders[name](num_dims)


def _stokes_polynomial(viscosity: float) -> ManufacturedCase:
    # Delta u = 0, so f = grad p
    def velocity(x):
        return np.array([x[1], -x[0]])

    def velocity_gradient(x):
        out = np.zeros((2, 2, x.shape[1]))
        out[0, 1] = 1.0
        out[1, 0] = -1.0
        return out

    return ManufacturedCase(
        StokesCase.POLYNOMIAL, velocity, velocity_gradient,
        forcing=lambda x: np.ones((2, x.shape[1])),
        pressure=lambda x: x[0] + x[1] - 1.0,
        pressure_gradient=lambda x: np.ones((1, 2, x.shape[1])))


def _stokes_trigonometric(viscosity: float) -> ManufacturedCase:
    pi = np.pi

    def velocity(x):
        return np.array([pi * np.sin(pi * x[0]) ** 2 * np.sin(2 * pi * x[1]),
                         -pi * np.sin(2 * pi * x[0]) * np.sin(pi * x[1]) ** 2])

    def velocity_gradient(x):
        sx, sy = np.sin(pi * x[0]), np.sin(pi * x[1])
        s2x, s2y = np.sin(2 * pi * x[0]), np.sin(2 * pi * x[1])
        return np.array([[pi ** 2 * s2x * s2y, 2 * pi ** 2 * sx ** 2 * np.cos(2 * pi * x[1])],
                         [-2 * pi ** 2 * np.cos(2 * pi * x[0]) * sy ** 2, -pi ** 2 * s2x * s2y]])

    def pressure(x):
        return np.cos(pi * x[0]) * np.cos(pi * x[1])

    def pressure_gradient(x):
        return np.array([[-pi * np.sin(pi * x[0]) * np.cos(pi * x[1]),
                          -pi * np.cos(pi * x[0]) * np.sin(pi * x[1])]])

    def forcing(x):
        # mu * eps(u):eps(v) on a solenoidal u gives -(mu / 2) Delta u
        laplacian = np.array([2 * pi ** 3 * np.sin(2 * pi * x[1]) * (2 * np.cos(2 * pi * x[0]) - 1),
                              -2 * pi ** 3 * np.sin(2 * pi * x[0]) * (2 * np.cos(2 * pi * x[1]) - 1)])
        return -0.5 * viscosity * laplacian + pressure_gradient(x)[0]

    return ManufacturedCase(StokesCase.TRIGONOMETRIC, velocity, velocity_gradient, forcing,
                            pressure, pressure_gradient)


def stokes_case(name: str, num_dims: int, viscosity: float = 1.0) -> ManufacturedCase:
    """Full-Dirichlet Stokes on the unit square; pressures have zero mean."""
    if num_dims != 2:
        raise ValueError(f"Stokes manufactured cases are two-dimensional, got dim={num_dims}")
    if name == StokesCase.POLYNOMIAL:
        return _stokes_polynomial(viscosity)
    if name == StokesCase.TRIGONOMETRIC:
        return _stokes_trigonometric(viscosity)
    raise ValueError(f"Unknown Stokes case '{name}', choose from {list(StokesCase.values)}")
