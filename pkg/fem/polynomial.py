"""
One-dimensional polynomial bases and their multi-dimensional products.

Point sets are arrays of shape [d, n_points]. Functions of a multi-dimensional
space are ordered by ascending lexicographic multi-index with x varying fastest,
which is the node order of ``fem.polytope.NodeArray``.
"""

import itertools
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from django.db import models


class PolynomialKind(models.TextChoices):
    LAGRANGE = 'lagrange', 'Lagrange'
    MONOMIAL = 'monomial', 'Monomial'


@dataclass(frozen=True)
class Polynomial1D:
    """
    A single 1D polynomial.

    For Lagrange polynomials ``coefficients`` stores the k+1 nodes of the basis
    followed by the scale 1 / prod_{s != m} (x_m - x_s); monomials need none.
    """

    kind: str
    order: int
    index: int
    coefficients: Tuple[float, ...] = field(default=())

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Values and first derivatives at the points ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind == PolynomialKind.MONOMIAL:
            m = self.index
            values = x ** m
            derivatives = m * x ** (m - 1) if m > 0 else np.zeros_like(x)
            return values, derivatives

        nodes = self.coefficients[:-1]
        scale = self.coefficients[-1]
        others = [s for s in range(len(nodes)) if s != self.index]
        factors = [x - nodes[s] for s in others]
        values = np.full_like(x, scale)
        for f in factors:
            values = values * f
        derivatives = np.zeros_like(x)
        for r in range(len(factors)):
            term = np.full_like(x, scale)
            for s, f in enumerate(factors):
                if s != r:
                    term = term * f
            derivatives = derivatives + term
        return values, derivatives


@dataclass(frozen=True)
class PolynomialBasis1D:
    polynomials: Tuple[Polynomial1D, ...]

    @property
    def order(self) -> int:
        return len(self.polynomials) - 1

    @property
    def kind(self) -> str:
        return self.polynomials[0].kind

    def __len__(self):
        return len(self.polynomials)

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Values and derivatives of all polynomials, each of shape [k+1, n_points]."""
        pairs = [p.evaluate(x) for p in self.polynomials]
        return np.array([v for v, _ in pairs]), np.array([dv for _, dv in pairs])


def equidistant_nodes(order: int) -> List[float]:
    if order == 0:
        return [0.5]
    return [i / order for i in range(order + 1)]


def lagrange_basis_1d(nodes: Sequence[float]) -> PolynomialBasis1D:
    """Lagrange basis with l_m(x_l) = delta_ml on the given nodes."""
    nodes = tuple(float(x) for x in nodes)
    if not nodes:
        raise ValueError("A Lagrange basis needs at least one node")
    if len(set(nodes)) != len(nodes):
        raise ValueError(f"Lagrange nodes must be distinct, got {nodes}")
    polynomials = []
    for m, xm in enumerate(nodes):
        denominator = 1.0
        for s, xs in enumerate(nodes):
            if s != m:
                denominator *= xm - xs
        polynomials.append(Polynomial1D(PolynomialKind.LAGRANGE, len(nodes) - 1, m, nodes + (1.0 / denominator,)))
    return PolynomialBasis1D(tuple(polynomials))


def monomial_basis_1d(order: int) -> PolynomialBasis1D:
    if order < 0:
        raise ValueError(f"Negative polynomial order {order}")
    return PolynomialBasis1D(tuple(Polynomial1D(PolynomialKind.MONOMIAL, order, m) for m in range(order + 1)))


@dataclass
class BasisEvaluation:
    """Raw scalar container: values [n_functions, n_points], gradients [d, n_functions, n_points]."""

    values: np.ndarray
    gradients: np.ndarray

    @property
    def num_functions(self) -> int:
        return self.values.shape[0]

    @property
    def num_points(self) -> int:
        return self.values.shape[1]


def _lex_sorted(indices):
    return sorted(indices, key=lambda alpha: tuple(reversed(alpha)))


class PolynomialSpace:
    """Span of products prod_i p_{alpha_i}(x_i) over a set of multi-indices."""

    def __init__(self, bases: Sequence[PolynomialBasis1D], multi_indices: Sequence[Tuple[int, ...]]):
        self.bases = tuple(bases)
        self.num_dims = len(self.bases)
        self.multi_indices = np.array(multi_indices, dtype=np.int64).reshape(len(multi_indices), self.num_dims)

    @property
    def dimension(self) -> int:
        return self.multi_indices.shape[0]

    def evaluate(self, points: np.ndarray) -> BasisEvaluation:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[0] != self.num_dims:
            raise ValueError(f"Points must have shape [{self.num_dims}, n_points], got {points.shape}")
        if points.shape[1] == 0:
            raise ValueError("Cannot evaluate a polynomial space on an empty point set")
        if self.dimension == 0:
            raise ValueError("Cannot evaluate an empty polynomial space")
        if self.num_dims == 0:
            # constants on a point
            return BasisEvaluation(np.ones((self.dimension, points.shape[1])),
                                   np.zeros((0, self.dimension, points.shape[1])))

        factors, derivatives = [], []
        for i, basis in enumerate(self.bases):
            v, dv = basis.evaluate(points[i])
            factors.append(v[self.multi_indices[:, i]])
            derivatives.append(dv[self.multi_indices[:, i]])

        values = np.prod(factors, axis=0)
        gradients = np.empty((self.num_dims,) + values.shape)
        for j in range(self.num_dims):
            term = derivatives[j]
            for i in range(self.num_dims):
                if i != j:
                    term = term * factors[i]
            gradients[j] = term
        return BasisEvaluation(values, gradients)


class TensorProductSpace(PolynomialSpace):
    """Q_k: full tensor product, dimension prod(k_i + 1); orders may differ per direction."""

    def __init__(self, bases: Sequence[PolynomialBasis1D]):
        indices = itertools.product(*(range(len(b)) for b in bases))
        super().__init__(bases, _lex_sorted(indices))

    @property
    def orders(self) -> Tuple[int, ...]:
        return tuple(b.order for b in self.bases)

    @classmethod
    def lagrange(cls, orders: Sequence[int]) -> 'TensorProductSpace':
        return cls([lagrange_basis_1d(equidistant_nodes(k)) for k in orders])

    @classmethod
    def monomial(cls, orders: Sequence[int]) -> 'TensorProductSpace':
        return cls([monomial_basis_1d(k) for k in orders])


class TruncatedTensorProductSpace(PolynomialSpace):
    """P_k: monomials x^alpha with |alpha| <= k, dimension binomial(k + d, d)."""

    def __init__(self, num_dims: int, order: int):
        if order < 0:
            raise ValueError(f"Negative polynomial order {order}")
        self.order = order
        indices = [a for a in itertools.product(range(order + 1), repeat=num_dims) if sum(a) <= order]
        super().__init__([monomial_basis_1d(order)] * num_dims, _lex_sorted(indices))


def evaluate_space(space: PolynomialSpace, points: np.ndarray) -> BasisEvaluation:
    return space.evaluate(points)
