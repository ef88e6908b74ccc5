"""
Reference finite elements: the (cell, local space, DOF set) triplet.

Shape functions are obtained from a pre-basis by a change of basis built from the
DOF moments, so every element type only has to say what its pre-basis and its
moments are. Moments are stored generically as ``moment_points`` (shape [d, np]) and
``moment_weights`` (shape [n_dofs, n_components, np]):

    sigma_a(v) = sum_{c, p} moment_weights[a, c, p] * v_c(moment_points[:, p])

Local ids are 0-based throughout. Vector and tensor Lagrangian DOFs are numbered
node-major, component-minor (dof = node * n_components + component).
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import count
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.db import models
from scipy.linalg import lu_factor, lu_solve

from .polynomial import TensorProductSpace, TruncatedTensorProductSpace
from .polytope import Polytope, apply_cube_symmetry, create_node_array
from .quadrature import Quadrature, create_facet_quadrature, create_polytope_quadrature

logger = logging.getLogger(__name__)

_reference_fe_ids = count()


class FEType(models.TextChoices):
    LAGRANGIAN = 'lagrangian', 'Lagrangian'
    RAVIART_THOMAS = 'raviart_thomas', 'Raviart-Thomas'
    VOID = 'void', 'Void'


class FieldType(models.TextChoices):
    SCALAR = 'scalar', 'Scalar'
    VECTOR = 'vector', 'Vector'
    TENSOR = 'tensor', 'Tensor'


def num_components_of(field_type: str, num_dims: int) -> int:
    if field_type == FieldType.SCALAR:
        return 1
    if field_type == FieldType.VECTOR:
        return num_dims
    if field_type == FieldType.TENSOR:
        return num_dims * num_dims
    raise ValueError(f"Unknown field type '{field_type}'")


@dataclass
class Interpolation:
    """
    Shape functions evaluated at a point set.

    values: [n_components, n_shape_functions, n_points]
    gradients: [n_components, d, n_shape_functions, n_points]
    """

    values: np.ndarray
    gradients: np.ndarray

    @property
    def num_shape_functions(self) -> int:
        return self.values.shape[1]

    @property
    def num_points(self) -> int:
        return self.values.shape[2]

    @property
    def divergences(self) -> np.ndarray:
        """[n_shape_functions, n_points]; only defined for vector fields."""
        ncomp, num_dims = self.gradients.shape[:2]
        if ncomp != num_dims:
            raise ValueError("Divergence requires a vector-valued interpolation")
        return np.einsum('iiap->ap', self.gradients)


def build_change_of_basis(moments: np.ndarray) -> np.ndarray:
    """
    Phi = C^{-T} for the moment matrix C_ab = sigma_a(psi_b).

    Raises ValueError when C is numerically singular, which means the moments and
    the pre-basis do not form a unisolvent pair.
    """
    moments = np.asarray(moments, dtype=float)
    if moments.ndim != 2 or moments.shape[0] != moments.shape[1]:
        raise ValueError(f"Moment matrix must be square, got shape {moments.shape}")
    n = moments.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    lu, piv = lu_factor(moments, check_finite=True)
    scale = np.max(np.linalg.norm(moments, axis=1))
    if np.min(np.abs(np.diag(lu))) < 1e-12 * scale:
        raise ValueError("Singular moment matrix: pre-basis and DOFs are not unisolvent")
    return lu_solve((lu, piv), np.eye(n), trans=1)


def _compress(lists: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(entries) for entries in lists])
    lst = np.array([i for entries in lists for i in entries], dtype=np.int64)
    return ptr, lst


class ReferenceFE:
    """
    Base class of reference FEs.

    Subclasses fill the pre-basis, the moments, the change of basis and the
    per-n-face ownership in ``_build``.
    """

    fe_type: str = ''

    def __init__(self, polytope: Polytope, order: int, field_type: str, conformity: bool):
        if order < 0:
            raise ValueError(f"Reference FE order must be non-negative, got {order}")
        self.uid = next(_reference_fe_ids)
        self.polytope = polytope
        self.num_dims = polytope.num_dims
        self.order = order
        self.field_type = field_type
        self.conformity = conformity
        self.num_components = num_components_of(field_type, self.num_dims)
        self.num_shape_functions = 0
        self.dofs_per_node = 1
        self.change_of_basis = np.zeros((0, 0))
        self.moment_points = np.zeros((self.num_dims, 0))
        self.moment_weights = np.zeros((0, self.num_components, 0))
        self.own_dof_permutations: Dict[int, np.ndarray] = {}
        self._build()

    def __repr__(self):
        return (f"{type(self).__name__}({self.polytope!r}, order={self.order}, "
                f"field_type='{self.field_type}', conformity={self.conformity})")

    def _build(self):
        raise NotImplementedError

    def _set_ownership(self, own: List[List[int]], closed: List[List[int]]):
        self.ptr_own_dofs_n_face, self.lst_own_dofs_n_face = _compress(own)
        self.ptr_dofs_n_face, self.lst_dofs_n_face = _compress(closed)

    def _cell_owns_everything(self):
        n = self.polytope.num_n_faces
        everything = list(range(self.num_shape_functions))
        own = [[] for _ in range(n)]
        own[-1] = everything
        self._set_ownership(own, [everything] * n)
        for dim in range(1, self.num_dims):
            self.own_dof_permutations[dim] = np.zeros((0, 1), dtype=np.int64)

    def get_own_dofs_n_face(self, n_face: int) -> np.ndarray:
        return self.lst_own_dofs_n_face[self.ptr_own_dofs_n_face[n_face]:self.ptr_own_dofs_n_face[n_face + 1]]

    def get_dofs_n_face(self, n_face: int) -> np.ndarray:
        return self.lst_dofs_n_face[self.ptr_dofs_n_face[n_face]:self.ptr_dofs_n_face[n_face + 1]]

    def num_own_dofs_n_face(self, n_face: int) -> int:
        return int(self.ptr_own_dofs_n_face[n_face + 1] - self.ptr_own_dofs_n_face[n_face])

    @property
    def default_quadrature_degree(self) -> int:
        return 2 * self.order

    def evaluate(self, points: np.ndarray) -> Interpolation:
        raise NotImplementedError

    def moments(self, values: np.ndarray) -> np.ndarray:
        """DOF values of a function given by its values [n_components, np] at ``moment_points``."""
        return np.einsum('acp,cp->a', self.moment_weights, values)

    def moment_matrix(self) -> np.ndarray:
        """sigma_a(phi_b) of the constructed shape functions; the identity for a sound FE."""
        if self.num_shape_functions == 0:
            return np.zeros((0, 0))
        shapes = self.evaluate(self.moment_points)
        return np.einsum('acp,cbp->ab', self.moment_weights, shapes.values)

    def permute_dof_lid_n_face(self, permutation_index: int, node_lid: int, n_face_dim: int) -> int:
        """Node id inside an n-face as seen from the neighbour cell under ``permutation_index``."""
        table = self.own_dof_permutations.get(n_face_dim)
        if table is None:
            raise ValueError(f"No permutation table for n-faces of dimension {n_face_dim}")
        if not 0 <= permutation_index < table.shape[1]:
            raise ValueError(f"Permutation index {permutation_index} out of range [0, {table.shape[1]})")
        if not 0 <= node_lid < table.shape[0]:
            raise ValueError(f"Node {node_lid} out of range [0, {table.shape[0]})")
        return int(table[node_lid, permutation_index])

    def permute_own_dof(self, permutation_index: int, own_lid: int, n_face_dim: int) -> int:
        node, component = divmod(own_lid, self.dofs_per_node)
        return self.permute_dof_lid_n_face(permutation_index, node, n_face_dim) * self.dofs_per_node + component

    def _permutation_table(self, labels: Sequence[Tuple[int, ...]], n_face: int, extent: int) -> np.ndarray:
        num_perms = self.polytope.num_n_face_symmetries(n_face)
        position = {tuple(label): j for j, label in enumerate(labels)}
        table = np.empty((len(labels), num_perms), dtype=np.int64)
        for j, label in enumerate(labels):
            for p in range(num_perms):
                image = apply_cube_symmetry(p, label, extent) if num_perms > 1 else tuple(label)
                table[j, p] = position[image]
        return table


class VoidReferenceFE(ReferenceFE):
    """A FE with no DOFs at all."""

    fe_type = FEType.VOID

    def _build(self):
        self._set_ownership([[] for _ in range(self.polytope.num_n_faces)],
                            [[] for _ in range(self.polytope.num_n_faces)])
        for dim in range(1, self.num_dims):
            self.own_dof_permutations[dim] = np.zeros((0, 1), dtype=np.int64)

    def evaluate(self, points: np.ndarray) -> Interpolation:
        num_points = np.asarray(points).shape[1]
        return Interpolation(np.zeros((self.num_components, 0, num_points)),
                             np.zeros((self.num_components, self.num_dims, 0, num_points)))


class LagrangianReferenceFE(ReferenceFE):
    """
    Lagrangian FE on n-cubes (Q_k, nodal pre-basis) and n-simplices (P_k, monomial pre-basis).

    Vector and tensor versions are Cartesian products of the scalar one: each shape
    function has a single non-zero component.
    """

    fe_type = FEType.LAGRANGIAN

    def _build(self):
        polytope, k, ncomp = self.polytope, self.order, self.num_components
        if not (polytope.is_n_cube or polytope.is_simplex):
            raise ValueError(f"Lagrangian FEs are implemented on n-cubes and n-simplices, not {polytope!r}")

        self.node_array = create_node_array(polytope, k)
        num_nodes = self.node_array.num_nodes
        self.dofs_per_node = ncomp
        self.num_shape_functions = num_nodes * ncomp

        if polytope.is_n_cube:
            self.pre_basis = TensorProductSpace.lagrange([k] * self.num_dims)
            self.nodal_pre_basis = True
        else:
            self.pre_basis = TruncatedTensorProductSpace(self.num_dims, k)
            self.nodal_pre_basis = False

        self.moment_points = self.node_array.ref_coords
        self.moment_weights = np.zeros((self.num_shape_functions, ncomp, num_nodes))
        for node in range(num_nodes):
            for c in range(ncomp):
                self.moment_weights[node * ncomp + c, c, node] = 1.0

        # scalar moment matrix: point evaluations of the pre-basis at the nodes
        self.pre_basis_moments = self.pre_basis.evaluate(self.moment_points).values.T
        if self.nodal_pre_basis:
            self.change_of_basis = np.eye(num_nodes)
        else:
            self.change_of_basis = build_change_of_basis(self.pre_basis_moments)

        if not self.conformity or k == 0:
            self._cell_owns_everything()
            return
        self._build_ownership()

    def _node_dofs(self, nodes) -> List[int]:
        return [node * self.num_components + c for node in nodes for c in range(self.num_components)]

    def _build_ownership(self):
        polytope, nodes = self.polytope, self.node_array
        own, closed = [], []
        for i in range(polytope.num_n_faces):
            own.append(self._node_dofs(nodes.n_face_open_nodes(i)))
            closed.append(self._node_dofs(nodes.n_face_closed_nodes(i)))
        self._set_ownership(own, closed)
        for dim in range(1, self.num_dims):
            first = polytope.n_faces_of_dim(dim)[0]
            self.own_dof_permutations[dim] = self._permutation_table(nodes.n_face_open_labels(first), first, self.order)

    def evaluate(self, points: np.ndarray) -> Interpolation:
        points = np.asarray(points, dtype=float)
        pre = self.pre_basis.evaluate(points)
        scalar_values = self.change_of_basis @ pre.values
        scalar_gradients = np.einsum('ab,jbp->jap', self.change_of_basis, pre.gradients)
        ncomp = self.num_components
        num_points = points.shape[1]
        values = np.zeros((ncomp, self.num_shape_functions, num_points))
        gradients = np.zeros((ncomp, self.num_dims, self.num_shape_functions, num_points))
        for c in range(ncomp):
            values[c, c::ncomp] = scalar_values
            gradients[c, :, c::ncomp] = scalar_gradients
        return Interpolation(values, gradients)


class RaviartThomasReferenceFE(ReferenceFE):
    """
    RT_k on n-cubes.

    Pre-basis: component j lives in Q with order k+1 in direction j and k elsewhere.
    DOFs: normal moments against Q_k on every facet, plus interior moments against
    Q with order k-1 in direction j for component j (k >= 1). The facet normal used in
    the moments is the positive axis of the direction orthogonal to the facet.
    """

    fe_type = FEType.RAVIART_THOMAS

    def _build(self):
        polytope, k, d = self.polytope, self.order, self.num_dims
        if not polytope.is_n_cube:
            raise ValueError(f"Raviart-Thomas FEs are implemented on n-cubes only, not {polytope!r}")

        self.pre_basis = [TensorProductSpace.lagrange([k + 1 if i == j else k for i in range(d)]) for j in range(d)]
        self.num_shape_functions = sum(space.dimension for space in self.pre_basis)
        degree = 2 * k + 2

        point_blocks, weight_blocks = [], []
        own = [[] for _ in range(polytope.num_n_faces)]
        closed = [[] for _ in range(polytope.num_n_faces)]
        self.facet_normal_directions = {}
        dof = 0

        facet_quadrature = create_facet_quadrature(polytope, degree)
        facet_test = TensorProductSpace.lagrange([k] * (d - 1)).evaluate(
            facet_quadrature.coords if d > 1 else np.zeros((0, 1)))
        for facet in polytope.n_faces_of_dim(d - 1):
            n_face = polytope.n_faces[facet]
            direction = next(i for i in range(d) if not (n_face.extrusion >> i) & 1)
            self.facet_normal_directions[facet] = direction
            offset, matrix = polytope.n_face_map(n_face)
            points = offset[:, None] + matrix @ facet_quadrature.coords
            tests = facet_test.values * facet_quadrature.weights
            weights = np.zeros((tests.shape[0], d, tests.shape[1]))
            weights[:, direction, :] = tests
            point_blocks.append(points)
            weight_blocks.append(weights)
            own[facet] = list(range(dof, dof + tests.shape[0]))
            closed[facet] = own[facet]
            dof += tests.shape[0]

        if k >= 1:
            cell_quadrature = create_polytope_quadrature(polytope, degree)
            for j in range(d):
                tests = TensorProductSpace.lagrange([k - 1 if i == j else k for i in range(d)]).evaluate(
                    cell_quadrature.coords).values * cell_quadrature.weights
                weights = np.zeros((tests.shape[0], d, tests.shape[1]))
                weights[:, j, :] = tests
                point_blocks.append(cell_quadrature.coords)
                weight_blocks.append(weights)
                own[-1].extend(range(dof, dof + tests.shape[0]))
                dof += tests.shape[0]

        if dof != self.num_shape_functions:
            raise ValueError(f"RT_{k}: {dof} moments for {self.num_shape_functions} pre-basis functions")

        self.moment_points = np.hstack(point_blocks)
        self.moment_weights = np.zeros((dof, d, self.moment_points.shape[1]))
        row, col = 0, 0
        for points, weights in zip(point_blocks, weight_blocks):
            self.moment_weights[row:row + weights.shape[0], :, col:col + points.shape[1]] = weights
            row += weights.shape[0]
            col += points.shape[1]

        pre_values, _ = self._evaluate_pre_basis(self.moment_points)
        self.pre_basis_moments = np.einsum('acp,cbp->ab', self.moment_weights, pre_values)
        self.change_of_basis = build_change_of_basis(self.pre_basis_moments)

        if not self.conformity:
            self._cell_owns_everything()
            return
        closed[-1] = list(range(dof))
        self._set_ownership(own, closed)
        for dim in range(1, d):
            if dim == d - 1:
                first = polytope.n_faces_of_dim(dim)[0]
                labels = create_node_array(polytope.n_face_polytope(first), k).node_coords_lex
                self.own_dof_permutations[dim] = self._permutation_table(labels, first, k)
            else:
                self.own_dof_permutations[dim] = np.zeros((0, 1), dtype=np.int64)

    @property
    def default_quadrature_degree(self) -> int:
        return 2 * (self.order + 1)

    def _evaluate_pre_basis(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        d = self.num_dims
        num_points = points.shape[1]
        values = np.zeros((d, self.num_shape_functions, num_points))
        gradients = np.zeros((d, d, self.num_shape_functions, num_points))
        start = 0
        for j, space in enumerate(self.pre_basis):
            evaluation = space.evaluate(points)
            stop = start + space.dimension
            values[j, start:stop] = evaluation.values
            gradients[j, :, start:stop] = evaluation.gradients
            start = stop
        return values, gradients

    def evaluate(self, points: np.ndarray) -> Interpolation:
        values, gradients = self._evaluate_pre_basis(np.asarray(points, dtype=float))
        phi = self.change_of_basis
        return Interpolation(np.einsum('ab,cbp->cap', phi, values),
                             np.einsum('ab,cjbp->cjap', phi, gradients))


_FE_CLASSES = {
    FEType.LAGRANGIAN: LagrangianReferenceFE,
    FEType.RAVIART_THOMAS: RaviartThomasReferenceFE,
    FEType.VOID: VoidReferenceFE,
}


@lru_cache(maxsize=None)
def _cached_reference_fe(polytope: Polytope, fe_type: str, order: int, field_type: str, conformity: bool) -> ReferenceFE:
    reference_fe = _FE_CLASSES[fe_type](polytope, order, field_type, conformity)
    logger.info("[ReferenceFE] Created %r with %d shape functions", reference_fe, reference_fe.num_shape_functions)
    return reference_fe


def make_reference_fe(polytope: Polytope, fe_type: str, order: int = 1,
                      field_type: str = FieldType.SCALAR, conformity: bool = True) -> ReferenceFE:
    """Factory for reference FEs; equal arguments return the same shared instance."""
    if fe_type not in _FE_CLASSES:
        raise ValueError(f"Unknown FE type '{fe_type}'")
    if field_type not in FieldType.values:
        raise ValueError(f"Unknown field type '{field_type}'")
    if fe_type == FEType.RAVIART_THOMAS:
        field_type = FieldType.VECTOR
    if fe_type == FEType.VOID:
        order = 0
    return _cached_reference_fe(polytope, str(fe_type), int(order), str(field_type), bool(conformity))


def create_quadrature(reference_fe: ReferenceFE, degree: Optional[int] = None) -> Quadrature:
    if degree is None:
        degree = reference_fe.default_quadrature_degree
    return create_polytope_quadrature(reference_fe.polytope, degree)


def create_interpolation(reference_fe: ReferenceFE, quadrature: Quadrature) -> Interpolation:
    if quadrature.num_dims != reference_fe.num_dims:
        raise ValueError(f"Quadrature of dimension {quadrature.num_dims} used with a {reference_fe.num_dims}D FE")
    return reference_fe.evaluate(quadrature.coords)


def apply_cell_map(reference_fe: ReferenceFE, reference: Interpolation, cell_map) -> Interpolation:
    """
    Push reference shape functions to the physical cell.

    ``cell_map`` provides ``jacobian``/``inv_jacobian`` ([d, d, np]) and
    ``det_jacobian`` ([np]) at the interpolation points.
    """
    inv_jacobian = cell_map.inv_jacobian
    gradients = np.einsum('cjap,jip->ciap', reference.gradients, inv_jacobian)
    if reference_fe.fe_type != FEType.RAVIART_THOMAS:
        return Interpolation(reference.values, gradients)
    jacobian = cell_map.jacobian
    scale = 1.0 / cell_map.det_jacobian
    values = np.einsum('cep,eap->cap', jacobian, reference.values) * scale
    gradients = np.einsum('cep,eiap->ciap', jacobian, gradients) * scale
    return Interpolation(values, gradients)


def permute_dof_lid_n_face(reference_fe: ReferenceFE, permutation_index: int, node_lid: int, n_face_dim: int) -> int:
    return reference_fe.permute_dof_lid_n_face(permutation_index, node_lid, n_face_dim)
