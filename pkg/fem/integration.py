"""
Cell and facet geometric maps and the integrators built on them.

All maps are first-order Lagrangian (affine, bi- or tri-linear). Jacobians are stored
as [d, d, n_points] with J[i, j] = dx_i / dxhat_j.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from django.conf import settings

from .polytope import Polytope, apply_cube_symmetry
from .quadrature import Quadrature
from .reference_fe import (FEType, FieldType, Interpolation, ReferenceFE, apply_cell_map,
                           create_interpolation, make_reference_fe)

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-14


def geometry_reference_fe(polytope: Polytope) -> ReferenceFE:
    return make_reference_fe(polytope, FEType.LAGRANGIAN, 1, FieldType.SCALAR, True)


def invert_jacobian(jacobian: np.ndarray):
    """Determinant and inverse of a stack of small matrices [d, d, np]."""
    d = jacobian.shape[0]
    if d == 1:
        det = jacobian[0, 0].copy()
        return det, (1.0 / det)[None, None, :]
    if d == 2:
        a, b = jacobian[0, 0], jacobian[0, 1]
        c, e = jacobian[1, 0], jacobian[1, 1]
        det = a * e - b * c
        inverse = np.array([[e, -b], [-c, a]]) / det
        return det, inverse
    if d == 3:
        c0, c1, c2 = jacobian[:, 0], jacobian[:, 1], jacobian[:, 2]
        r0 = np.cross(c1, c2, axis=0)
        r1 = np.cross(c2, c0, axis=0)
        r2 = np.cross(c0, c1, axis=0)
        det = np.einsum('ip,ip->p', c0, r0)
        return det, np.array([r0, r1, r2]) / det
    stacked = np.moveaxis(jacobian, -1, 0)
    return np.linalg.det(stacked), np.moveaxis(np.linalg.inv(stacked), 0, -1)


class CellMap:
    """
    Geometric map Phi_K evaluated at a fixed set of reference points.

    Built once per (point set, geometry FE) and updated for every cell with
    ``update(node_coordinates)``.
    """

    def __init__(self, points: np.ndarray, geometry_fe: ReferenceFE, weights: Optional[np.ndarray] = None):
        self.points = np.asarray(points, dtype=float)
        self.weights = weights
        self.geometry_fe = geometry_fe
        self.num_dims = geometry_fe.num_dims
        self.geometry = geometry_fe.evaluate(self.points)
        self.node_coordinates = None
        self.jacobian = None
        self.inv_jacobian = None
        self.det_jacobian = None
        self.quad_points_phys = None

    @classmethod
    def from_quadrature(cls, quadrature: Quadrature, geometry_fe: ReferenceFE) -> 'CellMap':
        return cls(quadrature.coords, geometry_fe, quadrature.weights)

    @property
    def num_points(self) -> int:
        return self.points.shape[1]

    def update(self, node_coordinates: np.ndarray):
        """Load the cell's geometry nodes ([d, n_nodes]) and recompute the map data."""
        coords = np.asarray(node_coordinates, dtype=float)
        self.node_coordinates = coords
        self.quad_points_phys = coords @ self.geometry.values[0]
        self.jacobian = np.einsum('ia,jap->ijp', coords, self.geometry.gradients[0])
        self.det_jacobian, self.inv_jacobian = invert_jacobian(self.jacobian)

        size = np.linalg.norm(coords.max(axis=1) - coords.min(axis=1))
        if np.min(np.abs(self.det_jacobian)) < DEGENERACY_TOL * size ** self.num_dims:
            raise ValueError(f"Degenerate cell: |det J| = {np.min(np.abs(self.det_jacobian)):.3e} for size {size:.3e}")

    @property
    def measure(self) -> np.ndarray:
        """w_gp |det J(x_gp)|; the determinant enters in absolute value."""
        if self.weights is None:
            raise ValueError("This cell map was built on a point set without weights")
        return self.weights * np.abs(self.det_jacobian)


def cell_map_update(cell_map: CellMap, node_coordinates: np.ndarray):
    cell_map.update(node_coordinates)


class CellIntegrator:
    """Shape functions of one reference FE at the points of one quadrature, reference and physical."""

    def __init__(self, quadrature: Quadrature, reference_fe: ReferenceFE):
        self.quadrature = quadrature
        self.reference_fe = reference_fe
        self.reference = create_interpolation(reference_fe, quadrature)
        self.physical: Optional[Interpolation] = None

    def update(self, cell_map: CellMap):
        self.physical = apply_cell_map(self.reference_fe, self.reference, cell_map)

    def get(self, kind: str) -> np.ndarray:
        return _get(kind, self.reference_fe, self.physical)

    def get_values(self) -> np.ndarray:
        return self.get('values')

    def get_gradients(self) -> np.ndarray:
        return self.get('gradients')

    def get_divergences(self) -> np.ndarray:
        return self.get('divergences')


def _get(kind: str, reference_fe: ReferenceFE, interpolation: Optional[Interpolation], permutation=None) -> np.ndarray:
    if interpolation is None:
        raise RuntimeError("Integrator used before update")
    if kind == 'values':
        data = interpolation.values
    elif kind == 'gradients':
        data = interpolation.gradients
    elif kind == 'divergences':
        if reference_fe.num_components != reference_fe.num_dims or reference_fe.field_type != FieldType.VECTOR:
            raise ValueError(f"Divergence is not defined for a {reference_fe.field_type} FE")
        data = interpolation.divergences
    else:
        raise ValueError(f"Unknown integrator quantity '{kind}'")
    if permutation is not None:
        data = data[..., permutation]
    return data


def integrator_get(kind: str, integrator, side: Optional[int] = None) -> np.ndarray:
    """Fetch values / gradients / divergences from a cell or facet integrator."""
    if side is None:
        return integrator.get(kind)
    return integrator.get(kind, side)


def build_qpoints_permutation(quadrature: Quadrature, num_symmetries: int, permutation_index: int,
                              tol: Optional[float] = None) -> np.ndarray:
    """
    Pi such that minus-side facet point Pi[gp] is the image of plus-side point gp.

    Facet points live on the reference facet [0, 1]^(d-1); only cube facets have
    non-trivial symmetries.
    """
    if tol is None:
        tol = getattr(settings, 'FEM_GEOMETRY_TOL', 1e-10)
    num_points = quadrature.num_points
    if num_symmetries == 1 or quadrature.num_dims == 0:
        if permutation_index != 0:
            raise ValueError(f"Permutation index {permutation_index} on a facet with only the identity")
        return np.arange(num_points)
    coords = quadrature.coords
    permutation = np.empty(num_points, dtype=np.int64)
    for gp in range(num_points):
        image = np.array(apply_cube_symmetry(permutation_index, tuple(coords[:, gp]), 1.0))
        distance = np.linalg.norm(coords - image[:, None], axis=0)
        match = int(np.argmin(distance))
        if distance[match] > tol:
            raise ValueError(f"Facet quadrature point {gp} has no image under permutation {permutation_index}")
        permutation[gp] = match
    if len(set(permutation.tolist())) != num_points:
        raise ValueError(f"Permutation {permutation_index} is not a bijection of the facet quadrature")
    return permutation


class FacetMaps:
    """
    Geometry of a facet seen from its one or two cells.

    Holds one restricted cell map per side and per local facet id, the facet
    Jacobian measure |J_F| and the outward unit normals.
    """

    def __init__(self, polytope: Polytope, quadrature: Quadrature, geometry_fe: Optional[ReferenceFE] = None):
        self.polytope = polytope
        self.quadrature = quadrature
        self.num_dims = polytope.num_dims
        geometry_fe = geometry_fe or geometry_reference_fe(polytope)
        self.facet_lids = list(polytope.n_faces_of_dim(self.num_dims - 1))
        self.restricted_points: Dict[int, np.ndarray] = {}
        self.facet_matrices: Dict[int, np.ndarray] = {}
        self.reference_normals: Dict[int, np.ndarray] = {}
        for lid in self.facet_lids:
            offset, matrix = polytope.n_face_map(lid)
            self.facet_matrices[lid] = matrix.astype(float)
            self.restricted_points[lid] = offset[:, None] + matrix @ quadrature.coords
            self.reference_normals[lid] = polytope.facet_normal(lid)
        self.cell_maps: List[Dict[int, CellMap]] = [
            {lid: CellMap(self.restricted_points[lid], geometry_fe) for lid in self.facet_lids} for _ in range(2)]

        num_symmetries = polytope.num_n_face_symmetries(self.facet_lids[0])
        self.qpoints_perm = np.column_stack([
            build_qpoints_permutation(quadrature, num_symmetries, p) for p in range(num_symmetries)])

        self.num_sides = 0
        self.facet_lid_pair: List[int] = []
        self.permutation = np.arange(quadrature.num_points)
        self.det_jacobian = None
        self.normals: List[np.ndarray] = []

    @property
    def num_points(self) -> int:
        return self.quadrature.num_points

    def side_map(self, side: int) -> CellMap:
        return self.cell_maps[side][self.facet_lid_pair[side]]

    def update(self, facet_lids: Sequence[int], cell_coordinates: Sequence[np.ndarray],
               permutation_index: int = 0, reorientation_factor: float = 1.0):
        """
        Recompute the facet geometry.

        ``facet_lids`` and ``cell_coordinates`` hold one entry for boundary facets and
        two (plus, minus) for interior ones.
        """
        self.num_sides = len(facet_lids)
        self.facet_lid_pair = list(facet_lids)
        for side, (lid, coords) in enumerate(zip(facet_lids, cell_coordinates)):
            self.cell_maps[side][lid].update(coords)
        self.permutation = self.qpoints_perm[:, permutation_index]

        plus = self.side_map(0)
        lid = facet_lids[0]
        jacobian_f = np.einsum('ijp,js->isp', plus.jacobian, self.facet_matrices[lid])
        gram = np.einsum('isp,itp->pst', jacobian_f, jacobian_f)
        self.det_jacobian = np.sqrt(np.linalg.det(gram))
        coords = np.asarray(cell_coordinates[0], dtype=float)
        size = np.linalg.norm(coords.max(axis=1) - coords.min(axis=1))
        if np.min(self.det_jacobian) < DEGENERACY_TOL * size ** (self.num_dims - 1):
            raise ValueError("Degenerate facet")

        normal = np.einsum('jip,j->ip', plus.inv_jacobian, self.reference_normals[lid])
        normal /= np.linalg.norm(normal, axis=0)
        outward = plus.quad_points_phys.mean(axis=1) - coords.mean(axis=1)
        if np.dot(normal.mean(axis=1), outward) < 0:
            normal = -normal
        normal *= reorientation_factor
        self.normals = [normal, -normal]

    @property
    def measure(self) -> np.ndarray:
        return self.quadrature.weights * self.det_jacobian

    def get_quadrature_points_coordinates(self, side: int = 0) -> np.ndarray:
        points = self.side_map(side).quad_points_phys
        return points[:, self.permutation] if side == 1 else points

    def get_normals(self, side: int = 0) -> np.ndarray:
        return self.normals[side]


def facet_maps_update(facet_maps: FacetMaps, facet_lids, cell_coordinates, permutation_index: int = 0,
                      reorientation_factor: float = 1.0):
    facet_maps.update(facet_lids, cell_coordinates, permutation_index, reorientation_factor)


class FacetIntegrator:
    """
    Shape functions of the two neighbour cells at the facet quadrature points.

    Minus-side accessors return data already permuted by the quadrature point
    permutation, so index gp refers to the same physical point on both sides.
    """

    def __init__(self, facet_maps: FacetMaps, reference_fes: Sequence[ReferenceFE]):
        self.facet_maps = facet_maps
        self.reference_fes = list(reference_fes)
        if len(self.reference_fes) == 1:
            self.reference_fes = self.reference_fes * 2
        self.reference: List[Dict[int, Interpolation]] = [
            {lid: fe.evaluate(points) for lid, points in facet_maps.restricted_points.items()}
            for fe in self.reference_fes]
        self.physical: List[Optional[Interpolation]] = [None, None]

    @property
    def qpoints_perm(self) -> np.ndarray:
        return self.facet_maps.qpoints_perm

    def update(self):
        """Push reference data through the side maps of the last ``FacetMaps.update``."""
        maps = self.facet_maps
        self.physical = [None, None]
        for side in range(maps.num_sides):
            lid = maps.facet_lid_pair[side]
            self.physical[side] = apply_cell_map(self.reference_fes[side], self.reference[side][lid],
                                                 maps.cell_maps[side][lid])

    def get(self, kind: str, side: int = 0) -> np.ndarray:
        permutation = self.facet_maps.permutation if side == 1 else None
        return _get(kind, self.reference_fes[side], self.physical[side], permutation)

    def get_values(self, side: int = 0) -> np.ndarray:
        return self.get('values', side)

    def get_gradients(self, side: int = 0) -> np.ndarray:
        return self.get('gradients', side)

    def get_divergences(self, side: int = 0) -> np.ndarray:
        return self.get('divergences', side)
