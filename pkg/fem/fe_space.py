"""
Global FE spaces: one or several fields over a triangulation.

Each field is given a reference FE per cell set. Global DOF ids are stored per
(cell, field) in ``ptr_dofs_x_fe / lst_dofs_gids``: ids >= 0 are free and dense per
block, ids < 0 are fixed (strong Dirichlet) and dense in -1..-num_fixed_dofs. Fixed
ids are generated with the space; free ids by ``generate_global_dof_numbering``.

Conforming fields share the DOFs of a vef among all cells around it. The vef is
owned by the first (lowest id) cell around it carrying a non-void FE; the other
cells fetch the owner's ids through the n-face permutation between the two views.
"""

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from django.db import models

from .integration import (CellIntegrator, CellMap, FacetIntegrator, FacetMaps,
                          geometry_reference_fe)
from .linalg import BlockVector
from .quadrature import Quadrature, create_facet_quadrature, create_polytope_quadrature
from .reference_fe import FEType, FieldType, ReferenceFE, make_reference_fe, num_components_of
from .triangulation import FacetInfo, Triangulation

logger = logging.getLogger(__name__)

UserFunction = Callable[[np.ndarray], np.ndarray]


class InterpolationTarget(models.TextChoices):
    FREE = 'free', 'Free DOFs'
    FIXED_DIRICHLET = 'fixed_dirichlet', 'Fixed Dirichlet DOFs'


@dataclass(frozen=True)
class FieldSpec:
    fe_type: str = FEType.LAGRANGIAN
    order: int = 1
    field_type: str = FieldType.SCALAR
    conformity: bool = True

    def void(self) -> 'FieldSpec':
        return FieldSpec(FEType.VOID, 0, self.field_type, self.conformity)


@dataclass
class DirichletCondition:
    mask: Tuple[bool, ...]
    functions: Tuple[Optional[UserFunction], ...]


class Conditions:
    """
    Strong Dirichlet data: vef set id -> (per-component mask, per-component function).

    Components run over all fields in order. An RT field only honours the mask
    entry of its first component.
    """

    def __init__(self, num_components: int):
        self.num_components = num_components
        self._conditions: Dict[int, DirichletCondition] = {}

    def add(self, set_id: int, mask: Sequence[bool], functions: Optional[Sequence[Optional[UserFunction]]] = None):
        if len(mask) != self.num_components:
            raise ValueError(f"Mask of length {len(mask)} for {self.num_components} components")
        functions = tuple(functions) if functions is not None else (None,) * self.num_components
        if len(functions) != self.num_components:
            raise ValueError(f"Got {len(functions)} functions for {self.num_components} components")
        self._conditions[int(set_id)] = DirichletCondition(tuple(bool(m) for m in mask), functions)
        return self

    def get(self, set_id: int) -> Optional[DirichletCondition]:
        return self._conditions.get(int(set_id))

    @property
    def set_ids(self) -> List[int]:
        return sorted(self._conditions)

    def __bool__(self):
        return bool(self._conditions)


class BlockLayout:
    """Field -> block map, field coupling and, after numbering, the free DOF count of each block."""

    def __init__(self, field_blocks: Sequence[int], field_coupling: Optional[np.ndarray] = None):
        self.field_blocks = tuple(int(b) for b in field_blocks)
        num_fields = len(self.field_blocks)
        if num_fields == 0:
            raise ValueError("A block layout needs at least one field")
        self.num_blocks = max(self.field_blocks) + 1
        if min(self.field_blocks) < 0 or set(self.field_blocks) != set(range(self.num_blocks)):
            raise ValueError(f"Field blocks {list(self.field_blocks)} must cover 0..n_blocks-1 without gaps")
        if field_coupling is None:
            field_coupling = np.ones((num_fields, num_fields), dtype=bool)
        self.field_coupling = np.asarray(field_coupling, dtype=bool)
        if self.field_coupling.shape != (num_fields, num_fields):
            raise ValueError(f"Field coupling must be {num_fields}x{num_fields}")
        self.dofs_per_block = [0] * self.num_blocks

    @classmethod
    def monolithic(cls, num_fields: int, field_coupling=None) -> 'BlockLayout':
        return cls([0] * num_fields, field_coupling)

    @classmethod
    def one_block_per_field(cls, num_fields: int, field_coupling=None) -> 'BlockLayout':
        return cls(list(range(num_fields)), field_coupling)

    def __repr__(self):
        return f"BlockLayout(field_blocks={list(self.field_blocks)}, dofs_per_block={self.dofs_per_block})"

    @property
    def num_fields(self) -> int:
        return len(self.field_blocks)

    def same_structure(self, other: 'BlockLayout') -> bool:
        return (self.field_blocks == other.field_blocks
                and np.array_equal(self.field_coupling, other.field_coupling))

    def fields_in_block(self, block: int) -> List[int]:
        return [f for f, b in enumerate(self.field_blocks) if b == block]

    def block_coupling(self) -> np.ndarray:
        coupling = np.zeros((self.num_blocks, self.num_blocks), dtype=bool)
        for f in range(self.num_fields):
            for g in range(self.num_fields):
                if self.field_coupling[f, g]:
                    coupling[self.field_blocks[f], self.field_blocks[g]] = True
        return coupling


class FESpace:
    def __init__(self, triangulation: Triangulation, fields: Sequence[FieldSpec],
                 conditions: Optional[Conditions] = None,
                 cell_set_fields: Optional[Dict[int, Sequence[FieldSpec]]] = None):
        self.triangulation = triangulation
        self.polytope = triangulation.polytope
        self.fields = list(fields)
        self.num_fields = len(self.fields)
        if self.num_fields == 0:
            raise ValueError("An FE space needs at least one field")
        num_dims = triangulation.num_dims
        self.field_num_components = [
            num_dims if spec.fe_type == FEType.RAVIART_THOMAS else num_components_of(spec.field_type, num_dims)
            for spec in self.fields]
        self.field_component_offsets = np.concatenate([[0], np.cumsum(self.field_num_components)]).astype(int)
        self.num_components = int(self.field_component_offsets[-1])
        self.conditions = conditions if conditions is not None else Conditions(self.num_components)
        if self.conditions.num_components != self.num_components:
            raise ValueError(f"Conditions describe {self.conditions.num_components} components, "
                             f"the space has {self.num_components}")

        self.reference_fes: List[ReferenceFE] = []
        self.field_cell_to_ref_fes = np.empty((self.num_fields, triangulation.num_cells), dtype=np.int64)
        self._assign_reference_fes(cell_set_fields)
        self._check_conforming_orders()

        shapes = np.array([[self.reference_fes[i].num_shape_functions for i in row]
                           for row in self.field_cell_to_ref_fes.T])
        self.ptr_dofs_x_fe = np.zeros(shapes.size + 1, dtype=np.int64)
        self.ptr_dofs_x_fe[1:] = np.cumsum(shapes.ravel())
        self.lst_dofs_gids = np.zeros(self.ptr_dofs_x_fe[-1], dtype=np.int64)
        self._fixed = np.zeros(self.ptr_dofs_x_fe[-1], dtype=bool)
        self.num_fixed_dofs = 0
        self.num_dofs_x_field = [0] * self.num_fields
        self.block_layout: Optional[BlockLayout] = None

        self._owners = [self._vef_owners(f) for f in range(self.num_fields)]
        self._generate_fixed_dof_numbering()

        self._quadratures: Dict[int, Quadrature] = {}
        self._cell_maps: Dict[int, CellMap] = {}
        self._cell_integrators: Dict[Tuple[int, int], CellIntegrator] = {}
        self.cell_quadrature_degrees: Optional[np.ndarray] = None
        self._facet_maps: Dict[int, FacetMaps] = {}
        self._facet_integrators: Dict[Tuple[int, int, int], FacetIntegrator] = {}
        self.facets: List[FacetInfo] = []
        self.facet_gids: Optional[np.ndarray] = None
        self.facet_permutation_indices: Optional[np.ndarray] = None
        self.facet_quadrature_degrees: Optional[np.ndarray] = None

        logger.info("[FESpace] %d field(s) on %d cells, %d reference FE(s), %d fixed DOFs",
                    self.num_fields, triangulation.num_cells, len(self.reference_fes), self.num_fixed_dofs)

    def __repr__(self):
        return f"FESpace(fields={self.fields}, num_cells={self.triangulation.num_cells})"

    # -- set-up ------------------------------------------------------------

    def _reference_fe_index(self, spec: FieldSpec) -> int:
        reference_fe = make_reference_fe(self.polytope, spec.fe_type, spec.order, spec.field_type, spec.conformity)
        for i, known in enumerate(self.reference_fes):
            if known is reference_fe:
                return i
        self.reference_fes.append(reference_fe)
        return len(self.reference_fes) - 1

    def _assign_reference_fes(self, cell_set_fields):
        cell_sets = self.triangulation.cells_set_ids
        if cell_set_fields is None:
            cell_set_fields = {int(s): self.fields for s in np.unique(cell_sets)}
        missing = sorted(set(int(s) for s in np.unique(cell_sets)) - set(cell_set_fields))
        if missing:
            raise ValueError(f"Cell set(s) {missing} are not mapped to reference FEs")
        for set_id, specs in cell_set_fields.items():
            if len(specs) != self.num_fields:
                raise ValueError(f"Cell set {set_id} maps {len(specs)} FEs for {self.num_fields} fields")
            cells = cell_sets == set_id
            for f, spec in enumerate(specs):
                default = self.fields[f]
                if spec.fe_type != FEType.VOID and (spec.field_type != default.field_type
                                                    or spec.conformity != default.conformity):
                    raise ValueError(f"Cell set {set_id}: field {f} must keep field type "
                                     f"'{default.field_type}' and conformity {default.conformity}")
                self.field_cell_to_ref_fes[f, cells] = self._reference_fe_index(spec)

    def _check_conforming_orders(self):
        tri = self.triangulation
        for f, spec in enumerate(self.fields):
            if not spec.conformity:
                continue
            for facet in tri.facets():
                if facet.is_boundary:
                    continue
                plus, minus = (self.reference_fe(c, f) for c in facet.cells)
                if FEType.VOID in (plus.fe_type, minus.fe_type):
                    continue
                if plus.fe_type != minus.fe_type or plus.order != minus.order:
                    raise ValueError(f"Field {f}: {plus!r} and {minus!r} meet at facet {facet.gid}; "
                                     f"conforming fields need the same FE on both sides")

    def _vef_owners(self, field: int) -> np.ndarray:
        """Owner cell of every vef for ``field``: first cell around with a non-void FE, -1 if none."""
        tri = self.triangulation
        owners = np.full(tri.num_vefs, -1, dtype=np.int64)
        void = np.array([fe.fe_type == FEType.VOID for fe in self.reference_fes])
        carries = ~void[self.field_cell_to_ref_fes[field]]
        for vef in range(tri.num_vefs):
            around = tri.cells_around(vef)
            around = around[carries[around]]
            if around.size:
                owners[vef] = around.min()
        return owners

    # -- accessors ---------------------------------------------------------

    def reference_fe(self, cell: int, field: int) -> ReferenceFE:
        return self.reference_fes[self.field_cell_to_ref_fes[field, cell]]

    def _slice(self, cell: int, field: int) -> slice:
        k = cell * self.num_fields + field
        return slice(self.ptr_dofs_x_fe[k], self.ptr_dofs_x_fe[k + 1])

    def get_fe_dofs(self, cell: int, field: int) -> np.ndarray:
        """Signed global ids of the local DOFs of ``field`` on ``cell``."""
        return self.lst_dofs_gids[self._slice(cell, field)]

    def get_elem2dof(self, cell: int) -> np.ndarray:
        return np.concatenate([self.get_fe_dofs(cell, f) for f in range(self.num_fields)])

    def get_dof_blocks(self, cell: int) -> np.ndarray:
        if self.block_layout is None:
            raise RuntimeError("Global DOF numbering has not been generated")
        return np.concatenate([np.full(self.reference_fe(cell, f).num_shape_functions, self.block_layout.field_blocks[f])
                               for f in range(self.num_fields)]).astype(np.int64)

    @property
    def num_free_dofs(self) -> int:
        return sum(self.num_dofs_x_field)

    # -- DOF numbering -----------------------------------------------------

    def _fixed_own_dofs(self, field: int, reference_fe: ReferenceFE, vef: int, own: np.ndarray) -> np.ndarray:
        condition = self.conditions.get(self.triangulation.vefs_set_ids[vef])
        if condition is None or own.size == 0:
            return np.zeros(own.size, dtype=bool)
        offset = self.field_component_offsets[field]
        if reference_fe.fe_type == FEType.RAVIART_THOMAS:
            return np.full(own.size, condition.mask[offset])
        components = own % reference_fe.num_components
        return np.array([condition.mask[offset + c] for c in components], dtype=bool)

    def _visit_vefs(self, field: int, cell: int):
        """(local n-face id, vef gid, owner cell) of every lower dimensional n-face with own DOFs."""
        tri = self.triangulation
        reference_fe = self.reference_fe(cell, field)
        vefs = tri.cell_vef_gids(cell)
        for lid in range(self.polytope.num_n_faces - 1):
            if reference_fe.num_own_dofs_n_face(lid) == 0:
                continue
            vef = int(vefs[lid])
            yield lid, vef, int(self._owners[field][vef])

    def _fetch_from_owner(self, field: int, cell: int, lid: int, vef: int, owner: int) -> np.ndarray:
        tri = self.triangulation
        reference_fe = self.reference_fe(cell, field)
        owner_fe = self.reference_fe(owner, field)
        owner_lid = tri.vef_lid_in_cell(owner, vef)
        permutation = tri.get_permutation_index(cell, owner, lid, owner_lid)
        dim = self.polytope.n_face_dim(lid)
        owner_own = owner_fe.get_own_dofs_n_face(owner_lid)
        owner_ids = self.get_fe_dofs(owner, field)
        return np.array([owner_ids[owner_own[reference_fe.permute_own_dof(permutation, j, dim)]]
                         for j in range(reference_fe.num_own_dofs_n_face(lid))], dtype=np.int64)

    def _generate_fixed_dof_numbering(self):
        if not self.conditions:
            return
        next_fixed = 0
        for f, spec in enumerate(self.fields):
            if not spec.conformity:
                continue
            for cell in range(self.triangulation.num_cells):
                reference_fe = self.reference_fe(cell, f)
                ids = self.lst_dofs_gids[self._slice(cell, f)]
                fixed = self._fixed[self._slice(cell, f)]
                for lid, vef, owner in self._visit_vefs(f, cell):
                    own = reference_fe.get_own_dofs_n_face(lid)
                    mask = self._fixed_own_dofs(f, reference_fe, vef, own)
                    if not mask.any():
                        continue
                    if owner == cell:
                        count = int(mask.sum())
                        ids[own[mask]] = -(next_fixed + 1 + np.arange(count))
                        next_fixed += count
                    else:
                        ids[own[mask]] = self._fetch_from_owner(f, cell, lid, vef, owner)[mask]
                    fixed[own[mask]] = True
        self.num_fixed_dofs = next_fixed
        logger.debug("[FESpace] Fixed DOF numbering: %d fixed DOFs", next_fixed)

    def generate_global_dof_numbering(self, block_layout: Optional[BlockLayout] = None):
        """
        Number the free DOFs block by block, fields in order inside each block.

        Within a cell the interior DOFs are numbered before those on its vefs. Calling
        again with a layout of the same structure does nothing.
        """
        if block_layout is None:
            block_layout = BlockLayout.monolithic(self.num_fields)
        if block_layout.num_fields != self.num_fields:
            raise ValueError(f"Block layout for {block_layout.num_fields} fields, the space has {self.num_fields}")
        if self.block_layout is not None and self.block_layout.same_structure(block_layout):
            block_layout.dofs_per_block = list(self.block_layout.dofs_per_block)
            self.block_layout = block_layout
            return

        tri = self.triangulation
        interior = self.polytope.cell_index
        for block in range(block_layout.num_blocks):
            next_free = 0
            for f in block_layout.fields_in_block(block):
                start = next_free
                conforming = self.fields[f].conformity
                for cell in range(tri.num_cells):
                    reference_fe = self.reference_fe(cell, f)
                    ids = self.lst_dofs_gids[self._slice(cell, f)]
                    fixed = self._fixed[self._slice(cell, f)]
                    if not conforming:
                        n = reference_fe.num_shape_functions
                        ids[:] = next_free + np.arange(n)
                        next_free += n
                        continue
                    own = reference_fe.get_own_dofs_n_face(interior)
                    ids[own] = next_free + np.arange(own.size)
                    next_free += own.size
                    for lid, vef, owner in self._visit_vefs(f, cell):
                        own = reference_fe.get_own_dofs_n_face(lid)
                        if owner == cell:
                            free = own[~fixed[own]]
                            ids[free] = next_free + np.arange(free.size)
                            next_free += free.size
                        else:
                            ids[own] = self._fetch_from_owner(f, cell, lid, vef, owner)
                self.num_dofs_x_field[f] = next_free - start
            block_layout.dofs_per_block[block] = next_free
        self.block_layout = block_layout
        logger.info("[FESpace] Global DOF numbering: %s free DOFs per block, %d fixed",
                    block_layout.dofs_per_block, self.num_fixed_dofs)

    # -- integration set-up ------------------------------------------------

    def _default_degree(self, cells: Sequence[int]) -> int:
        return max(self.reference_fe(c, f).default_quadrature_degree
                   for c in cells for f in range(self.num_fields))

    def setup_cell_integration(self, degree=None):
        """
        Share quadratures, cell maps and integrators among cells.

        ``degree`` is None (FE defaults), an int, or a callable of the cell id.
        """
        tri = self.triangulation
        geometry_fe = tri.reference_fe_geo
        degrees = np.empty(tri.num_cells, dtype=np.int64)
        for cell in range(tri.num_cells):
            if degree is None:
                degrees[cell] = self._default_degree([cell])
            else:
                degrees[cell] = degree(cell) if callable(degree) else degree
        self.cell_quadrature_degrees = degrees
        for cell in range(tri.num_cells):
            q = int(degrees[cell])
            if q not in self._quadratures:
                quadrature = create_polytope_quadrature(self.polytope, q)
                self._quadratures[q] = quadrature
                self._cell_maps[quadrature.uid] = CellMap.from_quadrature(quadrature, geometry_fe)
            quadrature = self._quadratures[q]
            for f in range(self.num_fields):
                reference_fe = self.reference_fe(cell, f)
                key = (quadrature.uid, reference_fe.uid)
                if key not in self._cell_integrators:
                    self._cell_integrators[key] = CellIntegrator(quadrature, reference_fe)
        logger.debug("[FESpace] Cell integration: %d quadrature(s), %d integrator(s)",
                     self.num_quadratures, self.num_cell_integrators)

    def setup_facet_integration(self, degree=None):
        """Facet maps and integrators, plus the permutation index of every interior facet."""
        tri = self.triangulation
        self.facets = tri.facets()
        self.facet_gids = np.array([facet.gid for facet in self.facets], dtype=np.int64)
        self.facet_permutation_indices = np.zeros(len(self.facets), dtype=np.int64)
        self.facet_quadrature_degrees = np.empty(len(self.facets), dtype=np.int64)
        geometry_fe = geometry_reference_fe(self.polytope)
        for i, facet in enumerate(self.facets):
            if not facet.is_boundary:
                self.facet_permutation_indices[i] = tri.get_permutation_index(
                    facet.cells[0], facet.cells[1], facet.lids[0], facet.lids[1])
            if degree is None:
                q = self._default_degree(facet.cells)
            else:
                q = degree(facet.gid) if callable(degree) else degree
            self.facet_quadrature_degrees[i] = q
            if q not in self._facet_maps:
                self._facet_maps[q] = FacetMaps(self.polytope, create_facet_quadrature(self.polytope, q), geometry_fe)
            facet_maps = self._facet_maps[q]
            for f in range(self.num_fields):
                fes = [self.reference_fe(c, f) for c in facet.cells]
                key = (facet_maps.quadrature.uid, fes[0].uid, fes[-1].uid)
                if key not in self._facet_integrators:
                    self._facet_integrators[key] = FacetIntegrator(facet_maps, fes)
        logger.debug("[FESpace] Facet integration: %d facets, %d facet integrator(s)",
                     len(self.facets), len(self._facet_integrators))

    @property
    def num_quadratures(self) -> int:
        return len(self._quadratures)

    @property
    def num_cell_maps(self) -> int:
        return len(self._cell_maps)

    @property
    def num_cell_integrators(self) -> int:
        return len(self._cell_integrators)

    def cell_quadrature(self, cell: int) -> Quadrature:
        return self._quadratures[int(self.cell_quadrature_degrees[cell])]

    def cell_map(self, cell: int) -> CellMap:
        return self._cell_maps[self.cell_quadrature(cell).uid]

    def cell_integrator(self, cell: int, field: int) -> CellIntegrator:
        return self._cell_integrators[(self.cell_quadrature(cell).uid, self.reference_fe(cell, field).uid)]

    def facet_maps(self, facet_index: int) -> FacetMaps:
        return self._facet_maps[int(self.facet_quadrature_degrees[facet_index])]

    def facet_integrator(self, facet_index: int, field: int) -> FacetIntegrator:
        facet = self.facets[facet_index]
        fes = [self.reference_fe(c, field) for c in facet.cells]
        return self._facet_integrators[(self.facet_maps(facet_index).quadrature.uid, fes[0].uid, fes[-1].uid)]

    def cells(self) -> 'FECellIterator':
        return FECellIterator(self)

    def facet_iterator(self) -> 'FEFacetIterator':
        return FEFacetIterator(self)


def create_fe_space(triangulation: Triangulation, fields: Sequence[FieldSpec], conditions: Optional[Conditions] = None,
                    cell_set_fields: Optional[Dict[int, Sequence[FieldSpec]]] = None) -> FESpace:
    return FESpace(triangulation, fields, conditions, cell_set_fields)


def generate_global_dof_numbering(fe_space: FESpace, block_layout: Optional[BlockLayout] = None):
    fe_space.generate_global_dof_numbering(block_layout)


def setup_cell_integration(fe_space: FESpace, degree=None):
    fe_space.setup_cell_integration(degree)


def setup_facet_integration(fe_space: FESpace, degree=None):
    fe_space.setup_facet_integration(degree)


def get_fe_dofs(fe_space: FESpace, cell: int, field: int) -> np.ndarray:
    return fe_space.get_fe_dofs(cell, field)


# -- FE functions ----------------------------------------------------------

class FEFunction:
    """Free DOF values laid out by blocks, fixed DOF values in one flat array."""

    def __init__(self, fe_space: FESpace):
        if fe_space.block_layout is None:
            raise RuntimeError("FE functions need the global DOF numbering")
        self.fe_space = fe_space
        self.free_dof_values = BlockVector(fe_space.block_layout.dofs_per_block)
        self.fixed_dof_values = np.zeros(fe_space.num_fixed_dofs)

    def copy(self) -> 'FEFunction':
        clone = FEFunction(self.fe_space)
        clone.free_dof_values = self.free_dof_values.copy()
        clone.fixed_dof_values = self.fixed_dof_values.copy()
        return clone


def gather_nodal_values(fe_function: FEFunction, cell: int, field: int) -> np.ndarray:
    """Local DOF values of ``field`` on ``cell``, reading fixed storage for negative ids."""
    space = fe_function.fe_space
    ids = space.get_fe_dofs(cell, field)
    free = fe_function.free_dof_values.blocks[space.block_layout.field_blocks[field]]
    values = np.empty(ids.size)
    positive = ids >= 0
    values[positive] = free[ids[positive]]
    values[~positive] = fe_function.fixed_dof_values[-ids[~positive] - 1]
    return values


def evaluate_user_function(function: UserFunction, points: np.ndarray, num_components: int) -> np.ndarray:
    """Call a user function on points [d, np] and normalise the result to [n_components, np]."""
    values = np.asarray(function(points), dtype=float)
    num_points = points.shape[1]
    if values.ndim == 0:
        values = np.full((num_components, num_points), float(values))
    elif values.ndim == 1:
        values = values[None, :]
    if values.shape != (num_components, num_points):
        raise ValueError(f"Function returned shape {values.shape}, expected ({num_components}, {num_points})")
    return values


def local_interpolation(fe_space: FESpace, cell: int, field: int, function: UserFunction) -> np.ndarray:
    """sigma_a(function) for every local DOF of ``field`` on ``cell``."""
    reference_fe = fe_space.reference_fe(cell, field)
    if reference_fe.num_shape_functions == 0:
        return np.zeros(0)
    cell_map = CellMap(reference_fe.moment_points, fe_space.triangulation.reference_fe_geo)
    cell_map.update(fe_space.triangulation.cell_coordinates(cell))
    values = evaluate_user_function(function, cell_map.quad_points_phys, reference_fe.num_components)
    if reference_fe.fe_type == FEType.RAVIART_THOMAS:
        # contravariant pull-back: det(J) J^-1 v
        values = np.einsum('ijp,jp->ip', cell_map.inv_jacobian, values) * cell_map.det_jacobian
    return reference_fe.moments(values)


def _scatter(fe_function: FEFunction, ids: np.ndarray, local: np.ndarray, mask: np.ndarray, block: int):
    free = ids >= 0
    fe_function.free_dof_values.blocks[block][ids[mask & free]] = local[mask & free]
    fixed = mask & ~free
    fe_function.fixed_dof_values[-ids[fixed] - 1] = local[fixed]


def interpolate(fe_space: FESpace, field: int, function: UserFunction, fe_function: FEFunction,
                target: str = InterpolationTarget.FREE):
    """
    Write the DOF values of ``function`` into the free or the fixed storage of ``field``.

    Lagrangian DOFs evaluate at the physical nodes; RT DOFs take the moments of the
    contravariant pull-back.
    """
    if target not in InterpolationTarget.values:
        raise ValueError(f"Unknown interpolation target '{target}'")
    block = fe_space.block_layout.field_blocks[field]
    for cell in range(fe_space.triangulation.num_cells):
        ids = fe_space.get_fe_dofs(cell, field)
        mask = ids >= 0 if target == InterpolationTarget.FREE else ids < 0
        if not mask.any():
            continue
        _scatter(fe_function, ids, local_interpolation(fe_space, cell, field, function), mask, block)


def project_dirichlet(fe_space: FESpace, fe_function: FEFunction, fields: Optional[Sequence[int]] = None):
    """Fill the fixed storage from the functions of the installed conditions."""
    tri = fe_space.triangulation
    fields = range(fe_space.num_fields) if fields is None else fields
    for f in fields:
        offset = fe_space.field_component_offsets[f]
        ncomp = fe_space.field_num_components[f]
        block = fe_space.block_layout.field_blocks[f]
        for cell in range(tri.num_cells):
            ids = fe_space.get_fe_dofs(cell, f)
            if not (ids < 0).any():
                continue
            reference_fe = fe_space.reference_fe(cell, f)
            vefs = tri.cell_vef_gids(cell)
            for lid in range(fe_space.polytope.num_n_faces - 1):
                own = reference_fe.get_own_dofs_n_face(lid)
                if own.size == 0 or not (ids[own] < 0).any():
                    continue
                condition = fe_space.conditions.get(tri.vefs_set_ids[vefs[lid]])
                functions = condition.functions[offset:offset + ncomp]
                if any(fn is None for fn, m in zip(functions, condition.mask[offset:offset + ncomp]) if m):
                    raise ValueError(f"Set {tri.vefs_set_ids[vefs[lid]]} fixes field {f} without a function")

                def combined(x, functions=functions):
                    return np.array([np.broadcast_to(fn(x), x.shape[1]) if fn is not None else np.zeros(x.shape[1])
                                     for fn in functions])

                local = local_interpolation(fe_space, cell, f, combined)
                mask = np.zeros(ids.size, dtype=bool)
                mask[own] = True
                _scatter(fe_function, ids, local, mask & (ids < 0), block)


class CellFEFunction:
    """An FE function restricted to a cell and evaluated at the cell quadrature points."""

    def __init__(self, fe_space: FESpace, field: int):
        self.fe_space = fe_space
        self.field = field
        self.nodal_values = np.zeros(0)
        self.values: Optional[np.ndarray] = None
        self.gradients: Optional[np.ndarray] = None

    def update(self, fe_function: FEFunction, cell: int, integrator: Optional[CellIntegrator] = None):
        """``integrator`` must already be updated to ``cell``; by default it is fetched and updated here."""
        if integrator is None:
            cell_map = self.fe_space.cell_map(cell)
            cell_map.update(self.fe_space.triangulation.cell_coordinates(cell))
            integrator = self.fe_space.cell_integrator(cell, self.field)
            integrator.update(cell_map)
        self.nodal_values = gather_nodal_values(fe_function, cell, self.field)
        self.values = np.einsum('cap,a->cp', integrator.get_values(), self.nodal_values)
        self.gradients = np.einsum('cjap,a->cjp', integrator.get_gradients(), self.nodal_values)


class FacetFEFunction:
    """An FE function on both sides of a facet; minus-side data is aligned with the plus-side points."""

    def __init__(self, fe_space: FESpace, field: int):
        self.fe_space = fe_space
        self.field = field
        self.nodal_values: List[np.ndarray] = []
        self.values: List[np.ndarray] = []
        self.gradients: List[np.ndarray] = []

    def update(self, fe_function: FEFunction, facet: 'FEFacet'):
        integrator = facet.integrators[self.field]
        self.nodal_values = [gather_nodal_values(fe_function, c, self.field) for c in facet.cells]
        self.values = [np.einsum('cap,a->cp', integrator.get_values(side), values)
                       for side, values in enumerate(self.nodal_values)]
        self.gradients = [np.einsum('cjap,a->cjp', integrator.get_gradients(side), values)
                          for side, values in enumerate(self.nodal_values)]


# -- FE iterators ----------------------------------------------------------

@dataclass
class FECell:
    """Per-cell bundle: ids, blocks and integration data already updated to the cell."""

    fe_space: FESpace
    gid: int
    quadrature: Quadrature
    cell_map: CellMap
    integrators: List[CellIntegrator]
    dofs: List[np.ndarray]

    @property
    def set_id(self) -> int:
        return int(self.fe_space.triangulation.cells_set_ids[self.gid])

    @property
    def reference_fes(self) -> List[ReferenceFE]:
        return [self.fe_space.reference_fe(self.gid, f) for f in range(self.fe_space.num_fields)]

    @property
    def elem2dof(self) -> np.ndarray:
        return np.concatenate(self.dofs)

    @property
    def dof_blocks(self) -> np.ndarray:
        return self.fe_space.get_dof_blocks(self.gid)

    @property
    def measure(self) -> np.ndarray:
        return self.cell_map.measure

    @property
    def quadrature_points(self) -> np.ndarray:
        return self.cell_map.quad_points_phys


class FECellIterator:
    def __init__(self, fe_space: FESpace):
        if fe_space.cell_quadrature_degrees is None:
            fe_space.setup_cell_integration()
        self.fe_space = fe_space
        self.current = 0

    def __iter__(self) -> Iterator[FECell]:
        return self

    def __next__(self) -> FECell:
        space = self.fe_space
        if self.current >= space.triangulation.num_cells:
            raise StopIteration
        cell = self.current
        self.current += 1
        cell_map = space.cell_map(cell)
        cell_map.update(space.triangulation.cell_coordinates(cell))
        integrators = []
        for f in range(space.num_fields):
            integrator = space.cell_integrator(cell, f)
            integrator.update(cell_map)
            integrators.append(integrator)
        return FECell(space, cell, space.cell_quadrature(cell), cell_map, integrators,
                      [space.get_fe_dofs(cell, f) for f in range(space.num_fields)])


@dataclass
class FEFacet:
    """Per-facet bundle; side 0 is the plus cell, side 1 (interior facets only) the minus cell."""

    fe_space: FESpace
    info: FacetInfo
    permutation_index: int
    facet_maps: FacetMaps
    integrators: List[FacetIntegrator]
    dofs: List[List[np.ndarray]] = dataclass_field(default_factory=list)

    @property
    def gid(self) -> int:
        return self.info.gid

    @property
    def cells(self) -> Tuple[int, ...]:
        return self.info.cells

    @property
    def is_boundary(self) -> bool:
        return self.info.is_boundary

    @property
    def num_sides(self) -> int:
        return len(self.info.cells)

    @property
    def set_id(self) -> int:
        return int(self.fe_space.triangulation.vefs_set_ids[self.info.gid])

    def elem2dof(self, side: int) -> np.ndarray:
        return np.concatenate(self.dofs[side])

    def dof_blocks(self, side: int) -> np.ndarray:
        return self.fe_space.get_dof_blocks(self.info.cells[side])

    @property
    def measure(self) -> np.ndarray:
        return self.facet_maps.measure

    @property
    def characteristic_length(self) -> float:
        """|F|^(1/(d-1)); 1 for points."""
        area = float(self.measure.sum())
        dim = self.fe_space.triangulation.num_dims - 1
        return area ** (1.0 / dim) if dim > 0 else 1.0

    def normals(self, side: int = 0) -> np.ndarray:
        return self.facet_maps.get_normals(side)

    def quadrature_points(self, side: int = 0) -> np.ndarray:
        return self.facet_maps.get_quadrature_points_coordinates(side)


class FEFacetIterator:
    def __init__(self, fe_space: FESpace):
        if fe_space.facet_permutation_indices is None:
            fe_space.setup_facet_integration()
        self.fe_space = fe_space
        self.current = 0

    def __iter__(self) -> Iterator[FEFacet]:
        return self

    def __next__(self) -> FEFacet:
        space = self.fe_space
        if self.current >= len(space.facets):
            raise StopIteration
        index = self.current
        self.current += 1
        info = space.facets[index]
        permutation = int(space.facet_permutation_indices[index])
        facet_maps = space.facet_maps(index)
        facet_maps.update(info.lids, [space.triangulation.cell_coordinates(c) for c in info.cells], permutation)
        integrators = []
        for f in range(space.num_fields):
            integrator = space.facet_integrator(index, f)
            integrator.update()
            integrators.append(integrator)
        dofs = [[space.get_fe_dofs(c, f) for f in range(space.num_fields)] for c in info.cells]
        return FEFacet(space, info, permutation, facet_maps, integrators, dofs)
