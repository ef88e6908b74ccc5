"""
Static conforming triangulations.

A triangulation stores, once and for all, the cell -> vef composition and the
vef -> cells adjacency (``ptr_* / lst_*`` compressed arrays), the first-order
geometry nodes of every cell, boundary flags and user set ids. All cells share one
polytope. Vertices come first in the vef numbering (vef gid == vertex id); higher
dimensional vefs are numbered by first appearance in the cell loop.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .polytope import Polytope, apply_cube_symmetry, create_node_array, create_polytope, n_cube, simplex
from .reference_fe import ReferenceFE
from .integration import geometry_reference_fe

logger = logging.getLogger(__name__)

BOUNDARY_SET_ID = 1
INTERIOR_SET_ID = 0


@dataclass(frozen=True)
class FacetInfo:
    """A facet and the (cell, local facet id) pairs around it; plus side first."""

    gid: int
    cells: Tuple[int, ...]
    lids: Tuple[int, ...]

    @property
    def is_boundary(self) -> bool:
        return len(self.cells) == 1


def build_vefs(polytope: Polytope, cell_vertices: np.ndarray, num_vertices: int):
    """
    Derive global vefs from cell -> vertex connectivity.

    Returns (ptr_vefs_x_cell, lst_vefs_gids, vef_dims, vef_keys) where vef_keys holds
    the sorted vertex tuple of every vef.
    """
    num_cells, corners = cell_vertices.shape
    if corners != polytope.num_vertices:
        raise ValueError(f"Cells have {corners} vertices, {polytope!r} needs {polytope.num_vertices}")
    if num_cells == 0:
        raise ValueError("A triangulation needs at least one cell")
    if cell_vertices.min() < 0 or cell_vertices.max() >= num_vertices:
        raise ValueError(f"Vertex ids must lie in [0, {num_vertices})")

    num_local = polytope.num_n_faces - 1
    local_vertices = [polytope.n_face_vertices(lid) for lid in range(num_local)]
    key_to_gid: Dict[Tuple[int, ...], int] = {(v,): v for v in range(num_vertices)}
    vef_dims = [0] * num_vertices
    vef_keys: List[Tuple[int, ...]] = [(v,) for v in range(num_vertices)]
    lst = np.empty((num_cells, num_local), dtype=np.int64)

    for cell in range(num_cells):
        vertices = cell_vertices[cell]
        if len(set(vertices.tolist())) != corners:
            raise ValueError(f"Cell {cell} repeats a vertex: {vertices.tolist()}")
        for lid in range(num_local):
            key = tuple(sorted(int(vertices[v]) for v in local_vertices[lid]))
            gid = key_to_gid.get(key)
            if gid is None:
                gid = len(vef_keys)
                key_to_gid[key] = gid
                vef_keys.append(key)
                vef_dims.append(polytope.n_face_dim(lid))
            elif vef_dims[gid] != polytope.n_face_dim(lid):
                raise ValueError(f"Vertex tuple {key} is used by vefs of different dimensions")
            lst[cell, lid] = gid

    ptr = np.arange(num_cells + 1, dtype=np.int64) * num_local
    return ptr, lst.ravel(), np.array(vef_dims, dtype=np.int64), vef_keys


class Triangulation:
    """Conforming mesh of one cell topology with first-order geometry."""

    def __init__(self, polytope: Polytope, vertex_coordinates: np.ndarray, cell_vertices: np.ndarray,
                 cell_set_ids: Optional[Sequence[int]] = None,
                 boundary_facets: Optional[Sequence[Tuple[int, Sequence[int]]]] = None,
                 reorient: bool = True):
        self.polytope = polytope
        self.num_dims = polytope.num_dims
        self.node_coordinates = np.asarray(vertex_coordinates, dtype=float)
        if self.node_coordinates.ndim != 2 or self.node_coordinates.shape[0] != self.num_dims:
            raise ValueError(f"Vertex coordinates must have shape [{self.num_dims}, n_vertices]")
        self.num_vertices = self.node_coordinates.shape[1]
        self.cell_vertices = np.array(cell_vertices, dtype=np.int64).reshape(-1, polytope.num_vertices)
        self.num_cells = self.cell_vertices.shape[0]
        self.reference_fe_geo: ReferenceFE = geometry_reference_fe(polytope)

        if reorient and polytope.is_simplex:
            self.reorient_simplices()
        else:
            self._build_topology()

        if cell_set_ids is None:
            self.cells_set_ids = np.zeros(self.num_cells, dtype=np.int64)
        else:
            self.set_cell_set_ids(cell_set_ids)
        self.vefs_set_ids = np.where(self.vefs_at_boundary, BOUNDARY_SET_ID, INTERIOR_SET_ID).astype(np.int64)
        if boundary_facets:
            self.apply_boundary_facets(boundary_facets)

        logger.info("[Triangulation] %d cells, %d vertices, %d vefs (%d on the boundary) on %r",
                    self.num_cells, self.num_vertices, self.num_vefs, int(self.vefs_at_boundary.sum()), polytope)

    def _build_topology(self):
        (self.ptr_vefs_x_cell, self.lst_vefs_gids,
         self.vef_dims, self.vef_keys) = build_vefs(self.polytope, self.cell_vertices, self.num_vertices)
        self.num_vefs = len(self.vef_dims)
        self.ptr_nodes_x_cell = np.arange(self.num_cells + 1, dtype=np.int64) * self.polytope.num_vertices
        self.lst_node_gids = self.cell_vertices.ravel()

        counts = np.zeros(self.num_vefs + 1, dtype=np.int64)
        np.add.at(counts, self.lst_vefs_gids + 1, 1)
        self.ptr_cells_around = np.cumsum(counts)
        order = np.argsort(self.lst_vefs_gids, kind='stable')
        self.lst_cells_around = (order // (self.polytope.num_n_faces - 1)).astype(np.int64)

        facet_dim = self.num_dims - 1
        num_around = np.diff(self.ptr_cells_around)
        facets = self.vef_dims == facet_dim
        if np.any(num_around[facets] > 2):
            bad = int(np.flatnonzero(facets & (num_around > 2))[0])
            raise ValueError(f"Nonconforming connectivity: facet {bad} is shared by {num_around[bad]} cells")

        self.vefs_at_boundary = np.zeros(self.num_vefs, dtype=bool)
        for facet in np.flatnonzero(facets & (num_around == 1)):
            cell = int(self.lst_cells_around[self.ptr_cells_around[facet]])
            lid = self.vef_lid_in_cell(cell, int(facet))
            for sub in self.polytope.n_face_closure(lid):
                self.vefs_at_boundary[self.cell_vef_gids(cell)[sub]] = True

    def reorient_simplices(self):
        """Sort every simplex's vertices by global id so neighbours agree on shared n-faces."""
        if not self.polytope.is_simplex:
            logger.warning("[Triangulation] reorient_simplices called on %r; nothing done", self.polytope)
            return
        self.cell_vertices = np.sort(self.cell_vertices, axis=1)
        self._build_topology()

    def set_cell_set_ids(self, cell_set_ids):
        """Assign cell set ids from a sequence or from a callable of the cell barycenter."""
        if callable(cell_set_ids):
            ids = [cell_set_ids(self.cell_coordinates(c).mean(axis=1)) for c in range(self.num_cells)]
        else:
            ids = list(cell_set_ids)
        if len(ids) != self.num_cells:
            raise ValueError(f"Got {len(ids)} cell set ids for {self.num_cells} cells")
        self.cells_set_ids = np.array(ids, dtype=np.int64)

    def apply_boundary_facets(self, boundary_facets: Sequence[Tuple[int, Sequence[int]]]):
        """
        Set ids from (set_id, vertex tuple) boundary facets.

        Listed facets and their sub-vefs take the max id of the listed facets they lie
        on; unlisted boundary vefs keep the default boundary id.
        """
        key_to_gid = {key: gid for gid, key in enumerate(self.vef_keys) if self.vef_dims[gid] == self.num_dims - 1}
        listed = np.full(self.num_vefs, -1, dtype=np.int64)
        for set_id, vertices in boundary_facets:
            key = tuple(sorted(int(v) for v in vertices))
            facet = key_to_gid.get(key)
            if facet is None:
                raise ValueError(f"Vertices {list(vertices)} do not form a facet of the mesh")
            if not self.vefs_at_boundary[facet]:
                raise ValueError(f"Facet with vertices {list(vertices)} is not on the boundary")
            cell = self.cells_around(facet)[0]
            lid = self.vef_lid_in_cell(cell, facet)
            for sub in self.polytope.n_face_closure(lid):
                gid = self.cell_vef_gids(cell)[sub]
                listed[gid] = max(listed[gid], int(set_id))
        self.vefs_set_ids = np.where(listed >= 0, listed, self.vefs_set_ids)

    def set_vef_set_id(self, vef: int, set_id: int):
        if not 0 <= vef < self.num_vefs:
            raise ValueError(f"Vef {vef} out of range [0, {self.num_vefs})")
        self.vefs_set_ids[vef] = set_id

    # -- queries ---------------------------------------------------------

    def cell_vef_gids(self, cell: int) -> np.ndarray:
        return self.lst_vefs_gids[self.ptr_vefs_x_cell[cell]:self.ptr_vefs_x_cell[cell + 1]]

    def cells_around(self, vef: int) -> np.ndarray:
        return self.lst_cells_around[self.ptr_cells_around[vef]:self.ptr_cells_around[vef + 1]]

    def num_cells_around(self, vef: int) -> int:
        return int(self.ptr_cells_around[vef + 1] - self.ptr_cells_around[vef])

    def vef_lid_in_cell(self, cell: int, vef: int) -> int:
        matches = np.flatnonzero(self.cell_vef_gids(cell) == vef)
        if matches.size == 0:
            raise ValueError(f"Vef {vef} is not on cell {cell}")
        return int(matches[0])

    def cell_node_gids(self, cell: int) -> np.ndarray:
        return self.lst_node_gids[self.ptr_nodes_x_cell[cell]:self.ptr_nodes_x_cell[cell + 1]]

    def cell_coordinates(self, cell: int) -> np.ndarray:
        """Geometry node coordinates of a cell, shape [d, n_nodes]."""
        return self.node_coordinates[:, self.cell_node_gids(cell)]

    def facet_gids(self) -> np.ndarray:
        return np.flatnonzero(self.vef_dims == self.num_dims - 1)

    def facets(self) -> List[FacetInfo]:
        facets = []
        for gid in self.facet_gids():
            cells = tuple(int(c) for c in self.cells_around(gid))
            lids = tuple(self.vef_lid_in_cell(c, int(gid)) for c in cells)
            facets.append(FacetInfo(int(gid), cells, lids))
        return facets

    def get_permutation_index(self, cell_plus: int, cell_minus: int, lid_plus: int, lid_minus: int) -> int:
        """
        Symmetry index mapping the plus view of a shared n-face onto the minus view.

        With g the returned symmetry, the corner with label a on the plus side is the
        corner with label g(a) on the minus side. Identity is 0.
        """
        gid = int(self.cell_vef_gids(cell_plus)[lid_plus])
        if gid != int(self.cell_vef_gids(cell_minus)[lid_minus]):
            raise ValueError(f"Cells {cell_plus} and {cell_minus} do not share n-face ({lid_plus}, {lid_minus})")
        polytope = self.polytope
        if polytope.n_face_dim(lid_plus) == 0:
            return 0
        plus = self.cell_vertices[cell_plus][polytope.n_face_vertices(lid_plus)]
        minus = self.cell_vertices[cell_minus][polytope.n_face_vertices(lid_minus)]
        corners = create_node_array(polytope.n_face_polytope(lid_plus), 1)
        for p in range(polytope.num_n_face_symmetries(lid_plus)):
            if all(minus[corners.lex_to_index[apply_cube_symmetry(p, label, 1)]] == plus[j]
                   for j, label in enumerate(corners.node_coords_lex)):
                return p
        raise ValueError(f"Shared n-face of cells {cell_plus} and {cell_minus} is not consistently oriented")

    def cells(self) -> 'CellIterator':
        return CellIterator(self)

    def vefs(self) -> 'VefIterator':
        return VefIterator(self)


@dataclass(frozen=True)
class CellAccessor:
    triangulation: Triangulation
    gid: int

    @property
    def vef_gids(self) -> np.ndarray:
        return self.triangulation.cell_vef_gids(self.gid)

    @property
    def node_coordinates(self) -> np.ndarray:
        return self.triangulation.cell_coordinates(self.gid)

    @property
    def set_id(self) -> int:
        return int(self.triangulation.cells_set_ids[self.gid])

    @property
    def reference_fe_geo(self) -> ReferenceFE:
        return self.triangulation.reference_fe_geo


@dataclass(frozen=True)
class VefAccessor:
    triangulation: Triangulation
    gid: int

    @property
    def dim(self) -> int:
        return int(self.triangulation.vef_dims[self.gid])

    @property
    def is_at_boundary(self) -> bool:
        return bool(self.triangulation.vefs_at_boundary[self.gid])

    @property
    def set_id(self) -> int:
        return int(self.triangulation.vefs_set_ids[self.gid])

    @property
    def cells_around(self) -> np.ndarray:
        return self.triangulation.cells_around(self.gid)


class CellIterator:
    """Sequential traversal of cells in increasing id."""

    def __init__(self, triangulation: Triangulation):
        self.triangulation = triangulation
        self.current = 0

    def __iter__(self) -> Iterator[CellAccessor]:
        return self

    def __next__(self) -> CellAccessor:
        if self.current >= self.triangulation.num_cells:
            raise StopIteration
        accessor = CellAccessor(self.triangulation, self.current)
        self.current += 1
        return accessor


class VefIterator:
    """Sequential traversal of vefs in increasing id."""

    def __init__(self, triangulation: Triangulation):
        self.triangulation = triangulation
        self.current = 0

    def __iter__(self) -> Iterator[VefAccessor]:
        return self

    def __next__(self) -> VefAccessor:
        if self.current >= self.triangulation.num_vefs:
            raise StopIteration
        accessor = VefAccessor(self.triangulation, self.current)
        self.current += 1
        return accessor


BoxFace = Tuple[int, int]


def create_structured(num_dims: int, cells_per_dim: Sequence[int], domain_box: Optional[Sequence[Sequence[float]]] = None,
                      topology: str = 'n_cube', boundary_set_ids: Optional[Dict[BoxFace, int]] = None,
                      cell_set_ids=None) -> Triangulation:
    """
    Brick mesh of a box with lexicographic vertex and cell numbering.

    ``domain_box`` is ((lo_0, hi_0), ..., (lo_d-1, hi_d-1)), default the unit box.
    ``boundary_set_ids`` maps a box face (direction, 0 for lo | 1 for hi) to a set id;
    vefs on several box faces take the largest id. ``topology='simplex'`` splits every
    brick into d! simplices sharing the brick diagonal.
    """
    cells_per_dim = [int(n) for n in cells_per_dim]
    if len(cells_per_dim) != num_dims or any(n < 1 for n in cells_per_dim):
        raise ValueError(f"cells_per_dim must hold {num_dims} positive counts, got {cells_per_dim}")
    box = np.array(domain_box if domain_box is not None else [(0.0, 1.0)] * num_dims, dtype=float)
    if box.shape != (num_dims, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError(f"Degenerate domain box {box.tolist()}")

    points_per_dim = [n + 1 for n in cells_per_dim]
    strides = np.cumprod([1] + points_per_dim[:-1])
    axes = [np.linspace(box[i, 0], box[i, 1], points_per_dim[i]) for i in range(num_dims)]
    grid = itertools.product(*(range(n) for n in reversed(points_per_dim)))
    coordinates = np.array([[axes[i][idx[num_dims - 1 - i]] for i in range(num_dims)] for idx in grid]).T
    if topology == 'n_cube':
        polytope = n_cube(num_dims)
    elif topology == 'simplex':
        polytope = simplex(num_dims)
    else:
        polytope = create_polytope(num_dims, topology)
        if not polytope.is_n_cube:
            raise ValueError(f"Structured meshes support n-cubes and simplices, not {polytope!r}")
    corner_offsets = [tuple((v >> i) & 1 for i in range(num_dims)) for v in range(1 << num_dims)]

    cells = []
    for idx in itertools.product(*(range(n) for n in reversed(cells_per_dim))):
        origin = np.array(list(reversed(idx)))
        brick = [int(np.dot(origin + np.array(offset), strides)) for offset in corner_offsets]
        if polytope.is_n_cube:
            cells.append(brick)
        else:
            for perm in itertools.permutations(range(num_dims)):
                corner = 0
                simplex_vertices = [brick[corner]]
                for axis in perm:
                    corner |= 1 << axis
                    simplex_vertices.append(brick[corner])
                cells.append(simplex_vertices)

    triangulation = Triangulation(polytope, coordinates, np.array(cells), cell_set_ids=cell_set_ids)
    if boundary_set_ids:
        classify_box_faces(triangulation, box, boundary_set_ids)
    return triangulation


def classify_box_faces(triangulation: Triangulation, box: np.ndarray, boundary_set_ids: Dict[BoxFace, int]):
    """
    Boundary set ids from the box face each boundary facet lies on.

    Facets on unmapped box faces keep the default boundary id; lower dimensional vefs
    take the largest id of the facets around them, as for imported meshes.
    """
    scale = np.max(box[:, 1] - box[:, 0])
    listed = []
    for facet in triangulation.facets():
        if not facet.is_boundary:
            continue
        vertices = triangulation.vef_keys[facet.gid]
        points = triangulation.node_coordinates[:, list(vertices)]
        set_id = BOUNDARY_SET_ID
        for (direction, side), mapped in boundary_set_ids.items():
            if np.allclose(points[direction], box[direction, side], rtol=0, atol=1e-12 * scale):
                set_id = int(mapped)
        listed.append((set_id, vertices))
    triangulation.apply_boundary_facets(listed)
