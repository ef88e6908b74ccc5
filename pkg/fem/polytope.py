"""
Extrusion-coded polytopes.

A polytope of dimension d is generated from a vertex by d directional extrusions.
Bit i of the topology ``t`` tells whether direction i is a prism-type (1) or a
pyramid-type (0) extrusion. Any n-face is coded by an extrusion bitmap ``e`` (the
directions it spans) and an anchor bitmap ``v`` (the vertex it hangs from), so the
whole family (segments, quadrilaterals, triangles, hexahedra, tetrahedra, prisms,
pyramids and their higher dimensional siblings) shares one code path.

Bit i of every bitmap is direction i. String forms are written with the highest
direction first: ``"110"`` has t(2) = t(1) = 1 and t(0) = 0. The first extrusion is
always a segment, so bit 0 of the topology carries no information and is stored as 1.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from scipy.linalg import null_space

logger = logging.getLogger(__name__)

Bits = Union[str, int, Sequence[int]]


def parse_bits(bits: Bits, num_dims: int) -> int:
    """Turn a bitstring (highest direction first), an int or a per-direction sequence into an int."""
    if isinstance(bits, str):
        text = bits.strip()
        if len(text) != num_dims or any(c not in '01' for c in text):
            raise ValueError(f"Bitstring '{bits}' is not a {num_dims}-digit binary string")
        return int(text, 2) if text else 0
    if isinstance(bits, (int, np.integer)):
        value = int(bits)
        if value < 0 or value >= (1 << num_dims):
            raise ValueError(f"Bitmap {value} does not fit in {num_dims} directions")
        return value
    seq = [int(b) for b in bits]
    if len(seq) != num_dims or any(b not in (0, 1) for b in seq):
        raise ValueError(f"Bit sequence {bits} is not a {num_dims}-long 0/1 sequence")
    return sum(b << i for i, b in enumerate(seq))


def format_bits(value: int, num_dims: int) -> str:
    return format(value, f'0{num_dims}b') if num_dims else ''


def directions_of(bitmap: int, num_dims: int) -> List[int]:
    return [i for i in range(num_dims) if (bitmap >> i) & 1]


def num_cube_symmetries(num_dims: int) -> int:
    """Rotations times orientations of an n-cube: 2^n * n!."""
    return (1 << num_dims) * math.factorial(num_dims)


@lru_cache(maxsize=None)
def _axis_permutations(num_dims: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(itertools.permutations(range(num_dims)))


def cube_symmetry(index: int, num_dims: int) -> Tuple[int, Tuple[int, ...]]:
    """
    Split a permutation index into (rotation, axis permutation).

    The rotation is the flip mask that sends the anchor vertex to the origin; the
    orientation is the position of the axis permutation in lexicographic order.
    Indices are rotation-major and index 0 is the identity.
    """
    total = num_cube_symmetries(num_dims)
    if not 0 <= index < total:
        raise ValueError(f"Permutation index {index} out of range for a {num_dims}-cube ({total} symmetries)")
    perms = _axis_permutations(num_dims)
    rotation, orientation = divmod(index, len(perms))
    return rotation, perms[orientation]


def apply_cube_symmetry(index: int, label: Sequence, extent) -> Tuple:
    """
    Image of a point of the reference n-cube [0, extent]^n under symmetry ``index``.

    Works on integer node labels (extent = order) and on real coordinates (extent = 1).
    """
    num_dims = len(label)
    rotation, perm = cube_symmetry(index, num_dims)
    image = [label[perm[i]] for i in range(num_dims)]
    for i in range(num_dims):
        if (rotation >> i) & 1:
            image[i] = extent - image[i]
    return tuple(image)


@dataclass(frozen=True)
class NFace:
    """An n-face of a polytope: extrusion bitmap ``e`` plus anchor bitmap ``v``."""

    extrusion: int
    anchor: int
    num_dims: int

    @property
    def dim(self) -> int:
        return self.extrusion.bit_count()

    @property
    def code(self) -> int:
        return (self.extrusion << self.num_dims) | self.anchor

    @property
    def directions(self) -> List[int]:
        return directions_of(self.extrusion, self.num_dims)

    def extrude(self, direction: int) -> 'NFace':
        return NFace(self.extrusion | (1 << direction), self.anchor, self.num_dims)

    def shift(self, direction: int) -> 'NFace':
        return NFace(self.extrusion, self.anchor | (1 << direction), self.num_dims)

    def __str__(self):
        return f"({format_bits(self.extrusion, self.num_dims)}|{format_bits(self.anchor, self.num_dims)})"


class Polytope:
    """
    Cell geometry generated by directional extrusions.

    n-faces are sorted by dimension, then by their (e, v) code, so the vertices come
    first and the polytope itself is the last entry.
    """

    def __init__(self, num_dims: int, topology: int):
        self.num_dims = num_dims
        self.topology = topology | 1
        faces = self._extrude_all()
        faces.sort(key=lambda f: (f.dim, f.code))
        self.n_faces: Tuple[NFace, ...] = tuple(faces)
        self.code_to_index: Dict[int, int] = {f.code: i for i, f in enumerate(self.n_faces)}

        ptr = np.zeros(num_dims + 2, dtype=np.int64)
        for face in self.n_faces:
            ptr[face.dim + 1] += 1
        self.ptr_n_faces_x_dim = np.cumsum(ptr)

    def __repr__(self):
        return f"Polytope(num_dims={self.num_dims}, topology='{self.topology_string}')"

    @property
    def topology_string(self) -> str:
        return format_bits(self.topology, self.num_dims)

    @property
    def is_n_cube(self) -> bool:
        return self.topology == (1 << self.num_dims) - 1

    @property
    def is_simplex(self) -> bool:
        return (self.topology >> 1) == 0

    def is_pyramid_direction(self, direction: int) -> bool:
        return not (self.topology >> direction) & 1

    @property
    def num_n_faces(self) -> int:
        return len(self.n_faces)

    def num_n_faces_of_dim(self, dim: int) -> int:
        return int(self.ptr_n_faces_x_dim[dim + 1] - self.ptr_n_faces_x_dim[dim])

    def n_faces_of_dim(self, dim: int) -> range:
        return range(int(self.ptr_n_faces_x_dim[dim]), int(self.ptr_n_faces_x_dim[dim + 1]))

    @property
    def num_vertices(self) -> int:
        return self.num_n_faces_of_dim(0)

    @property
    def num_facets(self) -> int:
        return self.num_n_faces_of_dim(self.num_dims - 1)

    @property
    def cell_index(self) -> int:
        return self.num_n_faces - 1

    def n_face_dim(self, index: int) -> int:
        return self.n_faces[index].dim

    def index_of(self, n_face: NFace) -> int:
        try:
            return self.code_to_index[n_face.code]
        except KeyError:
            raise ValueError(f"{n_face} is not an n-face of {self!r}") from None

    def _extrude_all(self) -> List[NFace]:
        d = self.num_dims
        faces = {NFace(0, 0, d)}
        for i in range(d):
            extruded = set(faces)
            if self.is_pyramid_direction(i):
                extruded.add(NFace(0, 1 << i, d))
                extruded.update(f.extrude(i) for f in faces)
            else:
                extruded.update(f.shift(i) for f in faces)
                extruded.update(f.extrude(i) for f in faces)
            faces = extruded
        return list(faces)

    def n_face_belongs(self, extrusion: int, anchor: int) -> bool:
        """Membership oracle on the raw codes, independent of the extrusion recursion."""
        if extrusion & anchor:
            return False
        for i in range(1, self.num_dims):
            if self.is_pyramid_direction(i) and (anchor >> i) & 1:
                if (extrusion | anchor) & ((1 << i) - 1):
                    return False
        return True

    def _apex(self, direction: int, anchor: int) -> int:
        # The apex of a pyramid extrusion keeps the anchor bits of later directions.
        return (1 << direction) | ((anchor >> (direction + 1)) << (direction + 1))

    def facets_of(self, n_face: Union[NFace, int]) -> List[NFace]:
        """Facets of an n-face, walking its extrusion chain one direction at a time."""
        if isinstance(n_face, (int, np.integer)):
            n_face = self.n_faces[n_face]
        self.index_of(n_face)
        if n_face.dim == 0:
            raise ValueError(f"Vertex {n_face} has no facets")

        d = self.num_dims
        directions = n_face.directions
        first = directions[0]
        current = NFace(1 << first, n_face.anchor, d)
        if self.is_pyramid_direction(first):
            other = NFace(0, self._apex(first, n_face.anchor), d)
        else:
            other = NFace(0, n_face.anchor | (1 << first), d)
        boundary = [NFace(0, n_face.anchor, d), other]

        for i in directions[1:]:
            extruded = [f.extrude(i) for f in boundary]
            if self.is_pyramid_direction(i):
                boundary = [current] + extruded
            else:
                boundary = [current, current.shift(i)] + extruded
            current = current.extrude(i)
        return boundary

    def facet_ids_of(self, index: int) -> List[int]:
        return [self.index_of(f) for f in self.facets_of(index)]

    def n_face_topology(self, n_face: NFace) -> int:
        topology = 1
        for s, i in enumerate(n_face.directions):
            if s > 0 and not self.is_pyramid_direction(i):
                topology |= 1 << s
        return topology

    def n_face_polytope(self, n_face: Union[NFace, int]) -> 'Polytope':
        if isinstance(n_face, (int, np.integer)):
            n_face = self.n_faces[n_face]
        if n_face.dim == 0:
            raise ValueError("Vertices have no reference polytope")
        return _build_polytope(n_face.dim, self.n_face_topology(n_face))

    def n_face_is_cube(self, n_face: Union[NFace, int]) -> bool:
        if isinstance(n_face, (int, np.integer)):
            n_face = self.n_faces[n_face]
        if n_face.dim == 0:
            return True
        return self.n_face_topology(n_face) == (1 << n_face.dim) - 1

    def num_n_face_symmetries(self, n_face: Union[NFace, int]) -> int:
        """Number of permutation indices of an n-face (identity only for non-cube faces)."""
        if isinstance(n_face, (int, np.integer)):
            n_face = self.n_faces[n_face]
        if self.n_face_is_cube(n_face):
            return num_cube_symmetries(n_face.dim)
        return 1

    def n_face_map(self, n_face: Union[NFace, int]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Linear map of the n-face reference polytope into the base polytope.

        Returns (offset, matrix) such that a point y of the n-face goes to offset + matrix @ y.
        With order k, integer labels map as k * offset + matrix @ label.
        """
        if isinstance(n_face, (int, np.integer)):
            n_face = self.n_faces[n_face]
        d = self.num_dims
        offset = np.array([(n_face.anchor >> i) & 1 for i in range(d)], dtype=np.int64)
        matrix = np.zeros((d, n_face.dim), dtype=np.int64)
        for s, j in enumerate(n_face.directions):
            matrix[j, s] = 1
            if self.is_pyramid_direction(j):
                for i in range(j):
                    if offset[i]:
                        matrix[i, s] = -1
        return offset, matrix

    @cached_property
    def vertex_coordinates(self) -> np.ndarray:
        """Reference vertex coordinates, shape [d, num_vertices]."""
        coords = np.zeros((self.num_dims, self.num_vertices))
        for index in self.n_faces_of_dim(0):
            anchor = self.n_faces[index].anchor
            coords[:, index] = [(anchor >> i) & 1 for i in range(self.num_dims)]
        return coords

    @cached_property
    def barycenter(self) -> np.ndarray:
        return self.vertex_coordinates.mean(axis=1)

    @cached_property
    def measure(self) -> float:
        """Volume of the reference polytope."""
        if self.is_n_cube:
            return 1.0
        if self.is_simplex:
            return 1.0 / math.factorial(self.num_dims)
        # Prism directions multiply the measure; pyramid directions divide by the new dim.
        value = 1.0
        for i in range(1, self.num_dims):
            if self.is_pyramid_direction(i):
                value /= i + 1
        return value

    def n_face_vertices(self, n_face: Union[NFace, int]) -> List[int]:
        """Vertex n-face ids of an n-face, in the n-face's own corner order."""
        if isinstance(n_face, (int, np.integer)):
            n_face = self.n_faces[n_face]
        if n_face.dim == 0:
            return [self.index_of(n_face)]
        offset, matrix = self.n_face_map(n_face)
        corners = create_node_array(self.n_face_polytope(n_face), 1)
        vertices = []
        for label in corners.node_coords_lex:
            image = offset + matrix @ np.asarray(label, dtype=np.int64)
            anchor = sum(int(b) << i for i, b in enumerate(image))
            vertices.append(self.code_to_index[anchor])
        return vertices

    @cached_property
    def n_face_vertex_sets(self) -> Tuple[frozenset, ...]:
        return tuple(frozenset(self.n_face_vertices(i)) for i in range(self.num_n_faces))

    def n_face_closure(self, index: int) -> List[int]:
        """Every n-face lying on the closure of n-face ``index``, itself included."""
        vertices = self.n_face_vertex_sets[index]
        return [i for i, other in enumerate(self.n_face_vertex_sets) if other <= vertices]

    def facet_normal(self, facet_index: int) -> np.ndarray:
        """Outward unit normal of a facet of the reference polytope."""
        n_face = self.n_faces[facet_index]
        if n_face.dim != self.num_dims - 1:
            raise ValueError(f"n-face {facet_index} is not a facet")
        _, matrix = self.n_face_map(n_face)
        normal = null_space(matrix.T.astype(float))[:, 0]
        facet_center = self.vertex_coordinates[:, self.n_face_vertices(n_face)].mean(axis=1)
        if np.dot(normal, facet_center - self.barycenter) < 0:
            normal = -normal
        return normal / np.linalg.norm(normal)


@lru_cache(maxsize=None)
def _build_polytope(num_dims: int, topology: int) -> Polytope:
    polytope = Polytope(num_dims, topology)
    logger.debug("[Polytope] Built %r with %d n-faces", polytope, polytope.num_n_faces)
    return polytope


def create_polytope(num_dims: int, topology: Bits) -> Polytope:
    """Cached polytope factory; accepts any spelling of the topology bits."""
    max_dims = getattr(settings, 'FEM_MAX_DIMS', 3)
    if not 1 <= num_dims <= max_dims:
        raise ValueError(f"Polytope dimension {num_dims} outside the supported range [1, {max_dims}]")
    return _build_polytope(num_dims, parse_bits(topology, num_dims) | 1)


def n_cube(num_dims: int) -> Polytope:
    return create_polytope(num_dims, (1 << num_dims) - 1)


def simplex(num_dims: int) -> Polytope:
    return create_polytope(num_dims, 1)


def normalize_order(polytope: Polytope, order) -> Tuple[int, ...]:
    if isinstance(order, (int, np.integer)):
        orders = (int(order),) * polytope.num_dims
    else:
        orders = tuple(int(k) for k in order)
    if len(orders) != polytope.num_dims:
        raise ValueError(f"Order {order} does not have {polytope.num_dims} components")
    if any(k < 0 for k in orders):
        raise ValueError(f"Negative order in {order}")
    if not polytope.is_n_cube and len(set(orders)) > 1:
        raise ValueError(f"Mixed orders {orders} are only allowed on n-cubes, not on {polytope!r}")
    return orders


def _lex_key(label: Tuple[int, ...]):
    # x varies fastest
    return tuple(reversed(label))


class NodeArray:
    """
    Equidistant Lagrangian nodes of a polytope.

    ``node_coords_lex`` holds integer labels alpha; the reference coordinate of a node
    is alpha / k, computed once into ``ref_coords`` with shape [d, num_nodes].
    """

    def __init__(self, polytope: Polytope, order):
        self.polytope = polytope
        self.order = normalize_order(polytope, order)
        labels = sorted(self._generate_labels(), key=_lex_key)
        self.node_coords_lex: List[Tuple[int, ...]] = labels
        self.lex_to_index: Dict[Tuple[int, ...], int] = {label: i for i, label in enumerate(labels)}
        self.ref_coords = self._reference_coordinates()

    def __repr__(self):
        return f"NodeArray({self.polytope!r}, order={self.order})"

    @property
    def num_nodes(self) -> int:
        return len(self.node_coords_lex)

    def _generate_labels(self) -> List[Tuple[int, ...]]:
        polytope = self.polytope
        d = polytope.num_dims
        if polytope.is_n_cube:
            return [tuple(reversed(t)) for t in itertools.product(*(range(k + 1) for k in reversed(self.order)))]

        labels = []
        alpha = [0] * d

        def fill(direction: int, budget: int):
            if direction < 0:
                labels.append(tuple(alpha))
                return
            for a in range(budget + 1):
                alpha[direction] = a
                fill(direction - 1, budget - a if polytope.is_pyramid_direction(direction) else budget)

        fill(d - 1, self.order[0])
        return labels

    def _reference_coordinates(self) -> np.ndarray:
        labels = np.array(self.node_coords_lex, dtype=float).reshape(self.num_nodes, self.polytope.num_dims)
        coords = np.empty_like(labels)
        for i, k in enumerate(self.order):
            if k > 0:
                coords[:, i] = labels[:, i] / k
            elif self.polytope.is_n_cube:
                coords[:, i] = 0.5
            else:
                coords[:, i] = self.polytope.barycenter[i]
        return coords.T.copy()

    def index(self, label: Sequence[int]) -> int:
        try:
            return self.lex_to_index[tuple(int(a) for a in label)]
        except KeyError:
            raise ValueError(f"Label {tuple(label)} is not a node of {self!r}") from None

    def n_face_order(self, n_face: NFace) -> Tuple[int, ...]:
        return tuple(self.order[i] for i in n_face.directions)

    def n_face_node_array(self, n_face: Union[NFace, int]) -> 'NodeArray':
        if isinstance(n_face, (int, np.integer)):
            n_face = self.polytope.n_faces[n_face]
        if n_face.dim == 0:
            return _VERTEX_NODES
        return create_node_array(self.polytope.n_face_polytope(n_face), self.n_face_order(n_face))

    def map_n_face_node(self, n_face: Union[NFace, int], node_in_nface: Sequence[int]) -> Tuple[int, ...]:
        """Base-polytope label of a node given by its label inside the n-face."""
        if isinstance(n_face, (int, np.integer)):
            n_face = self.polytope.n_faces[n_face]
        local = self.n_face_node_array(n_face)
        local.index(node_in_nface)
        offset, matrix = self.polytope.n_face_map(n_face)
        image = np.asarray(self.order, dtype=np.int64) * offset
        if n_face.dim:
            image = image + matrix @ np.asarray(node_in_nface, dtype=np.int64)
        label = tuple(int(a) for a in image)
        if label not in self.lex_to_index:
            raise ValueError(f"Node {tuple(node_in_nface)} of {n_face} maps outside {self!r}")
        return label

    def _require_positive_order(self):
        if min(self.order) < 1:
            raise ValueError(f"n-face node sets need order >= 1, got {self.order}")

    @lru_cache(maxsize=None)
    def n_face_closed_nodes(self, index: int) -> Tuple[int, ...]:
        """Base node ids on the closure of an n-face, in the n-face's own lex order."""
        self._require_positive_order()
        n_face = self.polytope.n_faces[index]
        local = self.n_face_node_array(n_face)
        return tuple(self.lex_to_index[self.map_n_face_node(n_face, label)] for label in local.node_coords_lex)

    @lru_cache(maxsize=None)
    def n_face_open_nodes(self, index: int) -> Tuple[int, ...]:
        """Base node ids in the interior of an n-face, in the n-face's own lex order."""
        closed = self.n_face_closed_nodes(index)
        if self.polytope.n_faces[index].dim == 0:
            return closed
        on_boundary = set()
        for facet in self.polytope.facet_ids_of(index):
            on_boundary.update(self.n_face_closed_nodes(facet))
        return tuple(node for node in closed if node not in on_boundary)

    @lru_cache(maxsize=None)
    def n_face_open_labels(self, index: int) -> Tuple[Tuple[int, ...], ...]:
        """n-face local labels of the open nodes, aligned with ``n_face_open_nodes``."""
        closed = self.n_face_closed_nodes(index)
        local = self.n_face_node_array(index).node_coords_lex
        open_nodes = set(self.n_face_open_nodes(index))
        return tuple(label for label, node in zip(local, closed) if node in open_nodes)

    def iterate(self, n_face: Union[NFace, int], own_boundary: bool = True) -> 'NodeIterator':
        return NodeIterator(self, n_face, own_boundary)


class NodeIterator:
    """Walks the nodes of an n-face, yielding base node ids (closed or open set)."""

    def __init__(self, node_array: NodeArray, n_face: Union[NFace, int], own_boundary: bool = True):
        polytope = node_array.polytope
        self.node_array = node_array
        self.n_face_index = n_face if isinstance(n_face, (int, np.integer)) else polytope.index_of(n_face)
        self.n_face = polytope.n_faces[self.n_face_index]
        self.own_boundary = own_boundary
        if own_boundary:
            self._nodes = node_array.n_face_closed_nodes(self.n_face_index)
        else:
            self._nodes = node_array.n_face_open_nodes(self.n_face_index)
        self._cursor = 0

    def __iter__(self) -> Iterator[int]:
        return self

    def __next__(self) -> int:
        if self._cursor >= len(self._nodes):
            raise StopIteration
        node = self._nodes[self._cursor]
        self._cursor += 1
        return node

    def __len__(self):
        return len(self._nodes)


class _VertexNodes:
    """Node set of a 0-dimensional n-face: a single empty label."""

    order = ()
    node_coords_lex = [()]
    lex_to_index = {(): 0}
    num_nodes = 1

    def index(self, label):
        if tuple(label) != ():
            raise ValueError(f"Label {tuple(label)} is not a vertex node")
        return 0


_VERTEX_NODES = _VertexNodes()


@lru_cache(maxsize=None)
def _cached_node_array(polytope: Polytope, order: Tuple[int, ...]) -> NodeArray:
    return NodeArray(polytope, order)


def create_node_array(polytope: Polytope, order) -> NodeArray:
    return _cached_node_array(polytope, normalize_order(polytope, order))


def nface_node_map(polytope: Polytope, n_face: Union[NFace, int], order, node_in_nface: Sequence[int]) -> Tuple[int, ...]:
    return create_node_array(polytope, order).map_n_face_node(n_face, node_in_nface)
