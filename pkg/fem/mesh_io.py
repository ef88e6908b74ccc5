"""
Plain ASCII mesh files.

    dim <d>
    topology <bitstring, highest direction first>
    vertices <Nv>
    <x_0> ... <x_d-1>          (Nv lines)
    cells <Nc>
    <v_1> ... <v_m>            (Nc lines, 1-based vertex ids in polytope corner order)
    boundary_facets <Nb>       (optional)
    <set_id> <v_1> ... <v_k>   (Nb lines, unordered 1-based vertex ids)

Blank lines and anything after '#' are ignored. Coordinates are written with repr()
so an export / import cycle is bit-exact.
"""

import logging
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from .polytope import create_polytope, format_bits
from .triangulation import Triangulation

logger = logging.getLogger(__name__)


class MeshFormatError(ValueError):
    """Malformed mesh file; ``line`` is the 1-based line number (0 when unknown)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class _Lines:
    def __init__(self, text: str):
        self._lines: List[Tuple[int, List[str]]] = []
        for number, raw in enumerate(text.splitlines(), start=1):
            content = raw.split('#', 1)[0].split()
            if content:
                self._lines.append((number, content))
        self._cursor = 0

    @property
    def exhausted(self) -> bool:
        return self._cursor >= len(self._lines)

    @property
    def last_line(self) -> int:
        return self._lines[-1][0] if self._lines else 0

    def next(self, what: str) -> Tuple[int, List[str]]:
        if self.exhausted:
            raise MeshFormatError(f"unexpected end of file, expected {what}", self.last_line)
        entry = self._lines[self._cursor]
        self._cursor += 1
        return entry

    def header(self, keyword: str) -> Tuple[int, str]:
        number, tokens = self.next(f"'{keyword}'")
        if tokens[0] != keyword or len(tokens) != 2:
            raise MeshFormatError(f"expected '{keyword} <value>', got '{' '.join(tokens)}'", number)
        return number, tokens[1]

    def peek_keyword(self) -> str:
        return '' if self.exhausted else self._lines[self._cursor][1][0]


def _count(number: int, value: str) -> int:
    try:
        count = int(value)
    except ValueError:
        raise MeshFormatError(f"'{value}' is not an integer count", number) from None
    if count < 0:
        raise MeshFormatError(f"negative count {count}", number)
    return count


def _ids(number: int, tokens: List[str], num_vertices: int) -> List[int]:
    try:
        ids = [int(t) - 1 for t in tokens]
    except ValueError:
        raise MeshFormatError(f"vertex ids must be integers, got '{' '.join(tokens)}'", number) from None
    if any(i < 0 or i >= num_vertices for i in ids):
        raise MeshFormatError(f"vertex id out of range [1, {num_vertices}]", number)
    return ids


def parse_mesh(text: str) -> Triangulation:
    lines = _Lines(text)
    number, value = lines.header('dim')
    num_dims = _count(number, value)
    number, bits = lines.header('topology')
    try:
        polytope = create_polytope(num_dims, bits)
    except ValueError as exc:
        raise MeshFormatError(str(exc), number) from None

    number, value = lines.header('vertices')
    num_vertices = _count(number, value)
    coordinates = np.empty((num_dims, num_vertices))
    for v in range(num_vertices):
        number, tokens = lines.next('vertex coordinates')
        if len(tokens) != num_dims:
            raise MeshFormatError(f"expected {num_dims} coordinates, got {len(tokens)}", number)
        try:
            coordinates[:, v] = [float(t) for t in tokens]
        except ValueError:
            raise MeshFormatError(f"invalid coordinates '{' '.join(tokens)}'", number) from None

    number, value = lines.header('cells')
    num_cells = _count(number, value)
    if num_cells == 0:
        raise MeshFormatError("the mesh has no cells", number)
    cells = []
    for _ in range(num_cells):
        number, tokens = lines.next('cell vertex ids')
        if len(tokens) != polytope.num_vertices:
            raise MeshFormatError(f"a cell needs {polytope.num_vertices} vertex ids, got {len(tokens)}", number)
        cells.append(_ids(number, tokens, num_vertices))

    boundary_facets = []
    if lines.peek_keyword() == 'boundary_facets':
        number, value = lines.header('boundary_facets')
        for _ in range(_count(number, value)):
            number, tokens = lines.next('boundary facet')
            if len(tokens) < 2:
                raise MeshFormatError("a boundary facet needs a set id and its vertex ids", number)
            boundary_facets.append((_count(number, tokens[0]), _ids(number, tokens[1:], num_vertices)))
    if not lines.exhausted:
        number, tokens = lines.next('end of file')
        raise MeshFormatError(f"unexpected content '{' '.join(tokens)}'", number)

    return Triangulation(polytope, coordinates, np.array(cells, dtype=np.int64), boundary_facets=boundary_facets)


def import_mesh(path: Union[str, Path]) -> Triangulation:
    path = Path(path)
    triangulation = parse_mesh(path.read_text())
    logger.info("[MeshIO] Imported %s: %d cells, %d vertices", path, triangulation.num_cells, triangulation.num_vertices)
    return triangulation


def format_mesh(triangulation: Triangulation) -> str:
    d = triangulation.num_dims
    out = [f"dim {d}", f"topology {format_bits(triangulation.polytope.topology, d)}",
           f"vertices {triangulation.num_vertices}"]
    out.extend(' '.join(repr(float(x)) for x in triangulation.node_coordinates[:, v])
               for v in range(triangulation.num_vertices))
    out.append(f"cells {triangulation.num_cells}")
    out.extend(' '.join(str(int(v) + 1) for v in triangulation.cell_vertices[c]) for c in range(triangulation.num_cells))
    boundary = [f for f in triangulation.facets() if f.is_boundary]
    out.append(f"boundary_facets {len(boundary)}")
    for facet in boundary:
        vertices = ' '.join(str(v + 1) for v in triangulation.vef_keys[facet.gid])
        out.append(f"{int(triangulation.vefs_set_ids[facet.gid])} {vertices}")
    return '\n'.join(out) + '\n'


def export_mesh(triangulation: Triangulation, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_mesh(triangulation))
    logger.info("[MeshIO] Exported %d cells to %s", triangulation.num_cells, path)
