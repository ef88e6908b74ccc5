"""
Legacy ASCII VTK output.

Points are duplicated per cell so discontinuous fields keep their per-cell values.
Fields are sampled at the cell corners only, whatever their order.
"""

import logging
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from fem.fe_space import FEFunction, gather_nodal_values
from fem.integration import CellMap
from fem.reference_fe import apply_cell_map
from fem.triangulation import Triangulation

logger = logging.getLogger(__name__)

# (VTK cell type, corner permutation from lex order) per (dim, is_n_cube)
_VTK_CELLS = {
    (1, True): (3, [0, 1]),
    (2, True): (9, [0, 1, 3, 2]),
    (3, True): (12, [0, 1, 3, 2, 4, 5, 7, 6]),
    (2, False): (5, [0, 1, 2]),
    (3, False): (10, [0, 1, 2, 3]),
}

FieldOutput = Tuple[FEFunction, int]


def _corner_values(fe_function: FEFunction, field: int, triangulation: Triangulation) -> np.ndarray:
    """Field values at the corners of every cell, shape [n_cells, n_components, n_corners]."""
    space = fe_function.fe_space
    corners = triangulation.polytope.vertex_coordinates
    cell_map = CellMap(corners, triangulation.reference_fe_geo)
    ncomp = space.field_num_components[field]
    out = np.zeros((triangulation.num_cells, ncomp, corners.shape[1]))
    for cell in range(triangulation.num_cells):
        reference_fe = space.reference_fe(cell, field)
        if reference_fe.num_shape_functions == 0:
            continue
        cell_map.update(triangulation.cell_coordinates(cell))
        shapes = apply_cell_map(reference_fe, reference_fe.evaluate(corners), cell_map)
        out[cell] = np.einsum('cap,a->cp', shapes.values, gather_nodal_values(fe_function, cell, field))
    return out


def write_vtk(triangulation: Triangulation, fe_functions: Dict[str, FieldOutput], path: Union[str, Path],
              title: str = 'femkernel output'):
    """Write a legacy unstructured grid; ``fe_functions`` maps output names to (FE function, field id)."""
    polytope = triangulation.polytope
    key = (triangulation.num_dims, polytope.is_n_cube)
    if not (polytope.is_n_cube or polytope.is_simplex) or key not in _VTK_CELLS:
        raise ValueError(f"No VTK cell type for {polytope!r}")
    cell_type, order = _VTK_CELLS[key]
    num_corners = polytope.num_vertices
    num_cells = triangulation.num_cells
    num_points = num_cells * num_corners

    points = np.zeros((num_points, 3))
    for cell in range(num_cells):
        coords = triangulation.cell_coordinates(cell)
        points[cell * num_corners:(cell + 1) * num_corners, :triangulation.num_dims] = coords.T

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {num_points} double\n")
        for x, y, z in points.tolist():
            f.write(f"{x!r} {y!r} {z!r}\n")

        f.write(f"CELLS {num_cells} {num_cells * (num_corners + 1)}\n")
        for cell in range(num_cells):
            ids = ' '.join(str(cell * num_corners + i) for i in order)
            f.write(f"{num_corners} {ids}\n")
        f.write(f"CELL_TYPES {num_cells}\n")
        f.writelines(f"{cell_type}\n" for _ in range(num_cells))

        f.write(f"CELL_DATA {num_cells}\n")
        f.write("SCALARS set_id int 1\n")
        f.write("LOOKUP_TABLE default\n")
        f.writelines(f"{int(s)}\n" for s in triangulation.cells_set_ids)

        if fe_functions:
            f.write(f"POINT_DATA {num_points}\n")
        for name, (fe_function, field) in fe_functions.items():
            values = _corner_values(fe_function, field, triangulation)
            flat = values.transpose(0, 2, 1).reshape(num_points, -1)
            ncomp = flat.shape[1]
            if ncomp == 1:
                f.write(f"SCALARS {name} double 1\n")
                f.write("LOOKUP_TABLE default\n")
                f.writelines(f"{v!r}\n" for v in flat[:, 0].tolist())
            elif ncomp <= 3:
                f.write(f"VECTORS {name} double\n")
                padded = np.zeros((num_points, 3))
                padded[:, :ncomp] = flat
                f.writelines(f"{a!r} {b!r} {c!r}\n" for a, b, c in padded.tolist())
            else:
                for c in range(ncomp):
                    f.write(f"SCALARS {name}_{c} double 1\n")
                    f.write("LOOKUP_TABLE default\n")
                    f.writelines(f"{v!r}\n" for v in flat[:, c].tolist())

    logger.info("[VTK] Wrote %d cells, %d field(s) to %s", num_cells, len(fe_functions), path)
