import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from fem.fe_space import FEFunction, FESpace, evaluate_user_function, gather_nodal_values
from fem.integration import CellIntegrator, CellMap
from fem.quadrature import create_polytope_quadrature

logger = logging.getLogger(__name__)


def _field_order(fe_space: FESpace, field: int) -> int:
    return max(fe_space.reference_fe(c, field).order for c in range(fe_space.triangulation.num_cells))


def compute_error_norms(fe_space: FESpace, fe_function: FEFunction, exact: Callable, exact_gradient: Callable,
                        field: int = 0, degree: Optional[int] = None, mean_adjusted: bool = False) -> Tuple[float, float]:
    """
    L2 and H1-seminorm of u_h - u for one field, on a quadrature of degree 2k+2 by default.

    With ``mean_adjusted`` both functions are shifted to zero mean first, as for
    pressures defined up to a constant.
    """
    tri = fe_space.triangulation
    if degree is None:
        degree = 2 * _field_order(fe_space, field) + 2
    quadrature = create_polytope_quadrature(tri.polytope, degree)
    cell_map = CellMap.from_quadrature(quadrature, tri.reference_fe_geo)
    integrators: Dict[int, CellIntegrator] = {}
    ncomp = fe_space.field_num_components[field]
    num_dims = tri.num_dims

    samples = []
    for cell in range(tri.num_cells):
        reference_fe = fe_space.reference_fe(cell, field)
        integrator = integrators.get(reference_fe.uid)
        if integrator is None:
            integrator = integrators[reference_fe.uid] = CellIntegrator(quadrature, reference_fe)
        cell_map.update(tri.cell_coordinates(cell))
        integrator.update(cell_map)
        nodal = gather_nodal_values(fe_function, cell, field)
        uh = np.einsum('cap,a->cp', integrator.get_values(), nodal)
        grad_uh = np.einsum('cjap,a->cjp', integrator.get_gradients(), nodal)
        points = cell_map.quad_points_phys
        u = evaluate_user_function(exact, points, ncomp)
        grad_u = np.asarray(exact_gradient(points), dtype=float).reshape(ncomp, num_dims, -1)
        samples.append((cell_map.measure.copy(), uh, u, grad_uh, grad_u))

    shift = np.zeros((ncomp, 1))
    if mean_adjusted:
        volume = sum(w.sum() for w, *_ in samples)
        mean_h = sum((uh * w).sum(axis=1) for w, uh, *_ in samples) / volume
        mean = sum((u * w).sum(axis=1) for w, _, u, *_ in samples) / volume
        shift = (mean_h - mean)[:, None]

    l2 = sum(float(((uh - u - shift) ** 2 * w).sum()) for w, uh, u, _, _ in samples)
    h1 = sum(float(((grad_uh - grad_u) ** 2 * w).sum()) for w, _, _, grad_uh, grad_u in samples)
    return np.sqrt(l2), np.sqrt(h1)
