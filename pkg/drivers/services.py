"""
End-to-end runs shared by the management commands and the tests.

Each runner builds the FE space on a given triangulation, sets up the affine
operator of its discrete integration, solves, and measures the error against the
manufactured solution.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from django.db import models

from fem.fe_space import (BlockLayout, Conditions, FEFunction, FESpace, FieldSpec, create_fe_space,
                          project_dirichlet)
from fem.linalg import AffineOperator, MatrixSign, SolverMethod
from fem.mesh_io import import_mesh
from fem.reference_fe import FEType, FieldType
from fem.triangulation import INTERIOR_SET_ID, Triangulation, create_structured

from .integrations import PoissonCGIntegration, PoissonDGIntegration, StokesIntegration
from .manufactured import PoissonCase, StokesCase, poisson_case, stokes_case
from .norms import compute_error_norms

logger = logging.getLogger(__name__)


class Driver(models.TextChoices):
    POISSON_CG = 'poisson-cg', 'Poisson, continuous Galerkin'
    POISSON_DG = 'poisson-dg', 'Poisson, interior penalty DG'
    STOKES = 'stokes', 'Stokes, Taylor-Hood'


@dataclass
class RunResult:
    driver: str
    order: int
    num_cells: int
    h: float
    num_free_dofs: int
    num_fixed_dofs: int
    l2_error: float
    h1_error: float
    pressure_l2_error: Optional[float] = None
    residual: float = 0.0
    wall_time: float = 0.0
    fe_space: Optional[FESpace] = field(default=None, repr=False)
    fe_function: Optional[FEFunction] = field(default=None, repr=False)
    operator: Optional[AffineOperator] = field(default=None, repr=False)

    def summary(self) -> str:
        text = (f"{self.driver} k={self.order}: {self.num_cells} cells, {self.num_free_dofs} free DOFs, "
                f"L2={self.l2_error:.4e}, H1={self.h1_error:.4e}")
        if self.pressure_l2_error is not None:
            text += f", p L2={self.pressure_l2_error:.4e}"
        return text + f", residual={self.residual:.2e}, {self.wall_time:.2f}s"


def parse_cells(text: str, num_dims: int) -> List[int]:
    """'4' or '4,2[,2]' -> cells per direction."""
    try:
        cells = [int(v) for v in str(text).split(',') if v.strip()]
    except ValueError:
        raise ValueError(f"Invalid cell counts '{text}'") from None
    if len(cells) == 1:
        cells = cells * num_dims
    if len(cells) != num_dims or any(n < 1 for n in cells):
        raise ValueError(f"Expected {num_dims} positive cell counts, got '{text}'")
    return cells


def build_triangulation(num_dims: int = 2, cells: Union[str, Sequence[int]] = '4', topology: str = 'n_cube',
                        mesh: Optional[Union[str, Path]] = None) -> Triangulation:
    if mesh:
        return import_mesh(mesh)
    if isinstance(cells, str):
        cells = parse_cells(cells, num_dims)
    return create_structured(num_dims, cells, topology=topology)


def mesh_size(triangulation: Triangulation) -> float:
    return max(float(np.linalg.norm(np.ptp(triangulation.cell_coordinates(c), axis=1)))
               for c in range(triangulation.num_cells))


def boundary_set_ids(triangulation: Triangulation) -> List[int]:
    ids = np.unique(triangulation.vefs_set_ids[triangulation.vefs_at_boundary])
    return [int(i) for i in ids if i != INTERIOR_SET_ID]


def _finish(driver: str, order: int, triangulation: Triangulation, space: FESpace, operator: AffineOperator,
            solution: FEFunction, x: np.ndarray, errors, started: float, pressure_error=None) -> RunResult:
    result = RunResult(driver=driver, order=order, num_cells=triangulation.num_cells, h=mesh_size(triangulation),
                       num_free_dofs=space.num_free_dofs, num_fixed_dofs=space.num_fixed_dofs,
                       l2_error=float(errors[0]), h1_error=float(errors[1]), pressure_l2_error=pressure_error,
                       residual=float(operator.residual_norm(x)), wall_time=time.perf_counter() - started,
                       fe_space=space, fe_function=solution, operator=operator)
    logger.info("[Run] %s", result.summary())
    return result


def run_poisson_cg(triangulation: Triangulation, order: int = 1, case: str = PoissonCase.SINE,
                   method: str = SolverMethod.CG_JACOBI) -> RunResult:
    started = time.perf_counter()
    manufactured = poisson_case(case, triangulation.num_dims)
    conditions = Conditions(1)
    for set_id in boundary_set_ids(triangulation):
        conditions.add(set_id, [True], [manufactured.dirichlet_component(0)])
    space = create_fe_space(triangulation, [FieldSpec(FEType.LAGRANGIAN, order)], conditions)
    space.generate_global_dof_numbering()

    dirichlet = FEFunction(space)
    project_dirichlet(space, dirichlet)
    integration = PoissonCGIntegration(manufactured.forcing, dirichlet_function=dirichlet)
    operator = AffineOperator(space, integration, symmetric=True, sign=MatrixSign.POSITIVE_DEFINITE)
    operator.numerical_setup()
    x = operator.solve(method)

    solution = dirichlet.copy()
    solution.free_dof_values.assign_flat(x)
    errors = compute_error_norms(space, solution, manufactured.solution, manufactured.gradient)
    return _finish(Driver.POISSON_CG, order, triangulation, space, operator, solution, x, errors, started)


def run_poisson_dg(triangulation: Triangulation, order: int = 1, case: str = PoissonCase.SINE, tau: float = 1.0,
                   penalty: Optional[float] = None, method: Optional[str] = None) -> RunResult:
    started = time.perf_counter()
    manufactured = poisson_case(case, triangulation.num_dims)
    space = create_fe_space(triangulation, [FieldSpec(FEType.LAGRANGIAN, order, conformity=False)])
    space.generate_global_dof_numbering()

    integration = PoissonDGIntegration(manufactured.forcing, manufactured.dirichlet_component(0), tau, penalty)
    symmetric = tau == 1.0
    operator = AffineOperator(space, integration, symmetric=symmetric,
                              sign=MatrixSign.POSITIVE_DEFINITE if symmetric else MatrixSign.INDEFINITE)
    operator.numerical_setup()
    if method is None:
        method = SolverMethod.CG_JACOBI if symmetric else SolverMethod.DENSE_LU
    x = operator.solve(method)

    solution = FEFunction(space)
    solution.free_dof_values.assign_flat(x)
    errors = compute_error_norms(space, solution, manufactured.solution, manufactured.gradient)
    return _finish(Driver.POISSON_DG, order, triangulation, space, operator, solution, x, errors, started)


def run_stokes(triangulation: Triangulation, order: int = 1, case: str = StokesCase.TRIGONOMETRIC,
               viscosity: float = 1.0, blocks: bool = False) -> RunResult:
    """
    Taylor-Hood Q_(k+1)/Q_k with velocity Dirichlet data on the whole boundary.

    One boundary vertex gets its own set id for the run so its pressure DOF can be
    pinned to zero; the triangulation gets its old id back afterwards. Pressure
    errors are measured up to the mean.
    """
    started = time.perf_counter()
    manufactured = stokes_case(case, triangulation.num_dims, viscosity)

    boundary = boundary_set_ids(triangulation)
    pin_set_id = max(boundary) + 1
    pin_vertex = int(np.flatnonzero(triangulation.vefs_at_boundary[:triangulation.num_vertices])[0])
    old_set_id = int(triangulation.vefs_set_ids[pin_vertex])
    triangulation.set_vef_set_id(pin_vertex, pin_set_id)
    try:
        return _solve_stokes(triangulation, order, manufactured, viscosity, blocks, boundary, pin_set_id, started)
    finally:
        triangulation.set_vef_set_id(pin_vertex, old_set_id)


def _solve_stokes(triangulation: Triangulation, order: int, manufactured, viscosity: float, blocks: bool,
                  boundary: Sequence[int], pin_set_id: int, started: float) -> RunResult:
    num_dims = triangulation.num_dims
    velocity = [manufactured.dirichlet_component(c) for c in range(num_dims)]
    conditions = Conditions(num_dims + 1)
    for set_id in boundary:
        conditions.add(set_id, [True] * num_dims + [False], velocity + [None])
    conditions.add(pin_set_id, [True] * (num_dims + 1), velocity + [lambda x: np.zeros(x.shape[1])])

    fields = [FieldSpec(FEType.LAGRANGIAN, order + 1, FieldType.VECTOR), FieldSpec(FEType.LAGRANGIAN, order)]
    space = create_fe_space(triangulation, fields, conditions)
    coupling = np.array([[True, True], [True, False]])
    layout = BlockLayout.one_block_per_field(2, coupling) if blocks else BlockLayout.monolithic(2, coupling)
    space.generate_global_dof_numbering(layout)

    dirichlet = FEFunction(space)
    project_dirichlet(space, dirichlet)
    integration = StokesIntegration(manufactured.forcing, viscosity, dirichlet_function=dirichlet)
    operator = AffineOperator(space, integration, symmetric=True, sign=MatrixSign.INDEFINITE)
    operator.numerical_setup()
    x = operator.solve(SolverMethod.DENSE_LU)

    solution = dirichlet.copy()
    solution.free_dof_values.assign_flat(x)
    errors = compute_error_norms(space, solution, manufactured.solution, manufactured.gradient, field=0)
    pressure_error, _ = compute_error_norms(space, solution, manufactured.pressure, manufactured.pressure_gradient,
                                            field=1, mean_adjusted=True)
    return _finish(Driver.STOKES, order, triangulation, space, operator, solution, x, errors, started,
                   pressure_error=float(pressure_error))


def run_driver(driver: str, triangulation: Triangulation, order: int = 1, case: Optional[str] = None,
               **options) -> RunResult:
    if driver == Driver.POISSON_CG:
        return run_poisson_cg(triangulation, order, case or PoissonCase.SINE, **options)
    if driver == Driver.POISSON_DG:
        return run_poisson_dg(triangulation, order, case or PoissonCase.SINE, **options)
    if driver == Driver.STOKES:
        return run_stokes(triangulation, order, case or StokesCase.TRIGONOMETRIC, **options)
    raise ValueError(f"Unknown driver '{driver}', choose from {list(Driver.values)}")


def observed_orders(errors: Sequence[float]) -> List[Optional[float]]:
    """log2(e_h / e_h/2) per level; None on the first level or when an error vanishes."""
    orders: List[Optional[float]] = [None]
    for coarse, fine in zip(errors[:-1], errors[1:]):
        orders.append(math.log2(coarse / fine) if coarse > 0 and fine > 0 else None)
    return orders


def run_convergence(driver: str, order: int = 1, levels: int = 4, num_dims: int = 2, base_cells: int = 2,
                    topology: str = 'n_cube', case: Optional[str] = None, **options) -> List[RunResult]:
    """Uniform refinement study: level l uses base_cells * 2**l cells per direction."""
    if levels < 1:
        raise ValueError(f"A convergence study needs at least one level, got {levels}")
    results = []
    for level in range(levels):
        cells = [base_cells * 2 ** level] * num_dims
        triangulation = create_structured(num_dims, cells, topology=topology)
        results.append(run_driver(driver, triangulation, order, case, **options))
    logger.info("[Convergence] %s k=%d: L2 orders %s", driver, order,
                observed_orders([r.l2_error for r in results])[1:])
    return results


def format_convergence_table(results: Sequence[RunResult]) -> str:
    """Tab separated table of per-level errors and observed orders."""
    def fmt(value: Optional[float]) -> str:
        return '-' if value is None else f"{value:.3f}"

    with_pressure = any(r.pressure_l2_error is not None for r in results)
    header = ['level', 'cells', 'h', 'free_dofs', 'l2_error', 'l2_order', 'h1_error', 'h1_order']
    if with_pressure:
        header += ['p_l2_error', 'p_l2_order']
    l2_orders = observed_orders([r.l2_error for r in results])
    h1_orders = observed_orders([r.h1_error for r in results])
    p_orders = observed_orders([r.pressure_l2_error or 0.0 for r in results])
    lines = ['\t'.join(header)]
    for level, r in enumerate(results):
        row = [str(level), str(r.num_cells), f"{r.h:.4e}", str(r.num_free_dofs),
               f"{r.l2_error:.6e}", fmt(l2_orders[level]), f"{r.h1_error:.6e}", fmt(h1_orders[level])]
        if with_pressure:
            row += [f"{r.pressure_l2_error:.6e}", fmt(p_orders[level])]
        lines.append('\t'.join(row))
    return '\n'.join(lines) + '\n'
