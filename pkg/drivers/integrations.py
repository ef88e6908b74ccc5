"""
Discrete integrations: the cell and facet loops that feed an assembler.

Every integration exposes ``integrate(fe_space, assembler)`` and, for strong
Dirichlet data, a ``dirichlet_function`` whose fixed values the assembler lifts to
the right-hand side.
"""

import logging
from abc import ABC, abstractmethod
from typing import Callable, Optional

import numpy as np
from django.conf import settings

from fem.fe_space import FEFunction, FESpace, evaluate_user_function
from fem.linalg import Assembler

logger = logging.getLogger(__name__)


class DiscreteIntegration(ABC):
    dirichlet_function: Optional[FEFunction] = None

    @abstractmethod
    def integrate(self, fe_space: FESpace, assembler: Assembler):
        ...


def _laplacian(gradients: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_gp grad(phi_a) . grad(phi_b) w for scalar gradients [d, n_shape, np]."""
    return np.einsum('jap,jbp,p->ab', gradients, gradients, weights)


class PoissonCGIntegration(DiscreteIntegration):
    """-div(kappa grad u) = f with conforming Lagrangian FEs and strong Dirichlet data."""

    def __init__(self, source: Callable, diffusion: float = 1.0, dirichlet_function: Optional[FEFunction] = None):
        self.source = source
        self.diffusion = diffusion
        self.dirichlet_function = dirichlet_function

    def integrate(self, fe_space: FESpace, assembler: Assembler):
        for cell in fe_space.cells():
            integrator = cell.integrators[0]
            weights = cell.measure
            elmat = self.diffusion * _laplacian(integrator.get_gradients()[0], weights)
            source = evaluate_user_function(self.source, cell.quadrature_points, 1)[0]
            elvec = integrator.get_values()[0] @ (source * weights)
            assembler.assemble_cell(elmat, elvec, cell.elem2dof, cell.dof_blocks)


def poisson_cg_integrate(fe_space: FESpace, assembler: Assembler, source: Callable, diffusion: float = 1.0):
    PoissonCGIntegration(source, diffusion).integrate(fe_space, assembler)


def default_penalty(order: int) -> float:
    return getattr(settings, 'FEM_DG_PENALTY_FACTOR', 10.0) * (order + 1) ** 2


class PoissonDGIntegration(DiscreteIntegration):
    """
    Interior penalty DG for -div(grad u) = f, Dirichlet data imposed weakly.

    tau = 1, -1, 0 give the symmetric, non-symmetric and incomplete variants. The
    penalty is gamma / h_F with h_F the facet size.
    """

    def __init__(self, source: Callable, dirichlet_value: Callable, tau: float = 1.0,
                 penalty: Optional[float] = None):
        self.source = source
        self.dirichlet_value = dirichlet_value
        self.tau = tau
        self.penalty = penalty

    def _penalty(self, fe_space: FESpace) -> float:
        if self.penalty is not None:
            return self.penalty
        order = max(fe.order for fe in fe_space.reference_fes)
        return default_penalty(order)

    def integrate(self, fe_space: FESpace, assembler: Assembler):
        for cell in fe_space.cells():
            integrator = cell.integrators[0]
            weights = cell.measure
            source = evaluate_user_function(self.source, cell.quadrature_points, 1)[0]
            assembler.assemble_cell(_laplacian(integrator.get_gradients()[0], weights),
                                    integrator.get_values()[0] @ (source * weights),
                                    cell.elem2dof, cell.dof_blocks)

        gamma = self._penalty(fe_space)
        tau = self.tau
        for facet in fe_space.facet_iterator():
            integrator = facet.integrators[0]
            weights = facet.measure
            penalty = gamma / facet.characteristic_length
            sides = range(facet.num_sides)
            values = [integrator.get_values(s)[0] for s in sides]
            normals = [facet.normals(s) for s in sides]
            # grad(phi) . n_plus on every side
            normal_derivatives = [np.einsum('jap,jp->ap', integrator.get_gradients(s)[0], normals[0]) for s in sides]

            if facet.is_boundary:
                phi, dn = values[0], normal_derivatives[0]
                elmat = (-np.einsum('ap,bp,p->ab', phi, dn, weights)
                         - tau * np.einsum('ap,bp,p->ab', dn, phi, weights)
                         + penalty * np.einsum('ap,bp,p->ab', phi, phi, weights))
                u_d = evaluate_user_function(self.dirichlet_value, facet.quadrature_points(0), 1)[0]
                elvec = -tau * dn @ (u_d * weights) + penalty * phi @ (u_d * weights)
                assembler.assemble_facet([[elmat]], [elvec], [facet.elem2dof(0)], [facet.dof_blocks(0)])
                continue

            # [w] = w+ n+ + w- n-, {grad w} = (grad w+ + grad w-) / 2, with n- = -n+
            signs = (1.0, -1.0)
            elmats = [[None, None], [None, None]]
            for s in sides:
                for t in sides:
                    consistency = -0.5 * signs[s] * np.einsum('ap,bp,p->ab', values[s], normal_derivatives[t], weights)
                    adjoint = -0.5 * signs[t] * np.einsum('ap,bp,p->ab', normal_derivatives[s], values[t], weights)
                    jump = signs[s] * signs[t] * np.einsum('ap,bp,p->ab', values[s], values[t], weights)
                    elmats[s][t] = consistency + tau * adjoint + penalty * jump
            assembler.assemble_facet(elmats, None, [facet.elem2dof(0), facet.elem2dof(1)],
                                     [facet.dof_blocks(0), facet.dof_blocks(1)])


def poisson_dg_integrate(fe_space: FESpace, assembler: Assembler, source: Callable, dirichlet_value: Callable,
                         tau: float = 1.0, penalty: Optional[float] = None):
    PoissonDGIntegration(source, dirichlet_value, tau, penalty).integrate(fe_space, assembler)


class StokesIntegration(DiscreteIntegration):
    """
    mu (eps(u), eps(v)) - (div v, p) - (q, div u) = (f, v) on a velocity/pressure space.

    The pressure-pressure block is never integrated; fields are 0 (velocity) and 1
    (pressure).
    """

    def __init__(self, source: Callable, viscosity: float = 1.0, dirichlet_function: Optional[FEFunction] = None):
        self.source = source
        self.viscosity = viscosity
        self.dirichlet_function = dirichlet_function

    def integrate(self, fe_space: FESpace, assembler: Assembler):
        num_dims = fe_space.triangulation.num_dims
        for cell in fe_space.cells():
            velocity, pressure = cell.integrators
            weights = cell.measure
            gradients = velocity.get_gradients()
            strain = 0.5 * (gradients + gradients.transpose(1, 0, 2, 3))
            a_uu = self.viscosity * np.einsum('cjap,cjbp,p->ab', strain, strain, weights)
            b_up = -np.einsum('ap,bp,p->ab', velocity.get_divergences(), pressure.get_values()[0], weights)
            num_p = b_up.shape[1]
            elmat = np.block([[a_uu, b_up], [b_up.T, np.zeros((num_p, num_p))]])

            source = evaluate_user_function(self.source, cell.quadrature_points, num_dims)
            elvec = np.concatenate([np.einsum('cap,cp,p->a', velocity.get_values(), source, weights),
                                    np.zeros(num_p)])
            assembler.assemble_cell(elmat, elvec, cell.elem2dof, cell.dof_blocks)


def stokes_integrate(fe_space: FESpace, assembler: Assembler, source: Callable, viscosity: float = 1.0):
    StokesIntegration(source, viscosity).integrate(fe_space, assembler)
