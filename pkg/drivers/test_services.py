import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose

import numpy as np
from numpy.polynomial.legendre import leggauss

from fem.fe_space import gather_nodal_values
from fem.mesh_io import export_mesh
from fem.triangulation import create_structured

from .integrations import default_penalty
from .manufactured import PoissonCase, StokesCase
from .services import (Driver, RunResult, build_triangulation, format_convergence_table, observed_orders,
                       parse_cells, run_convergence, run_driver, run_poisson_cg, run_poisson_dg, run_stokes)


def bilinear_basis(corner: np.ndarray, h: float, x: np.ndarray):
    """Q1 values [4, np] and gradients [4, 2, np] on the square [corner, corner + h], x fastest."""
    t = (x - corner[:, None]) / h
    factors = np.array([1.0 - t, t])
    slopes = np.array([-1.0, 1.0]) / h
    values = np.empty((4, x.shape[1]))
    gradients = np.empty((4, 2, x.shape[1]))
    for a in range(4):
        bx, by = a % 2, a // 2
        values[a] = factors[bx, 0] * factors[by, 1]
        gradients[a, 0] = slopes[bx] * factors[by, 1]
        gradients[a, 1] = factors[bx, 0] * slopes[by]
    return values, gradients


def gauss_segment(start: float, h: float):
    points, weights = leggauss(2)
    return start + h * (points + 1.0) / 2.0, weights * h / 2.0


def square_stiffness(corner: np.ndarray, h: float):
    xs, wx = gauss_segment(corner[0], h)
    ys, wy = gauss_segment(corner[1], h)
    points = np.array([np.tile(xs, 2), np.repeat(ys, 2)])
    weights = np.tile(wx, 2) * np.repeat(wy, 2)
    _, gradients = bilinear_basis(corner, h, points)
    return np.einsum('ajp,bjp,p->ab', gradients, gradients, weights)


class SystemMatrixTest(SimpleTestCase):
    """Assembled matrices against a cell by cell sum written out on axis aligned squares."""

    def test_poisson_cg_matrix_and_lifting(self):
        tri = create_structured(2, [3, 3])
        result = run_poisson_cg(tri, 1, PoissonCase.LINEAR)
        space = result.fe_space
        num_free = space.num_free_dofs
        self.assertEqual((num_free, space.num_fixed_dofs), (4, 12))

        def position(gid):
            return int(gid) if gid >= 0 else num_free - int(gid) - 1

        size = num_free + space.num_fixed_dofs
        full, g = np.zeros((size, size)), np.zeros(size)
        for cell in range(tri.num_cells):
            coordinates = tri.cell_coordinates(cell)
            corner = coordinates.min(axis=1)
            rows = [position(gid) for gid in space.get_fe_dofs(cell, 0)]
            full[np.ix_(rows, rows)] += square_stiffness(corner, 1.0 / 3.0)
            g[rows] = coordinates.sum(axis=0)

        assert_allclose(result.operator.matrix.to_dense(), full[:num_free, :num_free], atol=1e-12)
        assert_allclose(result.operator.rhs, -full[:num_free, num_free:] @ g[num_free:], atol=1e-12)

    def test_non_symmetric_dg_matrix(self):
        tri = create_structured(2, [2, 2])
        tau, h = -1.0, 0.5
        result = run_poisson_dg(tri, 1, PoissonCase.SINE, tau=tau)
        space = result.fe_space
        penalty = default_penalty(1) / h
        cells = {tuple(np.round(tri.cell_coordinates(c).min(axis=1), 9)): c for c in range(tri.num_cells)}

        full = np.zeros((space.num_free_dofs, space.num_free_dofs))
        for corner, cell in cells.items():
            ids = space.get_fe_dofs(cell, 0)
            full[np.ix_(ids, ids)] += square_stiffness(np.array(corner), h)

        for axis in (0, 1):
            normal = np.eye(2)[axis]
            for i in range(3):
                for j in range(2):
                    along, weights = gauss_segment(j * h, h)
                    points = np.empty((2, along.size))
                    points[axis], points[1 - axis] = i * h, along
                    sides = []
                    for offset, sign in ((i - 1, 1.0), (i, -1.0)):
                        corner = np.empty(2)
                        corner[axis], corner[1 - axis] = offset * h, j * h
                        cell = cells.get(tuple(np.round(corner, 9)))
                        if cell is None:
                            continue
                        values, gradients = bilinear_basis(corner, h, points)
                        normal_derivatives = np.einsum('ajp,j->ap', gradients, normal)
                        sides.append((space.get_fe_dofs(cell, 0), sign, values, normal_derivatives))
                    mean = 1.0 / len(sides)
                    for ids_s, sign_s, v_s, dn_s in sides:
                        for ids_t, sign_t, v_t, dn_t in sides:
                            block = (-mean * sign_s * np.einsum('ap,bp,p->ab', v_s, dn_t, weights)
                                     - tau * mean * sign_t * np.einsum('ap,bp,p->ab', dn_s, v_t, weights)
                                     + penalty * sign_s * sign_t * np.einsum('ap,bp,p->ab', v_s, v_t, weights))
                            full[np.ix_(ids_s, ids_t)] += block

        assembled = result.operator.matrix.to_dense()
        self.assertGreater(np.abs(full - full.T).max(), 1e-6)
        assert_allclose(assembled, full, atol=1e-10)


class ArgumentTest(SimpleTestCase):
    def test_parse_cells(self):
        self.assertEqual(parse_cells('4', 2), [4, 4])
        self.assertEqual(parse_cells('4,2,1', 3), [4, 2, 1])
        for text, num_dims in (('x', 2), ('4,4', 3), ('0', 2)):
            with self.assertRaises(ValueError):
                parse_cells(text, num_dims)

    def test_build_triangulation_from_a_mesh_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'square.msh'
            export_mesh(create_structured(2, [3, 1], topology='simplex'), path)
            tri = build_triangulation(mesh=path)
        self.assertEqual(tri.num_cells, 6)
        self.assertTrue(tri.polytope.is_simplex)
        self.assertEqual(build_triangulation(3, '2,1,1').num_cells, 2)

    def test_unknown_driver(self):
        with self.assertRaises(ValueError):
            run_driver('heat', create_structured(2, [2, 2]))

    @override_settings(FEM_DG_PENALTY_FACTOR=2.0)
    def test_default_penalty_scales_with_the_order(self):
        self.assertEqual(default_penalty(1), 8.0)
        self.assertEqual(default_penalty(3), 32.0)


class PoissonCGTest(SimpleTestCase):
    def test_linear_solution_is_reproduced(self):
        result = run_poisson_cg(create_structured(2, [4, 4]), 1, PoissonCase.LINEAR)
        self.assertEqual((result.num_free_dofs, result.num_fixed_dofs), (9, 16))
        self.assertLess(result.l2_error, 1e-8)
        self.assertLess(result.h1_error, 1e-7)
        self.assertLess(result.residual, 1e-8)
        self.assertEqual(result.num_cells, 16)
        self.assertAlmostEqual(result.h, np.sqrt(2) / 4)

    def test_quadratic_solution_with_second_order(self):
        for topology in ('n_cube', 'simplex'):
            result = run_poisson_cg(create_structured(2, [3, 3], topology=topology), 2, PoissonCase.POLYNOMIAL)
            self.assertLess(result.l2_error, 1e-8, msg=topology)
            self.assertLess(result.h1_error, 1e-7, msg=topology)

    def test_three_dimensions(self):
        result = run_poisson_cg(create_structured(3, [2, 2, 2]), 1, PoissonCase.LINEAR)
        self.assertEqual((result.num_free_dofs, result.num_fixed_dofs), (1, 26))
        self.assertLess(result.l2_error, 1e-8)

    def test_dense_solver(self):
        result = run_poisson_cg(create_structured(2, [4, 4]), 1, PoissonCase.SINE, method='dense_lu')
        self.assertLess(result.residual, 1e-10)
        self.assertLess(result.l2_error, 0.05)


class PoissonDGTest(SimpleTestCase):
    def test_linear_solution_is_reproduced_by_every_variant(self):
        for tau in (1.0, -1.0, 0.0):
            result = run_poisson_dg(create_structured(2, [3, 3]), 1, PoissonCase.LINEAR, tau=tau)
            self.assertEqual(result.num_free_dofs, 36)
            self.assertEqual(result.num_fixed_dofs, 0)
            self.assertLess(result.l2_error, 1e-8, msg=f"tau={tau}")
            self.assertLess(result.h1_error, 1e-7, msg=f"tau={tau}")

    def test_symmetric_variant_is_positive_definite(self):
        result = run_poisson_dg(create_structured(2, [2, 2]), 1, PoissonCase.SINE, tau=1.0)
        matrix = result.operator.matrix.to_dense()
        assert_allclose(matrix, matrix.T, atol=1e-12)
        self.assertGreater(np.linalg.eigvalsh(matrix).min(), 0.0)

    def test_non_symmetric_variant(self):
        result = run_poisson_dg(create_structured(2, [2, 2]), 1, PoissonCase.SINE, tau=-1.0)
        matrix = result.operator.matrix.to_dense()
        self.assertGreater(np.abs(matrix - matrix.T).max(), 1e-6)

    def test_quadratic_solution_on_simplices(self):
        result = run_poisson_dg(create_structured(2, [2, 2], topology='simplex'), 2, PoissonCase.POLYNOMIAL)
        self.assertLess(result.l2_error, 1e-8)


class StokesTest(SimpleTestCase):
    def test_polynomial_solution_is_reproduced(self):
        """(y, -x) and a linear pressure lie in Q2 x Q1."""
        result = run_stokes(create_structured(2, [4, 4]), 1, StokesCase.POLYNOMIAL)
        self.assertEqual(result.num_free_dofs, 98 + 24)
        self.assertEqual(result.num_fixed_dofs, 64 + 1)
        self.assertLess(result.l2_error, 1e-8)
        self.assertLess(result.h1_error, 1e-7)
        self.assertLess(result.pressure_l2_error, 1e-7)
        self.assertIn('p L2=', result.summary())

    def test_block_layout_gives_the_same_solution(self):
        monolithic = run_stokes(create_structured(2, [3, 3]), 1, StokesCase.TRIGONOMETRIC)
        blocked = run_stokes(create_structured(2, [3, 3]), 1, StokesCase.TRIGONOMETRIC, blocks=True)
        matrix = blocked.operator.matrix
        self.assertIsNone(matrix.blocks[1][1])
        dense = matrix.to_dense()
        assert_allclose(dense, dense.T, atol=1e-12)
        self.assertEqual(blocked.num_free_dofs, monolithic.num_free_dofs)
        self.assertAlmostEqual(blocked.l2_error, monolithic.l2_error, places=10)
        self.assertAlmostEqual(blocked.pressure_l2_error, monolithic.pressure_l2_error, places=10)

    def test_discrete_velocity_is_divergence_free(self):
        """(q, div u_h) vanishes for every free pressure basis function q."""
        result = run_stokes(create_structured(2, [4, 4]), 1, StokesCase.TRIGONOMETRIC)
        space, uh = result.fe_space, result.fe_function
        divergence = {}
        for cell in space.cells():
            velocity, pressure = cell.integrators
            div_uh = np.einsum('ap,a->p', velocity.get_divergences(), gather_nodal_values(uh, cell.gid, 0))
            local = pressure.get_values()[0] @ (div_uh * cell.measure)
            for gid, value in zip(space.get_fe_dofs(cell.gid, 1), local):
                divergence[int(gid)] = divergence.get(int(gid), 0.0) + value
        free = [value for gid, value in divergence.items() if gid >= 0]
        self.assertEqual(len(free), 24)
        assert_allclose(free, 0.0, atol=1e-10)
        self.assertGreater(np.abs(uh.free_dof_values.flatten()).max(), 1e-3)

    def test_pinned_vertex_gets_its_set_id_back(self):
        tri = create_structured(2, [3, 3])
        before = tri.vefs_set_ids.copy()
        first = run_stokes(tri, 1, StokesCase.POLYNOMIAL)
        self.assertEqual(tri.vefs_set_ids.tolist(), before.tolist())
        second = run_stokes(tri, 1, StokesCase.POLYNOMIAL)
        self.assertEqual(tri.vefs_set_ids.tolist(), before.tolist())
        self.assertEqual(second.num_fixed_dofs, first.num_fixed_dofs)
        self.assertLess(second.pressure_l2_error, 1e-7)

    def test_viscosity_enters_the_forcing(self):
        result = run_stokes(create_structured(2, [4, 4]), 1, StokesCase.POLYNOMIAL, viscosity=0.01)
        self.assertLess(result.l2_error, 1e-8)


class ConvergenceTest(SimpleTestCase):
    def orders(self, results, attribute):
        return observed_orders([getattr(r, attribute) for r in results])[1:]

    def test_cg_orders(self):
        linear = run_convergence(Driver.POISSON_CG, 1, levels=2, base_cells=4)
        self.assertGreater(self.orders(linear, 'l2_error')[0], 1.8)
        self.assertGreater(self.orders(linear, 'h1_error')[0], 0.9)
        quadratic = run_convergence(Driver.POISSON_CG, 2, levels=2, base_cells=4)
        self.assertGreater(self.orders(quadratic, 'l2_error')[0], 2.7)
        self.assertEqual([r.num_cells for r in quadratic], [16, 64])

    def test_dg_orders(self):
        results = run_convergence(Driver.POISSON_DG, 1, levels=2, base_cells=4)
        self.assertGreater(self.orders(results, 'l2_error')[0], 1.7)

    def test_stokes_orders(self):
        results = run_convergence(Driver.STOKES, 1, levels=2, base_cells=4)
        self.assertGreater(self.orders(results, 'l2_error')[0], 2.3)
        self.assertGreater(self.orders(results, 'pressure_l2_error')[0], 1.4)

    def test_needs_a_level(self):
        with self.assertRaises(ValueError):
            run_convergence(Driver.POISSON_CG, 1, levels=0)

    def test_observed_orders(self):
        self.assertEqual(observed_orders([4.0, 1.0, 0.0]), [None, 2.0, None])
        self.assertEqual(observed_orders([3.0]), [None])

    def test_table(self):
        results = [RunResult(Driver.STOKES, 1, 4 ** (i + 1), 0.5 ** i, 10, 5, 0.1 / 4 ** i, 0.1 / 2 ** i,
                             pressure_l2_error=0.2 / 4 ** i) for i in range(2)]
        lines = format_convergence_table(results).splitlines()
        self.assertEqual(lines[0].split('\t'), ['level', 'cells', 'h', 'free_dofs', 'l2_error', 'l2_order',
                                                'h1_error', 'h1_order', 'p_l2_error', 'p_l2_order'])
        first, second = (line.split('\t') for line in lines[1:])
        self.assertEqual(first[5], '-')
        self.assertEqual(second[5], '2.000')
        self.assertEqual(second[7], '1.000')
        self.assertEqual(second[9], '2.000')

    def test_table_without_pressure(self):
        results = [RunResult(Driver.POISSON_CG, 1, 4, 0.5, 1, 8, 0.1, 0.1)]
        self.assertEqual(len(format_convergence_table(results).splitlines()[0].split('\t')), 8)
