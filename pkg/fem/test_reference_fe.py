from django.test import SimpleTestCase
from numpy.testing import assert_allclose

import numpy as np

from .polytope import create_polytope, n_cube, simplex
from .reference_fe import (FEType, FieldType, Interpolation, apply_cell_map, build_change_of_basis,
                           create_interpolation, create_quadrature, make_reference_fe, num_components_of)


class AffineMap:
    """Constant-Jacobian stand-in for a cell map."""

    def __init__(self, jacobian, num_points):
        jacobian = np.asarray(jacobian, dtype=float)
        self.jacobian = np.repeat(jacobian[:, :, None], num_points, axis=2)
        self.inv_jacobian = np.repeat(np.linalg.inv(jacobian)[:, :, None], num_points, axis=2)
        self.det_jacobian = np.full(num_points, np.linalg.det(jacobian))


class LagrangianTest(SimpleTestCase):
    def test_duality_on_cubes_and_simplices(self):
        """sigma_a(phi_b) is the identity."""
        for polytope in [n_cube(1), n_cube(2), n_cube(3), simplex(2), simplex(3)]:
            for order in range(1, 4):
                fe = make_reference_fe(polytope, FEType.LAGRANGIAN, order)
                assert_allclose(fe.moment_matrix(), np.eye(fe.num_shape_functions), atol=1e-9,
                                err_msg=f"{polytope!r} order {order}")

    def test_number_of_shape_functions(self):
        self.assertEqual(make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 2).num_shape_functions, 9)
        self.assertEqual(make_reference_fe(simplex(2), FEType.LAGRANGIAN, 2).num_shape_functions, 6)
        self.assertEqual(make_reference_fe(n_cube(3), FEType.LAGRANGIAN, 1, FieldType.VECTOR).num_shape_functions, 24)
        self.assertEqual(make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 0).num_shape_functions, 1)

    def test_partition_of_unity(self):
        fe = make_reference_fe(simplex(2), FEType.LAGRANGIAN, 3)
        points = np.array([[0.1, 0.3, 0.6], [0.2, 0.5, 0.1]])
        interpolation = fe.evaluate(points)
        assert_allclose(interpolation.values[0].sum(axis=0), 1.0)
        assert_allclose(interpolation.gradients[0].sum(axis=1), 0.0, atol=1e-10)

    def test_own_dofs_of_a_biquadratic_quad(self):
        """One DOF on each vertex, edge and the cell."""
        fe = make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 2)
        counts = [fe.num_own_dofs_n_face(i) for i in range(9)]
        self.assertEqual(counts, [1] * 9)
        self.assertEqual(sorted(fe.get_dofs_n_face(7)), [2, 5, 8])
        self.assertEqual(list(fe.get_own_dofs_n_face(8)), [4])

    def test_vector_dofs_are_node_major(self):
        fe = make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 1, FieldType.VECTOR)
        self.assertEqual(fe.num_components, 2)
        self.assertEqual(list(fe.get_own_dofs_n_face(1)), [2, 3])
        values = fe.evaluate(np.array([[0.0], [0.0]])).values
        assert_allclose(values[:, :2, 0], np.eye(2))
        assert_allclose(values[:, 2:, 0], 0.0, atol=1e-14)

    def test_non_conforming_fe_owns_everything_in_the_cell(self):
        fe = make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 1, conformity=False)
        self.assertEqual([fe.num_own_dofs_n_face(i) for i in range(9)], [0] * 8 + [4])

    def test_edge_dof_permutation(self):
        """Reversing an edge swaps its two interior cubic nodes."""
        fe = make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 3)
        self.assertEqual(fe.permute_dof_lid_n_face(0, 0, 1), 0)
        self.assertEqual(fe.permute_dof_lid_n_face(1, 0, 1), 1)
        self.assertEqual(fe.permute_dof_lid_n_face(1, 1, 1), 0)
        with self.assertRaises(ValueError):
            fe.permute_dof_lid_n_face(2, 0, 1)

    def test_face_dof_permutations_are_bijections(self):
        fe = make_reference_fe(n_cube(3), FEType.LAGRANGIAN, 3, FieldType.VECTOR)
        own = fe.num_own_dofs_n_face(n_cube(3).n_faces_of_dim(2)[0])
        self.assertEqual(own, 12)
        for p in range(8):
            self.assertEqual(sorted(fe.permute_own_dof(p, j, 2) for j in range(own)), list(range(own)))

    def test_unsupported_polytope(self):
        with self.assertRaises(ValueError):
            make_reference_fe(create_polytope(3, '100'), FEType.LAGRANGIAN, 1)


class RaviartThomasTest(SimpleTestCase):
    def test_duality(self):
        for num_dims in (2, 3):
            for order in range(3 if num_dims == 2 else 2):
                fe = make_reference_fe(n_cube(num_dims), FEType.RAVIART_THOMAS, order)
                assert_allclose(fe.moment_matrix(), np.eye(fe.num_shape_functions), atol=1e-9,
                                err_msg=f"{num_dims}D RT{order}")

    def test_dimensions_and_ownership(self):
        """RT0 has one DOF per facet; RT1 on a quad has two per edge and four inside."""
        rt0 = make_reference_fe(n_cube(2), FEType.RAVIART_THOMAS, 0)
        self.assertEqual(rt0.num_shape_functions, 4)
        self.assertEqual(rt0.field_type, FieldType.VECTOR)
        self.assertEqual([rt0.num_own_dofs_n_face(i) for i in range(9)], [0] * 4 + [1] * 4 + [0])
        rt1 = make_reference_fe(n_cube(2), FEType.RAVIART_THOMAS, 1)
        self.assertEqual(rt1.num_shape_functions, 12)
        self.assertEqual([rt1.num_own_dofs_n_face(i) for i in range(4, 9)], [2, 2, 2, 2, 4])
        self.assertEqual(make_reference_fe(n_cube(3), FEType.RAVIART_THOMAS, 0).num_shape_functions, 6)

    def test_normal_flux_on_its_facet(self):
        """The x=1 shape function of RT0 has unit normal component there and none on x=0."""
        fe = make_reference_fe(n_cube(2), FEType.RAVIART_THOMAS, 0)
        a = int(fe.get_own_dofs_n_face(7)[0])
        values = fe.evaluate(np.array([[1.0, 0.0], [0.3, 0.7]])).values
        assert_allclose(values[0, a], [1.0, 0.0], atol=1e-12)

    def test_divergence_is_constant_for_rt0(self):
        fe = make_reference_fe(n_cube(2), FEType.RAVIART_THOMAS, 0)
        divergences = fe.evaluate(np.array([[0.2, 0.8], [0.4, 0.1]])).divergences
        assert_allclose(divergences[:, 0], divergences[:, 1])

    def test_only_on_cubes(self):
        with self.assertRaises(ValueError):
            make_reference_fe(simplex(2), FEType.RAVIART_THOMAS, 0)


class FactoryTest(SimpleTestCase):
    def test_instances_are_shared(self):
        self.assertIs(make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 2),
                      make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 2))

    def test_void_fe(self):
        fe = make_reference_fe(n_cube(2), FEType.VOID, 3)
        self.assertEqual(fe.order, 0)
        self.assertEqual(fe.num_shape_functions, 0)
        self.assertEqual(fe.evaluate(np.zeros((2, 5))).values.shape, (1, 0, 5))

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            make_reference_fe(n_cube(2), 'nedelec', 1)
        with self.assertRaises(ValueError):
            make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 1, 'matrix')
        with self.assertRaises(ValueError):
            make_reference_fe(n_cube(2), FEType.LAGRANGIAN, -1)
        with self.assertRaises(ValueError):
            num_components_of('matrix', 2)

    def test_singular_moments(self):
        with self.assertRaises(ValueError):
            build_change_of_basis(np.array([[1.0, 2.0], [2.0, 4.0]]))
        with self.assertRaises(ValueError):
            build_change_of_basis(np.ones((2, 3)))

    def test_default_quadrature_and_interpolation_shapes(self):
        fe = make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 2, FieldType.VECTOR)
        quadrature = create_quadrature(fe)
        self.assertEqual(quadrature.degree, 4)
        interpolation = create_interpolation(fe, quadrature)
        self.assertEqual(interpolation.values.shape, (2, 18, quadrature.num_points))
        self.assertEqual(interpolation.gradients.shape, (2, 2, 18, quadrature.num_points))
        with self.assertRaises(ValueError):
            create_interpolation(fe, create_quadrature(make_reference_fe(n_cube(3), FEType.LAGRANGIAN, 1)))


class CellMapPushForwardTest(SimpleTestCase):
    def test_gradients_scale_with_the_inverse_jacobian(self):
        fe = make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 1)
        reference = fe.evaluate(np.array([[0.5], [0.5]]))
        physical = apply_cell_map(fe, reference, AffineMap([[2.0, 0.0], [0.0, 4.0]], 1))
        assert_allclose(physical.values, reference.values)
        assert_allclose(physical.gradients[0, 0], reference.gradients[0, 0] / 2.0)
        assert_allclose(physical.gradients[0, 1], reference.gradients[0, 1] / 4.0)

    def test_contravariant_piola(self):
        """RT values become J v / det J."""
        fe = make_reference_fe(n_cube(2), FEType.RAVIART_THOMAS, 0)
        reference = fe.evaluate(np.array([[0.5], [0.5]]))
        physical = apply_cell_map(fe, reference, AffineMap([[2.0, 0.0], [0.0, 4.0]], 1))
        assert_allclose(physical.values[0], reference.values[0] * 2.0 / 8.0)
        assert_allclose(physical.values[1], reference.values[1] * 4.0 / 8.0)
        assert_allclose(physical.divergences, reference.divergences / 8.0)

    def test_interpolation_container(self):
        interpolation = Interpolation(np.zeros((1, 3, 2)), np.zeros((1, 2, 3, 2)))
        self.assertEqual(interpolation.num_shape_functions, 3)
        self.assertEqual(interpolation.num_points, 2)
        with self.assertRaises(ValueError):
            interpolation.divergences
