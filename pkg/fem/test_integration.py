from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose

import numpy as np

from .integration import (CellIntegrator, CellMap, FacetIntegrator, FacetMaps, build_qpoints_permutation,
                          geometry_reference_fe, integrator_get, invert_jacobian)
from .polytope import n_cube, simplex
from .quadrature import create_facet_quadrature, create_polytope_quadrature
from .reference_fe import FEType, make_reference_fe
from .triangulation import Triangulation


def two_quads(flip_second: bool = False) -> Triangulation:
    coordinates = np.array([[0, 1, 2, 0, 1, 2], [0, 0, 0, 1, 1, 1]], dtype=float)
    second = [4, 5, 1, 2] if flip_second else [1, 2, 4, 5]
    return Triangulation(n_cube(2), coordinates, np.array([[0, 1, 3, 4], second]))


def update_shared_facet(tri: Triangulation, facet_maps: FacetMaps):
    facet = [f for f in tri.facets() if not f.is_boundary][0]
    permutation = tri.get_permutation_index(facet.cells[0], facet.cells[1], *facet.lids)
    facet_maps.update(facet.lids, [tri.cell_coordinates(c) for c in facet.cells], permutation)
    return facet


class InvertJacobianTest(SimpleTestCase):
    def test_matches_numpy(self):
        rng = np.random.default_rng(3)
        for d in (1, 2, 3, 4):
            jacobian = rng.normal(size=(d, d, 5)) + 3 * np.eye(d)[:, :, None]
            det, inverse = invert_jacobian(jacobian)
            for p in range(5):
                assert_allclose(det[p], np.linalg.det(jacobian[:, :, p]))
                assert_allclose(inverse[:, :, p], np.linalg.inv(jacobian[:, :, p]), atol=1e-12)


class CellMapTest(SimpleTestCase):
    def test_stretched_quad(self):
        geometry_fe = geometry_reference_fe(n_cube(2))
        cell_map = CellMap.from_quadrature(create_polytope_quadrature(n_cube(2), 2), geometry_fe)
        cell_map.update(np.array([[0.0, 2.0, 0.0, 2.0], [0.0, 0.0, 3.0, 3.0]]))
        self.assertAlmostEqual(cell_map.measure.sum(), 6.0)
        assert_allclose(cell_map.jacobian[:, :, 0], [[2.0, 0.0], [0.0, 3.0]])
        assert_allclose(cell_map.det_jacobian, 6.0)
        self.assertTrue(np.all(cell_map.quad_points_phys[0] < 2.0))

    def test_triangle_area(self):
        cell_map = CellMap.from_quadrature(create_polytope_quadrature(simplex(2), 1), geometry_reference_fe(simplex(2)))
        cell_map.update(np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]))
        self.assertAlmostEqual(cell_map.measure.sum(), 1.0)

    def test_degenerate_cell(self):
        cell_map = CellMap.from_quadrature(create_polytope_quadrature(simplex(2), 1), geometry_reference_fe(simplex(2)))
        with self.assertRaises(ValueError):
            cell_map.update(np.array([[0.0, 1.0, 2.0], [0.0, 1.0, 2.0]]))

    def test_measure_needs_weights(self):
        cell_map = CellMap(np.array([[0.5], [0.5]]), geometry_reference_fe(n_cube(2)))
        cell_map.update(n_cube(2).vertex_coordinates)
        with self.assertRaises(ValueError):
            cell_map.measure


class CellIntegratorTest(SimpleTestCase):
    def setUp(self):
        self.quadrature = create_polytope_quadrature(n_cube(2), 4)
        self.cell_map = CellMap.from_quadrature(self.quadrature, geometry_reference_fe(n_cube(2)))
        self.cell_map.update(np.array([[1.0, 3.0, 1.0, 3.0], [0.0, 0.0, 0.5, 0.5]]))

    def test_physical_shape_functions(self):
        """Shape functions sum to one, their gradients to zero, and integrate to the area."""
        integrator = CellIntegrator(self.quadrature, make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 2))
        integrator.update(self.cell_map)
        values = integrator.get_values()
        self.assertAlmostEqual(np.sum(values[0] * self.cell_map.measure), 1.0)
        assert_allclose(integrator.get_gradients()[0].sum(axis=1), 0.0, atol=1e-10)
        assert_allclose(integrator_get('values', integrator), values)

    def test_access_rules(self):
        integrator = CellIntegrator(self.quadrature, make_reference_fe(n_cube(2), FEType.LAGRANGIAN, 1))
        with self.assertRaises(RuntimeError):
            integrator.get_values()
        integrator.update(self.cell_map)
        with self.assertRaises(ValueError):
            integrator.get_divergences()
        with self.assertRaises(ValueError):
            integrator.get('hessians')

    def test_divergence_theorem_for_rt(self):
        """The integral of div phi equals its total outward flux, one for an RT0 function."""
        integrator = CellIntegrator(self.quadrature, make_reference_fe(n_cube(2), FEType.RAVIART_THOMAS, 0))
        integrator.update(self.cell_map)
        fluxes = integrator.get_divergences() @ self.cell_map.measure
        self.assertAlmostEqual(abs(fluxes).max(), 1.0)


class QpointsPermutationTest(SimpleTestCase):
    def test_edge_reversal(self):
        quadrature = create_facet_quadrature(n_cube(2), 2)
        self.assertEqual(build_qpoints_permutation(quadrature, 2, 0).tolist(), [0, 1])
        self.assertEqual(build_qpoints_permutation(quadrature, 2, 1).tolist(), [1, 0])

    def test_quad_face_symmetries_are_bijections(self):
        quadrature = create_facet_quadrature(n_cube(3), 4)
        for p in range(8):
            self.assertEqual(sorted(build_qpoints_permutation(quadrature, 8, p)), list(range(quadrature.num_points)))

    def test_triangle_faces_only_have_the_identity(self):
        quadrature = create_facet_quadrature(simplex(3), 2)
        with self.assertRaises(ValueError):
            build_qpoints_permutation(quadrature, 1, 2)

    @override_settings(FEM_GEOMETRY_TOL=-1.0)
    def test_tolerance_comes_from_settings(self):
        quadrature = create_facet_quadrature(n_cube(2), 2)
        with self.assertRaises(ValueError):
            build_qpoints_permutation(quadrature, 2, 1)


class FacetMapsTest(SimpleTestCase):
    def setUp(self):
        self.quadrature = create_facet_quadrature(n_cube(2), 3)

    def test_interior_facet_geometry(self):
        tri = two_quads()
        facet_maps = FacetMaps(n_cube(2), self.quadrature)
        update_shared_facet(tri, facet_maps)
        self.assertAlmostEqual(facet_maps.measure.sum(), 1.0)
        assert_allclose(facet_maps.get_normals(0), np.array([[1.0], [0.0]]) * np.ones(facet_maps.num_points), atol=1e-12)
        assert_allclose(facet_maps.get_normals(1), -facet_maps.get_normals(0))
        assert_allclose(facet_maps.get_quadrature_points_coordinates(0)[0], 1.0)

    def test_both_sides_see_the_same_points(self):
        """After permutation, point gp is the same physical point from both cells."""
        for flip in (False, True):
            tri = two_quads(flip_second=flip)
            facet_maps = FacetMaps(n_cube(2), self.quadrature)
            update_shared_facet(tri, facet_maps)
            assert_allclose(facet_maps.get_quadrature_points_coordinates(1),
                            facet_maps.get_quadrature_points_coordinates(0), atol=1e-12)

    def test_boundary_facet_normal(self):
        tri = two_quads()
        facet = [f for f in tri.facets() if f.is_boundary and tri.vef_keys[f.gid] == (0, 3)][0]
        facet_maps = FacetMaps(n_cube(2), self.quadrature)
        facet_maps.update(facet.lids, [tri.cell_coordinates(facet.cells[0])])
        assert_allclose(facet_maps.get_normals()[:, 0], [-1.0, 0.0], atol=1e-12)

    def test_segment_end_points(self):
        """In 1D a facet is a point with unit measure."""
        coordinates = np.array([[0.0, 0.5, 1.0]])
        tri = Triangulation(n_cube(1), coordinates, np.array([[0, 1], [1, 2]]))
        facet_maps = FacetMaps(n_cube(1), create_facet_quadrature(n_cube(1), 2))
        update_shared_facet(tri, facet_maps)
        assert_allclose(facet_maps.measure, [1.0])
        assert_allclose(facet_maps.get_normals(0), [[1.0]])


class FacetIntegratorTest(SimpleTestCase):
    def test_minus_side_data_is_permuted(self):
        """Interpolating the coordinates from either side gives the same facet points."""
        quadrature = create_facet_quadrature(n_cube(2), 3)
        geometry_fe = geometry_reference_fe(n_cube(2))
        for flip in (False, True):
            tri = two_quads(flip_second=flip)
            facet_maps = FacetMaps(n_cube(2), quadrature)
            facet = update_shared_facet(tri, facet_maps)
            integrator = FacetIntegrator(facet_maps, [geometry_fe])
            integrator.update()
            plus = tri.cell_coordinates(facet.cells[0]) @ integrator.get_values(0)[0]
            minus = tri.cell_coordinates(facet.cells[1]) @ integrator.get_values(1)[0]
            assert_allclose(minus, plus, atol=1e-12)
            assert_allclose(plus, facet_maps.get_quadrature_points_coordinates(0), atol=1e-12)
            self.assertEqual(integrator.qpoints_perm.shape, (quadrature.num_points, 2))
