import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose

import numpy as np

from .fe_space import FieldSpec, create_fe_space, generate_global_dof_numbering
from .linalg import (AffineOperator, BlockAssembler, BlockMatrix, BlockVector, MatrixSign, MatrixState,
                     ScalarAssembler, SolverMethod, SparseMatrix, solve)
from .reference_fe import FEType
from .triangulation import create_structured


def laplacian_1d(n: int) -> SparseMatrix:
    matrix = SparseMatrix(n, symmetric=True, sign=MatrixSign.POSITIVE_DEFINITE)
    for i in range(n):
        matrix.insert([i], [i], [2.0])
        if i + 1 < n:
            matrix.insert([i, i + 1], [i + 1, i], [-1.0, -1.0])
    matrix.compress()
    return matrix


class MassIntegration:
    """Mass matrix and the load of f = 1."""

    dirichlet_function = None

    def integrate(self, fe_space, assembler):
        for cell in fe_space.cells():
            phi = cell.integrators[0].get_values()[0]
            weighted = phi * cell.measure
            assembler.assemble_cell(weighted @ phi.T, weighted.sum(axis=1), cell.elem2dof, cell.dof_blocks)


class SparseMatrixTest(SimpleTestCase):
    def test_duplicates_are_summed(self):
        matrix = SparseMatrix(2)
        matrix.insert([0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0])
        self.assertEqual(matrix.nnz, 3)
        matrix.compress()
        self.assertEqual(matrix.state, MatrixState.COMPRESSED)
        self.assertEqual(matrix.nnz, 2)
        assert_allclose(matrix.to_dense(), [[3.0, 0.0], [0.0, 5.0]])
        self.assertEqual(matrix.indptr.tolist(), [0, 1, 2])

    def test_storage_grows(self):
        matrix = SparseMatrix(10, capacity=2)
        for i in range(10):
            matrix.insert([i] * 10, list(range(10)), np.ones(10))
        matrix.compress()
        assert_allclose(matrix.to_dense(), np.ones((10, 10)))

    def test_symmetric_storage_keeps_the_upper_triangle(self):
        """A lower entry lands on its mirror; the full view restores both."""
        matrix = SparseMatrix(2, symmetric_storage=True)
        self.assertTrue(matrix.symmetric)
        matrix.insert([1, 0], [0, 0], [5.0, 1.0])
        matrix.compress()
        assert_allclose(matrix.to_scipy(full=False).toarray(), [[1.0, 5.0], [0.0, 0.0]])
        assert_allclose(matrix.to_dense(), [[1.0, 5.0], [5.0, 0.0]])
        with self.assertRaises(ValueError):
            SparseMatrix(2, 3, symmetric_storage=True)

    def test_compressed_pattern_is_frozen(self):
        matrix = SparseMatrix(2)
        matrix.insert([0, 1], [1, 0], [1.0, 1.0])
        matrix.compress()
        matrix.insert([0], [1], [2.0])
        assert_allclose(matrix.to_dense(), [[0.0, 3.0], [1.0, 0.0]])
        with self.assertRaises(RuntimeError):
            matrix.insert([1], [1], [1.0])

    def test_empty_compressed_pattern_rejects_insertion(self):
        matrix = SparseMatrix(2, 2)
        matrix.compress()
        self.assertEqual(matrix.nnz, 0)
        with self.assertRaises(RuntimeError):
            matrix.insert([0], [0], [1.0])

    def test_zero_keeps_the_pattern(self):
        matrix = laplacian_1d(4)
        matrix.zero()
        self.assertEqual(matrix.nnz, 10)
        assert_allclose(matrix.data, 0.0)

    def test_bounds_and_state(self):
        matrix = SparseMatrix(2)
        with self.assertRaises(ValueError):
            matrix.insert([2], [0], [1.0])
        with self.assertRaises(RuntimeError):
            matrix.to_scipy()
        with self.assertRaises(RuntimeError):
            matrix.indices

    def test_dump(self):
        matrix = SparseMatrix(2)
        matrix.insert([0, 1], [0, 1], [0.5, 2.0])
        matrix.compress()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'out' / 'a.txt'
            matrix.dump(path)
            lines = path.read_text().splitlines()
        self.assertEqual(lines, ['% 2 2 2', '1 1 0.5', '2 2 2.0'])


class BlockContainersTest(SimpleTestCase):
    def test_block_vector(self):
        vector = BlockVector([2, 1])
        vector.assign_flat([1.0, 2.0, 3.0])
        assert_allclose(vector.blocks[1], [3.0])
        self.assertEqual(vector.size, 3)
        clone = vector.copy()
        clone.zero()
        assert_allclose(vector.flatten(), [1.0, 2.0, 3.0])
        with self.assertRaises(ValueError):
            vector.assign_flat([1.0])

    def test_uncoupled_blocks_hold_nothing(self):
        matrix = BlockMatrix([2, 1], np.array([[True, True], [True, False]]))
        self.assertIsNone(matrix.blocks[1][1])
        matrix.compress()
        self.assertEqual(matrix.to_dense().shape, (3, 3))
        self.assertEqual(matrix.shape, (3, 3))


class AssemblerTest(SimpleTestCase):
    def test_single_dof(self):
        """A = [4], f = [2] gives x = 1/2."""
        assembler = ScalarAssembler(1, symmetric=True, sign=MatrixSign.POSITIVE_DEFINITE)
        assembler.assemble_cell(np.array([[4.0]]), np.array([2.0]), [0])
        assembler.compress()
        assert_allclose(solve(assembler.matrix, assembler.vector, SolverMethod.CG_JACOBI), [0.5])
        assert_allclose(solve(assembler.matrix, assembler.vector), [0.5])

    def test_fixed_values_are_lifted(self):
        """Columns of fixed DOFs move to the right-hand side; their rows are dropped."""
        assembler = ScalarAssembler(1)
        assembler.fixed_values = np.array([1.0])
        assembler.assemble_cell(np.array([[2.0, -1.0], [-1.0, 2.0]]), np.zeros(2), [0, -1])
        assembler.compress()
        assert_allclose(assembler.matrix.to_dense(), [[2.0]])
        assert_allclose(assembler.vector, [1.0])
        assert_allclose(solve(assembler.matrix, assembler.vector), [0.5])

    def test_symmetric_storage_assembly(self):
        elmat = np.array([[2.0, -1.0], [-1.0, 2.0]])
        full, upper = ScalarAssembler(3), ScalarAssembler(3, symmetric_storage=True)
        for assembler in (full, upper):
            assembler.assemble_cell(elmat, None, [0, 1])
            assembler.assemble_cell(elmat, None, [1, 2])
            assembler.compress()
        self.assertEqual(upper.matrix.nnz, 5)
        assert_allclose(upper.matrix.to_dense(), full.matrix.to_dense())

    def test_block_assembly(self):
        assembler = BlockAssembler([2, 1], np.array([[True, True], [True, False]]))
        elmat = np.arange(9.0).reshape(3, 3) + 1.0
        assembler.assemble_cell(elmat, np.ones(3), [0, 1, 0], [0, 0, 1])
        assembler.compress()
        expected = elmat.copy()
        expected[2, 2] = 0.0
        assert_allclose(assembler.matrix.to_dense(), expected)
        assert_allclose(assembler.vector.flatten(), [1.0, 1.0, 1.0])

    def test_facet_assembly(self):
        """Two-sided contributions are stitched into one element matrix."""
        assembler = ScalarAssembler(2)
        one = np.array([[1.0]])
        assembler.assemble_facet([[one, -one], [-one, one]], [np.ones(1), np.ones(1)], [[0], [1]])
        assembler.assemble_facet([[one]], [np.ones(1)], [[0]])
        assembler.compress()
        assert_allclose(assembler.matrix.to_dense(), [[2.0, -1.0], [-1.0, 1.0]])
        assert_allclose(assembler.vector, [2.0, 1.0])

    def test_zero(self):
        assembler = BlockAssembler([1, 1])
        assembler.assemble_cell(np.ones((2, 2)), np.ones(2), [0, 0], [0, 1])
        assembler.compress()
        assembler.zero()
        assert_allclose(assembler.matrix.to_dense(), 0.0)
        assert_allclose(assembler.vector.flatten(), 0.0)


class SolveTest(SimpleTestCase):
    def test_methods_agree(self):
        matrix = laplacian_1d(20)
        rhs = np.linspace(0.0, 1.0, 20)
        x_cg = solve(matrix, rhs, SolverMethod.CG_JACOBI)
        x_lu = solve(matrix, rhs, SolverMethod.DENSE_LU)
        assert_allclose(x_cg, x_lu, rtol=1e-8)
        assert_allclose(matrix.to_scipy() @ x_lu, rhs, atol=1e-12)

    def test_cg_needs_spd_flags(self):
        matrix = SparseMatrix(1)
        matrix.insert([0], [0], [1.0])
        matrix.compress()
        with self.assertRaises(ValueError):
            solve(matrix, [1.0], SolverMethod.CG_JACOBI)
        indefinite = SparseMatrix(1, symmetric=True, sign=MatrixSign.INDEFINITE)
        indefinite.insert([0], [0], [1.0])
        indefinite.compress()
        with self.assertRaises(ValueError):
            solve(indefinite, [1.0], SolverMethod.CG_JACOBI)

    def test_cg_divergence_is_an_error(self):
        with self.assertRaises(RuntimeError):
            solve(laplacian_1d(30), np.ones(30), SolverMethod.CG_JACOBI, rtol=1e-14, maxiter=2)

    def test_singular_and_oversized_systems(self):
        singular = SparseMatrix(2)
        singular.insert([0, 0, 1, 1], [0, 1, 0, 1], [1.0, 1.0, 1.0, 1.0])
        singular.compress()
        with self.assertRaises(RuntimeError):
            solve(singular, [1.0, 1.0])
        with override_settings(FEM_DENSE_LU_CAP=5):
            with self.assertRaises(ValueError):
                solve(laplacian_1d(6), np.ones(6))

    def test_argument_checks(self):
        with self.assertRaises(ValueError):
            solve(laplacian_1d(2), np.ones(2), 'gmres')
        with self.assertRaises(ValueError):
            solve(laplacian_1d(2), np.ones(3))
        assert_allclose(solve(np.eye(2), BlockVector([1, 1])), [0.0, 0.0])


class AffineOperatorTest(SimpleTestCase):
    def setUp(self):
        self.space = create_fe_space(create_structured(2, [3, 2]), [FieldSpec(FEType.LAGRANGIAN, 1)])
        generate_global_dof_numbering(self.space)

    def test_mass_system(self):
        """M u = (1, phi) is solved by u = 1."""
        operator = AffineOperator(self.space, MassIntegration(), symmetric_storage=True,
                                  sign=MatrixSign.POSITIVE_DEFINITE)
        with self.assertRaises(RuntimeError):
            operator.matrix
        operator.numerical_setup()
        self.assertEqual(operator.num_dofs, 12)
        self.assertAlmostEqual(operator.rhs.sum(), 1.0)
        u = operator.solve(SolverMethod.CG_JACOBI)
        assert_allclose(u, 1.0, rtol=1e-8)
        self.assertLess(operator.residual_norm(u), 1e-8)
        assert_allclose(operator.apply(np.zeros(12)), -operator.rhs)

    def test_setup_again_reuses_the_pattern(self):
        operator = AffineOperator(self.space, MassIntegration())
        operator.numerical_setup()
        first = operator.matrix.to_dense()
        operator.numerical_setup()
        assert_allclose(operator.matrix.to_dense(), first)
        assert_allclose(operator.rhs.sum(), 1.0)
