"""
Sparse linear algebra for FE assembly.

A ``SparseMatrix`` is built from coordinate triplets and then compressed to CSR;
after compression the sparsity pattern is frozen and further insertions only add
into existing entries, which lets an operator be re-assembled without rebuilding
its pattern. Assemblers take element matrices with signed DOF ids: ids >= 0 are
free rows/columns, ids < 0 are fixed (strong Dirichlet) values stored at -id - 1.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from django.conf import settings
from django.db import models
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, cg

logger = logging.getLogger(__name__)


class MatrixState(models.TextChoices):
    BUILDING = 'building', 'Building'
    COMPRESSED = 'compressed', 'Compressed'


class MatrixSign(models.TextChoices):
    POSITIVE_DEFINITE = 'positive_definite', 'Positive definite'
    POSITIVE_SEMIDEFINITE = 'positive_semidefinite', 'Positive semidefinite'
    INDEFINITE = 'indefinite', 'Indefinite'


class SolverMethod(models.TextChoices):
    CG_JACOBI = 'cg_jacobi', 'CG + Jacobi'
    DENSE_LU = 'dense_lu', 'Dense LU'


class OperatorState(models.TextChoices):
    CREATED = 'created', 'Created'
    NUMERICALLY_SET_UP = 'numerically_set_up', 'Numerically set up'


class SparseMatrix:
    """COO while building, CSR (sorted columns, no duplicates) once compressed."""

    def __init__(self, num_rows: int, num_cols: Optional[int] = None, symmetric_storage: bool = False,
                 symmetric: bool = False, sign: str = MatrixSign.INDEFINITE, capacity: int = 64):
        self.num_rows = num_rows
        self.num_cols = num_rows if num_cols is None else num_cols
        if symmetric_storage and self.num_rows != self.num_cols:
            raise ValueError("Symmetric storage needs a square matrix")
        self.symmetric_storage = symmetric_storage
        self.symmetric = symmetric or symmetric_storage
        self.sign = sign
        self.state = MatrixState.BUILDING
        self._rows = np.empty(capacity, dtype=np.int64)
        self._cols = np.empty(capacity, dtype=np.int64)
        self._vals = np.empty(capacity)
        self._size = 0
        self._csr: Optional[sp.csr_matrix] = None
        self._keys: Optional[np.ndarray] = None

    def __repr__(self):
        return f"SparseMatrix({self.num_rows}x{self.num_cols}, state={self.state}, nnz={self.nnz})"

    @property
    def shape(self):
        return self.num_rows, self.num_cols

    @property
    def nnz(self) -> int:
        return self._size if self.state == MatrixState.BUILDING else self._csr.nnz

    def _grow(self, needed: int):
        capacity = self._rows.shape[0]
        while capacity < needed:
            capacity *= 2
        if capacity != self._rows.shape[0]:
            self._rows = np.resize(self._rows, capacity)
            self._cols = np.resize(self._cols, capacity)
            self._vals = np.resize(self._vals, capacity)

    def insert(self, rows, cols, values):
        """Add values at (rows, cols); duplicates are summed."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(values, dtype=float), rows.shape).ravel()
        if rows.size == 0:
            return
        if rows.min() < 0 or rows.max() >= self.num_rows or cols.min() < 0 or cols.max() >= self.num_cols:
            raise ValueError(f"Entry outside a {self.num_rows}x{self.num_cols} matrix")
        if self.symmetric_storage:
            lower = rows > cols
            rows, cols = np.where(lower, cols, rows), np.where(lower, rows, cols)

        if self.state == MatrixState.BUILDING:
            start = self._size
            self._grow(start + rows.size)
            self._rows[start:start + rows.size] = rows
            self._cols[start:start + rows.size] = cols
            self._vals[start:start + rows.size] = values
            self._size += rows.size
            return

        if self._keys.size == 0:
            raise RuntimeError(f"Entry ({rows[0]}, {cols[0]}) is not in the compressed sparsity pattern")
        keys = rows * self.num_cols + cols
        positions = np.searchsorted(self._keys, keys)
        positions = np.minimum(positions, self._keys.size - 1)
        if np.any(self._keys[positions] != keys):
            missing = int(np.flatnonzero(self._keys[positions] != keys)[0])
            raise RuntimeError(f"Entry ({rows[missing]}, {cols[missing]}) is not in the compressed sparsity pattern")
        np.add.at(self._csr.data, positions, values)

    def compress(self):
        """Sort triplets row-major, sum duplicates and switch to CSR."""
        if self.state == MatrixState.COMPRESSED:
            return
        n = self._size
        coo = sp.coo_matrix((self._vals[:n], (self._rows[:n], self._cols[:n])), shape=self.shape)
        csr = coo.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr
        entry_rows = np.repeat(np.arange(self.num_rows, dtype=np.int64), np.diff(csr.indptr))
        self._keys = entry_rows * self.num_cols + csr.indices.astype(np.int64)
        self.state = MatrixState.COMPRESSED
        self._rows = self._cols = self._vals = None
        self._size = 0
        logger.debug("[SparseMatrix] Compressed %dx%d matrix, %d entries", self.num_rows, self.num_cols, csr.nnz)

    def zero(self):
        """Reset values, keeping the compressed pattern."""
        if self.state == MatrixState.COMPRESSED:
            self._csr.data[:] = 0.0
        else:
            self._size = 0

    def _require_compressed(self):
        if self.state != MatrixState.COMPRESSED:
            raise RuntimeError("Matrix must be compressed first")

    @property
    def indptr(self) -> np.ndarray:
        self._require_compressed()
        return self._csr.indptr

    @property
    def indices(self) -> np.ndarray:
        self._require_compressed()
        return self._csr.indices

    @property
    def data(self) -> np.ndarray:
        self._require_compressed()
        return self._csr.data

    def to_scipy(self, full: bool = True) -> sp.csr_matrix:
        """CSR copy; with symmetric storage and ``full`` the lower triangle is filled in."""
        self._require_compressed()
        if self.symmetric_storage and full:
            upper = self._csr
            return (upper + sp.triu(upper, k=1).T).tocsr()
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def dump(self, path: Union[str, Path]):
        """Write 'row col value' lines, 1-based, for external inspection."""
        coo = self.to_scipy(full=False).tocoo()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w') as f:
            f.write(f"% {self.num_rows} {self.num_cols} {coo.nnz}\n")
            for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
                f.write(f"{r + 1} {c + 1} {v!r}\n")


class BlockVector:
    """One flat array per block."""

    def __init__(self, sizes: Sequence[int]):
        self.blocks: List[np.ndarray] = [np.zeros(int(n)) for n in sizes]

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> List[int]:
        return [b.shape[0] for b in self.blocks]

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def zero(self):
        for block in self.blocks:
            block[:] = 0.0

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)

    def assign_flat(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.size:
            raise ValueError(f"Flat vector of size {values.shape[0]} for a block vector of size {self.size}")
        start = 0
        for block in self.blocks:
            block[:] = values[start:start + block.shape[0]]
            start += block.shape[0]

    def copy(self) -> 'BlockVector':
        clone = BlockVector(self.sizes)
        clone.assign_flat(self.flatten())
        return clone


class BlockMatrix:
    """num_blocks^2 sparse blocks; uncoupled pairs hold no storage."""

    def __init__(self, sizes: Sequence[int], coupling: Optional[np.ndarray] = None, symmetric_storage: bool = False,
                 symmetric: bool = False, sign: str = MatrixSign.INDEFINITE):
        self.sizes = [int(n) for n in sizes]
        n = len(self.sizes)
        self.coupling = np.ones((n, n), dtype=bool) if coupling is None else np.asarray(coupling, dtype=bool)
        self.symmetric = symmetric or symmetric_storage
        self.sign = sign
        self.blocks: List[List[Optional[SparseMatrix]]] = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                if self.coupling[i, j]:
                    self.blocks[i][j] = SparseMatrix(self.sizes[i], self.sizes[j],
                                                     symmetric_storage=symmetric_storage and i == j,
                                                     symmetric=symmetric and i == j, sign=sign)

    @property
    def num_blocks(self) -> int:
        return len(self.sizes)

    @property
    def shape(self):
        total = sum(self.sizes)
        return total, total

    def compress(self):
        for block in self._stored():
            block.compress()

    def zero(self):
        for block in self._stored():
            block.zero()

    def _stored(self):
        return [b for row in self.blocks for b in row if b is not None]

    def to_scipy(self) -> sp.csr_matrix:
        n = self.num_blocks
        grid = [[self.blocks[i][j].to_scipy() if self.blocks[i][j] is not None
                 else sp.csr_matrix((self.sizes[i], self.sizes[j])) for j in range(n)] for i in range(n)]
        return sp.bmat(grid, format='csr')

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()


class Assembler:
    """
    FE assembly into a (block) matrix and vector.

    ``fixed_values`` holds the strong Dirichlet values addressed by negative ids.
    """

    def __init__(self, matrix: Union[SparseMatrix, BlockMatrix], vector: Union[np.ndarray, BlockVector]):
        self.matrix = matrix
        self.vector = vector
        self.fixed_values = np.zeros(0)

    def _lift(self, elmat, elvec, ids, fixed_values):
        rhs = np.zeros(len(ids)) if elvec is None else np.array(elvec, dtype=float)
        fixed = ids < 0
        if elmat is not None and fixed.any():
            values = self.fixed_values if fixed_values is None else fixed_values
            rhs -= elmat[:, fixed] @ values[-ids[fixed] - 1]
        return rhs

    def assemble_cell(self, elmat: Optional[np.ndarray], elvec: Optional[np.ndarray], dof_ids,
                      dof_blocks=None, fixed_values: Optional[np.ndarray] = None):
        raise NotImplementedError

    def assemble_facet(self, elmats, elvecs, dof_ids, dof_blocks=None, fixed_values=None):
        """
        Assemble facet-wise matrices.

        Interior facets pass ``elmats`` as [[A++, A+-], [A-+, A--]] with two id (and
        block) arrays; boundary facets pass a single A++ with one id array.
        """
        if len(dof_ids) == 1:
            elmat = elmats[0][0] if isinstance(elmats, (list, tuple)) else elmats
            elvec = None if elvecs is None else elvecs[0]
            blocks = None if dof_blocks is None else dof_blocks[0]
            self.assemble_cell(elmat, elvec, dof_ids[0], blocks, fixed_values)
            return
        elmat = None if elmats is None else np.block([[elmats[0][0], elmats[0][1]], [elmats[1][0], elmats[1][1]]])
        elvec = None if elvecs is None else np.concatenate([elvecs[0], elvecs[1]])
        blocks = None if dof_blocks is None else np.concatenate(dof_blocks)
        self.assemble_cell(elmat, elvec, np.concatenate(dof_ids), blocks, fixed_values)

    def compress(self):
        self.matrix.compress()

    def zero(self):
        self.matrix.zero()
        if isinstance(self.vector, BlockVector):
            self.vector.zero()
        else:
            self.vector[:] = 0.0


class ScalarAssembler(Assembler):
    def __init__(self, num_dofs: int, symmetric_storage: bool = False, symmetric: bool = False,
                 sign: str = MatrixSign.INDEFINITE):
        super().__init__(SparseMatrix(num_dofs, symmetric_storage=symmetric_storage, symmetric=symmetric, sign=sign),
                         np.zeros(num_dofs))

    def assemble_cell(self, elmat, elvec, dof_ids, dof_blocks=None, fixed_values=None):
        ids = np.asarray(dof_ids, dtype=np.int64)
        rhs = self._lift(elmat, elvec, ids, fixed_values)
        free = ids >= 0
        np.add.at(self.vector, ids[free], rhs[free])
        if elmat is None:
            return
        rows, cols = np.meshgrid(ids[free], ids[free], indexing='ij')
        values = np.asarray(elmat)[np.ix_(free, free)]
        if self.matrix.symmetric_storage:
            keep = rows <= cols
            rows, cols, values = rows[keep], cols[keep], values[keep]
        self.matrix.insert(rows, cols, values)


class BlockAssembler(Assembler):
    """Ids are block-local; ``dof_blocks`` says which block each local DOF lives in."""

    def __init__(self, sizes: Sequence[int], coupling=None, symmetric_storage: bool = False, symmetric: bool = False,
                 sign: str = MatrixSign.INDEFINITE):
        super().__init__(BlockMatrix(sizes, coupling, symmetric_storage, symmetric, sign), BlockVector(sizes))

    def assemble_cell(self, elmat, elvec, dof_ids, dof_blocks=None, fixed_values=None):
        ids = np.asarray(dof_ids, dtype=np.int64)
        blocks = np.zeros(len(ids), dtype=np.int64) if dof_blocks is None else np.asarray(dof_blocks, dtype=np.int64)
        rhs = self._lift(elmat, elvec, ids, fixed_values)
        free = ids >= 0
        for b in range(self.vector.num_blocks):
            mask = free & (blocks == b)
            np.add.at(self.vector.blocks[b], ids[mask], rhs[mask])
        if elmat is None:
            return
        elmat = np.asarray(elmat)
        for bi in range(self.matrix.num_blocks):
            row_mask = free & (blocks == bi)
            if not row_mask.any():
                continue
            for bj in range(self.matrix.num_blocks):
                block = self.matrix.blocks[bi][bj]
                col_mask = free & (blocks == bj)
                if block is None or not col_mask.any():
                    continue
                rows, cols = np.meshgrid(ids[row_mask], ids[col_mask], indexing='ij')
                values = elmat[np.ix_(row_mask, col_mask)]
                if block.symmetric_storage:
                    keep = rows <= cols
                    rows, cols, values = rows[keep], cols[keep], values[keep]
                block.insert(rows, cols, values)


def solve(matrix, rhs, method: str = SolverMethod.DENSE_LU, rtol: Optional[float] = None,
          maxiter: Optional[int] = None) -> np.ndarray:
    """
    Desk-scale solvers.

    ``cg_jacobi`` needs a matrix flagged symmetric and (semi)definite; ``dense_lu``
    refuses systems larger than FEM_DENSE_LU_CAP.
    """
    if isinstance(matrix, (SparseMatrix, BlockMatrix)):
        symmetric, sign = matrix.symmetric, matrix.sign
        a = matrix.to_scipy()
    else:
        symmetric, sign = False, MatrixSign.INDEFINITE
        a = sp.csr_matrix(matrix)
    b = np.asarray(rhs.flatten() if isinstance(rhs, BlockVector) else rhs, dtype=float)
    n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError(f"Right-hand side of size {b.shape[0]} for a {n}x{n} system")
    if method not in SolverMethod.values:
        raise ValueError(f"Unknown solver method '{method}'")
    if n == 0:
        return np.zeros(0)

    if method == SolverMethod.CG_JACOBI:
        if not symmetric or sign == MatrixSign.INDEFINITE:
            raise ValueError("cg_jacobi requires a symmetric positive (semi)definite matrix")
        rtol = getattr(settings, 'FEM_CG_RTOL', 1e-10) if rtol is None else rtol
        maxiter = getattr(settings, 'FEM_CG_MAXITER', 20000) if maxiter is None else maxiter
        diagonal = a.diagonal()
        if np.any(diagonal <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        preconditioner = LinearOperator((n, n), matvec=lambda x: x / diagonal)
        x, info = cg(a, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=preconditioner)
        if info != 0:
            logger.error("[Solver] CG did not converge in %d iterations (n=%d)", maxiter, n)
            raise RuntimeError(f"CG did not converge in {maxiter} iterations")
        logger.info("[Solver] CG converged, n=%d", n)
        return x

    cap = getattr(settings, 'FEM_DENSE_LU_CAP', 20000)
    if n > cap:
        raise ValueError(f"System of size {n} exceeds the dense LU cap {cap}")
    dense = a.toarray()
    lu, piv = lu_factor(dense)
    scale = np.max(np.abs(dense))
    if np.min(np.abs(np.diag(lu))) <= 1e-14 * scale:
        logger.error("[Solver] Singular pivot in dense LU (n=%d)", n)
        raise RuntimeError("Singular matrix in dense LU")
    logger.info("[Solver] Dense LU solved, n=%d", n)
    return lu_solve((lu, piv), b)


class AffineOperator:
    """
    F(u) = A u - f assembled from a discrete integration over an FE space.

    The discrete integration provides ``integrate(fe_space, assembler)`` and may carry
    a ``dirichlet_function`` whose fixed values are lifted into the right-hand side.
    """

    def __init__(self, fe_space, discrete_integration, symmetric_storage: bool = False, symmetric: bool = False,
                 sign: str = MatrixSign.INDEFINITE):
        self.fe_space = fe_space
        self.discrete_integration = discrete_integration
        self.symmetric_storage = symmetric_storage
        self.symmetric = symmetric or symmetric_storage
        self.sign = sign
        self.assembler: Optional[Assembler] = None
        self.state = OperatorState.CREATED

    def _create_assembler(self) -> Assembler:
        layout = self.fe_space.block_layout
        if layout.num_blocks == 1:
            return ScalarAssembler(layout.dofs_per_block[0], self.symmetric_storage, self.symmetric, self.sign)
        return BlockAssembler(layout.dofs_per_block, layout.block_coupling(), self.symmetric_storage,
                              self.symmetric, self.sign)

    def numerical_setup(self):
        if self.assembler is None:
            self.assembler = self._create_assembler()
        else:
            self.assembler.zero()
        dirichlet = getattr(self.discrete_integration, 'dirichlet_function', None)
        if dirichlet is not None:
            self.assembler.fixed_values = dirichlet.fixed_dof_values
        self.discrete_integration.integrate(self.fe_space, self.assembler)
        self.assembler.compress()
        self.state = OperatorState.NUMERICALLY_SET_UP
        logger.info("[AffineOperator] Numerical setup done: %d free DOFs", self.num_dofs)

    def _require_setup(self):
        if self.state != OperatorState.NUMERICALLY_SET_UP:
            raise RuntimeError("AffineOperator used before numerical_setup")

    @property
    def num_dofs(self) -> int:
        return sum(self.fe_space.block_layout.dofs_per_block)

    @property
    def matrix(self) -> Union[SparseMatrix, BlockMatrix]:
        self._require_setup()
        return self.assembler.matrix

    @property
    def rhs(self) -> np.ndarray:
        self._require_setup()
        vector = self.assembler.vector
        return vector.flatten() if isinstance(vector, BlockVector) else vector

    def apply(self, u) -> np.ndarray:
        """A u - f for a flat or block vector u."""
        self._require_setup()
        u = u.flatten() if isinstance(u, BlockVector) else np.asarray(u, dtype=float)
        return self.matrix.to_scipy() @ u - self.rhs

    def residual_norm(self, u) -> float:
        residual = np.linalg.norm(self.apply(u))
        scale = np.linalg.norm(self.rhs)
        return residual / scale if scale > 0 else residual

    def solve(self, method: str = SolverMethod.DENSE_LU) -> np.ndarray:
        self._require_setup()
        return solve(self.matrix, self.rhs, method)
