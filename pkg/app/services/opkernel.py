"""
Sparse operator substrate: enumerated lattice bases, complex sparse matrices,
Hermitian spectra, norm lower bounds and Matrix Market I/O.
"""
from pathlib import Path
from typing import Dict, Iterable, Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import structlog

from app.config import get_settings
from app.utils.errors import (
    DimensionMismatchError,
    InvalidParameterError,
    NonHermitianError,
    ReportIOError,
)

logger = structlog.get_logger()
settings = get_settings()


class BasisIndex(NamedTuple):
    """Label of one basis vector: component, fiber sample and multi-index (i_1..i_k)."""
    component: int
    sample: int
    indices: Tuple[int, ...]


class LatticeBasis:
    """
    Enumeration of a truncated component basis.

    Order: fiber sample outermost, then i_1..i_{k-1} in 1..N, then the last index
    in -M..M; all axes ascending (lexicographic). With `descending_last=True` the
    last axis runs from M down to -M, which is the native order of the lattice
    realization (atoms enumerated by increasing t_k).
    """

    def __init__(self, component: int, n_samples: int, N: int, M: int, descending_last: bool = False):
        if component < 0:
            raise InvalidParameterError(f"component index must be >= 0, got {component}")
        self.component = component
        self.N = N
        self.M = M
        self.descending_last = descending_last
        if component == 0:
            self.n_samples = 1
            self.shape: Tuple[int, ...] = (1,)
        else:
            self.n_samples = n_samples
            self.shape = (n_samples,) + (N,) * (component - 1) + (2 * M + 1,)
        self.dim = int(np.prod(self.shape))

        grids = np.indices(self.shape).reshape(len(self.shape), -1)
        self.samples = grids[0].astype(np.int64)
        if component == 0:
            self.indices = np.zeros((self.dim, 0), dtype=np.int64)
        else:
            unilateral = grids[1:component] + 1
            last = grids[component] - M
            if descending_last:
                last = -last
            self.indices = np.vstack([unilateral, last[None, :]]).T.astype(np.int64)

    def __len__(self) -> int:
        return self.dim

    def __getitem__(self, position: int) -> BasisIndex:
        return BasisIndex(self.component, int(self.samples[position]),
                          tuple(int(i) for i in self.indices[position]))

    def __iter__(self) -> Iterator[BasisIndex]:
        for position in range(self.dim):
            yield self[position]

    def encode(self, samples: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """Positions of the given labels; -1 where a label lies outside the window."""
        samples = np.asarray(samples, dtype=np.int64)
        if self.component == 0:
            return np.zeros(len(samples), dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64).reshape(len(samples), self.component)
        axes = [samples] + [indices[:, j] - 1 for j in range(self.component - 1)]
        last = indices[:, self.component - 1]
        axes.append((-last if self.descending_last else last) + self.M)
        inside = np.ones(len(samples), dtype=bool)
        for axis, size in zip(axes, self.shape):
            inside &= (axis >= 0) & (axis < size)
        positions = np.full(len(samples), -1, dtype=np.int64)
        if inside.any():
            positions[inside] = np.ravel_multi_index(tuple(a[inside] for a in axes), self.shape)
        return positions

    def position(self, label: BasisIndex) -> int:
        found = int(self.encode(np.array([label.sample]), np.array([label.indices]))[0])
        if found < 0:
            raise KeyError(label)
        return found

    def shifted(self, j: int, step: int = 1) -> np.ndarray:
        """Positions reached by raising index j (1-based) by `step`; -1 outside the window."""
        moved = self.indices.copy()
        moved[:, j - 1] += step
        return self.encode(self.samples, moved)

    def permutation_to(self, other: "LatticeBasis") -> np.ndarray:
        """perm[p] = position in `other` of the label at position p here."""
        perm = other.encode(self.samples, self.indices)
        if (perm < 0).any():
            raise DimensionMismatchError("bases do not carry the same labels")
        return perm


class SparseOperator:
    """Square complex sparse matrix; stored zeros are eliminated on construction."""

    __slots__ = ("_matrix",)

    def __init__(self, matrix):
        matrix = sp.csr_matrix(matrix, dtype=np.complex128, copy=True)
        if matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatchError(f"operator must be square, got {matrix.shape}")
        matrix.eliminate_zeros()
        matrix.sort_indices()
        self._matrix = matrix

    @classmethod
    def zeros(cls, dim: int) -> "SparseOperator":
        return cls(sp.csr_matrix((dim, dim), dtype=np.complex128))

    @classmethod
    def identity(cls, dim: int) -> "SparseOperator":
        return cls(sp.identity(dim, dtype=np.complex128, format="csr"))

    @classmethod
    def diagonal(cls, values: Sequence[complex]) -> "SparseOperator":
        return cls(sp.diags(np.asarray(values, dtype=np.complex128), format="csr"))

    @classmethod
    def from_entries(cls, dim: int, rows: Iterable[int], cols: Iterable[int], values: Iterable[complex]) -> "SparseOperator":
        rows = np.asarray(list(rows), dtype=np.int64)
        cols = np.asarray(list(cols), dtype=np.int64)
        values = np.asarray(list(values), dtype=np.complex128)
        return cls(sp.coo_matrix((values, (rows, cols)), shape=(dim, dim)))

    @classmethod
    def from_dict(cls, dim: int, entries: Dict[Tuple[int, int], complex]) -> "SparseOperator":
        return cls.from_entries(dim, (r for r, _ in entries), (c for _, c in entries), entries.values())

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._matrix.copy()

    @property
    def nnz(self) -> int:
        return self._matrix.nnz

    def entries(self) -> Dict[Tuple[int, int], complex]:
        coo = self._matrix.tocoo()
        return {(int(r), int(c)): complex(v) for r, c, v in zip(coo.row, coo.col, coo.data)}

    def _check(self, other: "SparseOperator") -> None:
        if self.dim != other.dim:
            raise DimensionMismatchError(f"dimensions {self.dim} and {other.dim} differ")

    def compose(self, other: "SparseOperator") -> "SparseOperator":
        """self * other (other acts first)."""
        self._check(other)
        return SparseOperator(self._matrix @ other._matrix)

    __matmul__ = compose

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self._matrix.conj().T)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        self._check(other)
        return SparseOperator(self._matrix + other._matrix)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        self._check(other)
        return SparseOperator(self._matrix - other._matrix)

    def __neg__(self) -> "SparseOperator":
        return SparseOperator(-self._matrix)

    def scale(self, factor: complex) -> "SparseOperator":
        return SparseOperator(self._matrix * complex(factor))

    def __mul__(self, factor) -> "SparseOperator":
        if isinstance(factor, SparseOperator):
            return NotImplemented
        return self.scale(factor)

    __rmul__ = __mul__

    def power(self, exponent: int) -> "SparseOperator":
        """Nonnegative powers; negative exponents mean powers of the adjoint."""
        base = self if exponent >= 0 else self.adjoint()
        result = SparseOperator.identity(self.dim)
        for _ in range(abs(exponent)):
            result = base.compose(result)
        return result

    def diagonal_values(self) -> np.ndarray:
        return self._matrix.diagonal()

    def off_diagonal_max(self) -> float:
        off = self._matrix - sp.diags(self._matrix.diagonal())
        return float(abs(off).max()) if off.nnz else 0.0

    def is_diagonal(self, tol: float = 0.0) -> bool:
        return self.off_diagonal_max() <= tol

    def max_abs(self) -> float:
        return float(abs(self._matrix).max()) if self._matrix.nnz else 0.0

    def hermitian_defect(self) -> float:
        return (self - self.adjoint()).max_abs()

    def column_max(self) -> np.ndarray:
        """Max |entry| of every column."""
        if not self._matrix.nnz:
            return np.zeros(self.dim)
        return np.asarray(abs(self._matrix).max(axis=0).todense()).ravel()

    def restrict(self, positions: Sequence[int]) -> "SparseOperator":
        """Compression onto the span of the given basis vectors."""
        positions = np.asarray(positions, dtype=np.int64)
        return SparseOperator(self._matrix[positions][:, positions])

    def permuted(self, perm: np.ndarray) -> "SparseOperator":
        """Matrix in the basis where vector p moves to position perm[p]."""
        dim = self.dim
        P = sp.csr_matrix((np.ones(dim), (np.asarray(perm), np.arange(dim))), shape=(dim, dim))
        return SparseOperator(P @ self._matrix @ P.T)

    def to_dense(self) -> np.ndarray:
        return self._matrix.toarray()

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return self._matrix @ np.asarray(vector, dtype=np.complex128)

    def __repr__(self) -> str:
        return f"SparseOperator(dim={self.dim}, nnz={self.nnz})"


def compose(A: SparseOperator, B: SparseOperator) -> SparseOperator:
    return A.compose(B)


def adjoint(A: SparseOperator) -> SparseOperator:
    return A.adjoint()


def block_diag(blocks: Sequence[SparseOperator]) -> SparseOperator:
    return SparseOperator(sp.block_diag([b.matrix for b in blocks], format="csr"))


def combination_residual(terms: Sequence[Tuple[complex, SparseOperator]], columns: np.ndarray) -> float:
    """
    Relative residual of sum_t c_t W_t on the given basis vectors.

    For each column h: |sum_t c_t W_t h|_inf / max(1, sum_t |c_t| |W_t h|_inf);
    returns the maximum over the columns.
    """
    columns = np.asarray(columns, dtype=np.int64)
    if columns.size == 0 or not terms:
        return 0.0
    dim = terms[0][1].dim
    combined = SparseOperator.zeros(dim)
    scale = np.zeros(dim)
    for coefficient, operator in terms:
        combined = combined + operator.scale(coefficient)
        scale += abs(coefficient) * operator.column_max()
    residual = combined.column_max()[columns] / np.maximum(1.0, scale[columns])
    return float(residual.max())


def _extremal(values: np.ndarray, k: int) -> np.ndarray:
    low = k // 2
    return np.concatenate((values[:low], values[len(values) - (k - low):]))


def hermitian_spectrum(A: SparseOperator, tol: Optional[float] = None, k: Optional[int] = None) -> np.ndarray:
    """
    Ascending eigenvalues of a Hermitian operator.

    Diagonal operators are read off directly. Up to `dense_limit` the full
    spectrum comes from a dense solver. Above it, or whenever `k` is given,
    ARPACK returns the `k` extremal eigenvalues: k // 2 from the bottom of the
    spectrum and the rest from the top.

    Args:
        A: Hermitian operator
        tol: bound on max |A - A*|
        k: number of extremal eigenvalues; settings.extremal_eigenvalues above the dense limit

    Returns:
        np.ndarray: eigenvalues in ascending order
    """
    tol = settings.hermitian_tol if tol is None else tol
    defect = A.hermitian_defect()
    if defect >= tol:
        raise NonHermitianError(f"max |A - A*| = {defect:.3e} exceeds {tol:.1e}")
    if k is not None and k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    if A.dim == 0:
        return np.zeros(0)
    if A.is_diagonal():
        values = np.sort(A.diagonal_values().real)
        return values if k is None or k >= A.dim else _extremal(values, k)
    if k is None and A.dim <= settings.dense_limit:
        dense = A.to_dense()
        return np.linalg.eigvalsh(0.5 * (dense + dense.conj().T))

    k = settings.extremal_eigenvalues if k is None else k
    matrix = 0.5 * (A.matrix + A.matrix.conj().T)
    if k >= A.dim - 1:
        values = np.linalg.eigvalsh(matrix.toarray())
        return values if k >= A.dim else _extremal(values, k)
    if not np.any(matrix.data.imag):
        matrix = matrix.real
    v0 = np.random.default_rng(settings.seed).standard_normal(A.dim).astype(matrix.dtype)
    low = k // 2
    parts = []
    if low:
        parts.append(spla.eigsh(matrix, k=low, which="SA", v0=v0, return_eigenvectors=False))
    parts.append(spla.eigsh(matrix, k=k - low, which="LA", v0=v0, return_eigenvectors=False))
    logger.debug("Iterative eigen-solve", dim=A.dim, k=k)
    return np.sort(np.concatenate(parts).real)


def _start_vector(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    vector = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return vector / np.linalg.norm(vector)


def operator_norm_lb(A: SparseOperator, iterations: Optional[int] = None, seed: Optional[int] = None) -> float:
    """
    Lower bound for the operator norm by power iteration on A*A.

    Args:
        A: operator
        iterations: number of A*A applications (>= 1)
        seed: seed of the random start vector

    Returns:
        float: max over iterates of sqrt(Rayleigh quotient); exact max |entry| for diagonal A
    """
    iterations = settings.power_iterations if iterations is None else iterations
    seed = settings.seed if seed is None else seed
    if A.dim == 0:
        raise InvalidParameterError("operator of dimension 0 has no norm estimate")
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be >= 1, got {iterations}")
    if A.is_diagonal():
        return float(np.abs(A.diagonal_values()).max(initial=0.0))

    M = A.matrix
    MH = M.conj().T.tocsr()
    x = _start_vector(A.dim, seed)
    best = 0.0
    for _ in range(iterations):
        y = M @ x
        rayleigh = float(np.vdot(y, y).real)
        best = max(best, np.sqrt(max(rayleigh, 0.0)))
        x = MH @ y
        norm = np.linalg.norm(x)
        if norm == 0.0:
            break
        x = x / norm
    return float(best)


def largest_singular_value(A: SparseOperator) -> float:
    """Reference value: dense SVD below the dense limit, ARPACK above."""
    if A.dim == 0:
        return 0.0
    if A.dim <= settings.dense_limit:
        return float(np.linalg.svd(A.to_dense(), compute_uv=False)[0])
    value = spla.svds(A.matrix, k=1, return_singular_vectors=False,
                      v0=_start_vector(A.dim, settings.seed))
    return float(value[0])


def write_matrix_market(A: SparseOperator, path: Union[str, Path], comment: str = "") -> Path:
    """Write coordinate format with 17 significant digits; real field when all entries are real."""
    path = Path(path)
    matrix = A.matrix.tocoo()
    field = "real" if not np.any(matrix.data.imag) else "complex"
    data = matrix.real if field == "real" else matrix
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        scipy.io.mmwrite(str(path), data, comment=comment, field=field, precision=17, symmetry="general")
    except OSError as e:
        logger.error("Matrix Market write failed", path=str(path), error=str(e))
        raise ReportIOError(f"cannot write {path}: {e}") from e
    logger.debug("Matrix Market written", path=str(path), dim=A.dim, nnz=A.nnz, field=field)
    return path


def read_matrix_market(path: Union[str, Path]) -> SparseOperator:
    path = Path(path)
    try:
        matrix = scipy.io.mmread(str(path))
    except (OSError, ValueError) as e:
        logger.error("Matrix Market read failed", path=str(path), error=str(e))
        raise ReportIOError(f"cannot read {path}: {e}") from e
    return SparseOperator(sp.csr_matrix(matrix))
