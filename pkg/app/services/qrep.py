"""
Truncated well-behaved representations of the quantum complex plane.

A component H_k (0 <= k <= n) is spanned by vectors labelled by a fiber sample
a and a multi-index (i_1, .., i_k) with i_1..i_{k-1} >= 1 and i_k in Z. The
window keeps i_j <= N and |i_k| <= M; operators are exact on the interior,
where every index stays at least d steps from the truncated edges.

Two independent builders produce the same operators: the abstract builder
writes the weighted shifts directly from the labels, the lattice builder
evaluates them as multiplication/translation operators on the atoms of a
q-invariant measure. Spectral data of Q_j is read from the labels in both.
"""
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from app.config import get_settings
from app.models.config_models import FiberSpectrum, MeasureSpec, TruncationSpec
from app.models.report_models import RelationReport, ReportRecord
from app.services.opkernel import (
    LatticeBasis,
    SparseOperator,
    block_diag,
    combination_residual,
    hermitian_spectrum,
)
from app.services.qalgebra import NumericPolynomial
from app.utils.errors import (
    DimensionMismatchError,
    DomainError,
    GeneratorIndexError,
    InvalidParameterError,
    RepresentationError,
)

logger = structlog.get_logger()
settings = get_settings()

ABSTRACT = "abstract"
LATTICE = "lattice"

INDICATOR_INTERVALS: Tuple[Tuple[float, float], ...] = ((0.05, 0.9), (1.2345, 7.891))


def _indicator(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: ((x > lo) & (x <= hi)).astype(np.float64)


SPECTRAL_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    **{f"chi({lo},{hi}]": _indicator(lo, hi) for lo, hi in INDICATOR_INTERVALS},
    "1/(1+x)": lambda x: 1.0 / (1.0 + x),
    "x/(1+x^2)": lambda x: x / (1.0 + x * x),
}


def q_pow(q: float, exponents) -> np.ndarray:
    """q**e elementwise; spectral values and interval endpoints both go through here."""
    return np.power(float(q), np.asarray(exponents, dtype=np.float64))


def _weighted_shift(dim: int, targets: np.ndarray, weights: np.ndarray) -> SparseOperator:
    keep = targets >= 0
    return SparseOperator.from_entries(dim, targets[keep], np.arange(dim)[keep], weights[keep])


def _check_q(spectrum_q: float, q: float) -> None:
    if abs(spectrum_q - q) > 1e-15:
        raise InvalidParameterError(f"spectrum was built for q={spectrum_q}, truncation uses q={q}")


def build_qnormal(fiber: FiberSpectrum, M: int, q: float) -> SparseOperator:
    """
    Truncated q-normal operator on l2(Z) tensor fiber: e_{a,i} -> q^{-i} a e_{a,i+1}, |i| <= M.

    Basis order: sample outer, i ascending.
    """
    if M < 1:
        raise InvalidParameterError(f"window M must be >= 1, got {M}")
    _check_q(fiber.q_value, q)
    basis = LatticeBasis(1, len(fiber), 2, M)
    a = np.asarray(fiber.samples)[basis.samples]
    weights = q_pow(q, -basis.indices[:, 0]) * a
    return _weighted_shift(basis.dim, basis.shifted(1), weights)


def build_qhyp(N: int, q: float) -> SparseOperator:
    """Truncated q-hyperbolic operator on l2(N): e_i -> sqrt(q^{-2i} - 1) e_{i+1}, 1 <= i <= N."""
    if N < 2:
        raise InvalidParameterError(f"window N must be >= 2, got {N}")
    if not 0 < q < 1:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q}")
    i = np.arange(1, N + 1)
    weights = np.sqrt(q_pow(q, -2 * i) - 1.0)
    targets = np.where(i < N, np.arange(1, N + 1), -1)
    return _weighted_shift(N, targets, weights)


class RepComponent:
    """
    One truncated component H_k with its generators, phases and moduli.

    z(j) = shift(j) @ modulus(j); both are zero for j > k. `radial` holds the
    diagonal of |z_j| per basis vector (dim x n) and `coordinates` the lattice
    point (t_1..t_k) of every basis vector.
    """

    def __init__(
        self,
        k: int,
        truncation: TruncationSpec,
        fiber: FiberSpectrum,
        basis: LatticeBasis,
        builder: str,
        generators: Dict[int, SparseOperator],
        shifts: Dict[int, SparseOperator],
        moduli: Dict[int, np.ndarray],
        coordinates: np.ndarray,
    ):
        self.k = k
        self.truncation = truncation
        self.fiber = fiber
        self.basis = basis
        self.builder = builder
        self.n = truncation.n
        self.q = truncation.q_value
        self.dim = basis.dim
        self.coordinates = coordinates
        self._generators = generators
        self._shifts = shifts
        self._moduli = moduli
        self._zero = SparseOperator.zeros(self.dim)
        self._cache: Dict[Tuple[str, int], SparseOperator] = {}
        if k == 0:
            self.sample_values = np.ones(1)
        else:
            self.sample_values = np.asarray(fiber.samples)[basis.samples]
        self.radial = np.zeros((self.dim, self.n))
        for j, values in moduli.items():
            self.radial[:, j - 1] = values
        self.interior = np.flatnonzero(self._interior_mask())

    @property
    def label(self) -> Optional[int]:
        return self.k

    def _interior_mask(self) -> np.ndarray:
        if self.k == 0:
            return np.ones(self.dim, dtype=bool)
        N, M, d = self.truncation.N, self.truncation.M, self.truncation.d
        indices = self.basis.indices
        mask = np.abs(indices[:, self.k - 1]) <= M - d
        if self.k > 1:
            mask &= (indices[:, :self.k - 1] <= N - d).all(axis=1)
        return mask

    def _check_index(self, j: int) -> None:
        if not 1 <= j <= self.n:
            raise GeneratorIndexError(f"generator index {j} outside 1..{self.n}")

    def z(self, j: int) -> SparseOperator:
        self._check_index(j)
        return self._generators.get(j, self._zero)

    def z_star(self, j: int) -> SparseOperator:
        self._check_index(j)
        key = ("z*", j)
        if key not in self._cache:
            self._cache[key] = self.z(j).adjoint()
        return self._cache[key]

    def shift(self, j: int) -> SparseOperator:
        self._check_index(j)
        return self._shifts.get(j, self._zero)

    def modulus(self, j: int) -> SparseOperator:
        self._check_index(j)
        return SparseOperator.diagonal(self.radial[:, j - 1])

    def stratum_sums(self, j: int) -> np.ndarray:
        """i_j + .. + i_k per basis vector (j <= k)."""
        return self.basis.indices[:, j - 1:].sum(axis=1)

    def spectral_values(self, j: int) -> np.ndarray:
        """Exact eigenvalue q^{-2(i_j+..+i_k)} a^2 of Q_j per basis vector; 0 for j > k."""
        self._check_index(j)
        if j > self.k:
            return np.zeros(self.dim)
        return q_pow(self.q, -2 * self.stratum_sums(j)) * self.sample_values ** 2

    def Q(self, j: int) -> SparseOperator:
        """Q_j = sum_{m >= j} z_m* z_m as a composition of the built operators."""
        self._check_index(j)
        key = ("Q", j)
        if key not in self._cache:
            total = self._zero
            for m in range(j, min(self.k, self.n) + 1):
                total = total + self.z_star(m) @ self.z(m)
            self._cache[key] = total
        return self._cache[key]

    def nnz(self) -> int:
        return sum(op.nnz for op in self._generators.values())

    def __repr__(self) -> str:
        return f"RepComponent(k={self.k}, builder={self.builder}, dim={self.dim})"


def _validate_component(k: int, truncation: TruncationSpec, q_value: float) -> None:
    if not 0 <= k <= truncation.n:
        raise InvalidParameterError(f"component index k={k} outside 0..{truncation.n}")
    _check_q(q_value, truncation.q_value)


def _empty_component(truncation: TruncationSpec, fiber: FiberSpectrum, builder: str) -> RepComponent:
    basis = LatticeBasis(0, len(fiber), truncation.N, truncation.M)
    return RepComponent(0, truncation, fiber, basis, builder, {}, {}, {}, np.zeros((1, 0)))


def build_component_abstract(k: int, truncation: TruncationSpec, fiber: FiberSpectrum) -> RepComponent:
    """
    Component H_k written directly on labels.

    z_j h = sqrt(q^{-2 i_j} - 1) q^{-(i_{j+1}+..+i_k)} a h'   (j < k, i_j raised)
    z_k h = q^{-i_k} a h'                                      (i_k raised)
    """
    _validate_component(k, truncation, fiber.q_value)
    if k == 0:
        return _empty_component(truncation, fiber, ABSTRACT)
    q = truncation.q_value
    basis = LatticeBasis(k, len(fiber), truncation.N, truncation.M)
    indices = basis.indices
    a = np.asarray(fiber.samples)[basis.samples]

    generators, shifts, moduli = {}, {}, {}
    for j in range(1, k + 1):
        if j < k:
            tail = indices[:, j:].sum(axis=1)
            modulus = np.sqrt(q_pow(q, -2 * indices[:, j - 1]) - 1.0) * q_pow(q, -tail) * a
        else:
            modulus = q_pow(q, -indices[:, k - 1]) * a
        targets = basis.shifted(j)
        generators[j] = _weighted_shift(basis.dim, targets, modulus)
        shifts[j] = _weighted_shift(basis.dim, targets, np.ones(basis.dim))
        moduli[j] = modulus

    coordinates = q_pow(q, -indices).astype(np.float64)
    coordinates[:, k - 1] *= a
    component = RepComponent(k, truncation, fiber, basis, ABSTRACT, generators, shifts, moduli, coordinates)
    logger.debug("Component built", builder=ABSTRACT, k=k, dim=component.dim)
    return component


def build_component_lattice(k: int, truncation: TruncationSpec, measure: MeasureSpec) -> RepComponent:
    """
    Component H_k as an L2 space of an atomic q-invariant measure.

    Atoms are t_j = q^{-i_j} (j < k) and t_k = s q^{p}, p = -M..M, enumerated by
    increasing t_k. z_j acts by (z_j f)(t) = sqrt((q t_j)^2 - 1) t_{j+1}..t_k f(.., q t_j, ..)
    and z_k by (z_k f)(t) = q t_k f(.., q t_k). Orbit weights are constant along
    each orbit, so the normalized-indicator matrices do not depend on them.
    """
    _validate_component(k, truncation, measure.q_value)
    fiber = measure.fiber()
    if k == 0:
        return _empty_component(truncation, fiber, LATTICE)
    q = truncation.q_value
    basis = LatticeBasis(k, len(fiber), truncation.N, truncation.M, descending_last=True)
    s = np.asarray(measure.samples)[basis.samples]
    p = -basis.indices[:, k - 1]

    t = np.empty((basis.dim, k))
    t[:, :k - 1] = q_pow(q, -basis.indices[:, :k - 1])
    t[:, k - 1] = s * q_pow(q, p)

    generators, shifts, moduli = {}, {}, {}
    for j in range(1, k + 1):
        targets = basis.shifted(j)
        keep = targets >= 0
        weights = np.zeros(basis.dim)
        at_target = t[targets[keep]]
        if j < k:
            scaled = q * at_target[:, j - 1]
            weights[keep] = np.sqrt(np.maximum(scaled ** 2 - 1.0, 0.0)) * np.prod(at_target[:, j:], axis=1)
            moduli[j] = np.sqrt(np.maximum(t[:, j - 1] ** 2 - 1.0, 0.0)) * np.prod(t[:, j:], axis=1)
        else:
            weights[keep] = q * at_target[:, k - 1]
            moduli[j] = t[:, k - 1].copy()
        generators[j] = _weighted_shift(basis.dim, targets, weights)
        shifts[j] = _weighted_shift(basis.dim, targets, np.ones(basis.dim))

    component = RepComponent(k, truncation, fiber, basis, LATTICE, generators, shifts, moduli, t)
    logger.debug("Component built", builder=LATTICE, k=k, dim=component.dim)
    return component


def Q_operator(rep: "Representation", j: int) -> SparseOperator:
    """Q_j built by composition; raises RepresentationError if it is not diagonal."""
    Q = rep.Q(j)
    off = Q.off_diagonal_max()
    if off > 0.0:
        raise RepresentationError(f"Q_{j} has off-diagonal entries up to {off:.3e}")
    return Q


def spectral_projection(rep: "Representation", j: int, interval: Tuple[float, float]) -> SparseOperator:
    """1_{(lo, hi]}(Q_j) from the exact spectral values."""
    lo, hi = interval
    values = rep.spectral_values(j)
    return SparseOperator.diagonal(((values > lo) & (values <= hi)).astype(np.float64))


def stratum_intervals(q: float, stratum: Sequence[int], j: int) -> List[Tuple[int, Tuple[float, float]]]:
    """
    Spectral intervals selecting the stratum with indices (i_j, .., i_k) = `stratum`.

    For every m in j..k with sigma_m = i_m + .. + i_k the interval for Q_m is
    (q^{-2 sigma_m + 2}, q^{-2 sigma_m}].
    """
    out = []
    for offset in range(len(stratum)):
        sigma = int(sum(stratum[offset:]))
        lo, hi = q_pow(q, [-2 * sigma + 2, -2 * sigma])
        out.append((j + offset, (float(lo), float(hi))))
    return out


def _stratum_mask(rep: "Representation", stratum: Sequence[int], j: int) -> np.ndarray:
    mask = np.ones(rep.dim, dtype=bool)
    for m, (lo, hi) in stratum_intervals(rep.q, stratum, j):
        values = rep.spectral_values(m)
        mask &= (values > lo) & (values <= hi)
    return mask


def stratum_projection(rep: RepComponent, stratum: Sequence[int], j: int = 1) -> SparseOperator:
    """Product of spectral projections of Q_j..Q_k that selects one stratum of H_k."""
    if len(stratum) != rep.k - j + 1:
        raise DimensionMismatchError(f"stratum needs {rep.k - j + 1} indices, got {len(stratum)}")
    return SparseOperator.diagonal(_stratum_mask(rep, stratum, j).astype(np.float64))


def w_operator(rep: RepComponent, j: int) -> SparseOperator:
    """w_j = sqrt(Q_{j+1})^{-1} z_j, defined on H_k for j < k."""
    rep._check_index(j)
    if j >= rep.k:
        raise DomainError(f"w_{j} needs Q_{j + 1} invertible, which fails on H_{rep.k}")
    inverse_root = SparseOperator.diagonal(1.0 / np.sqrt(rep.spectral_values(j + 1)))
    return inverse_root @ rep.z(j)


def axis_positions(rep: RepComponent, j: int, anchor: int) -> np.ndarray:
    """Positions along axis j (ascending i_j) through the basis vector at `anchor`."""
    if not 1 <= j <= rep.k:
        raise GeneratorIndexError(f"axis {j} outside 1..{rep.k}")
    indices = rep.basis.indices
    same = rep.basis.samples == rep.basis.samples[anchor]
    for m in range(rep.k):
        if m != j - 1:
            same &= indices[:, m] == indices[anchor, m]
    positions = np.flatnonzero(same)
    return positions[np.argsort(indices[positions, j - 1], kind="stable")]


def apply_polynomial(rep: "Representation", poly: NumericPolynomial) -> SparseOperator:
    """Sum of coefficient * (letter product, left to right) with starred letters as adjoints."""
    if poly.n != rep.n:
        raise DimensionMismatchError(f"polynomial over {poly.n} generators, representation over {rep.n}")
    total = SparseOperator.zeros(rep.dim)
    for word, coefficient in poly.terms:
        operator = SparseOperator.identity(rep.dim)
        for letter in word:
            factor = rep.z_star(letter.index) if letter.starred else rep.z(letter.index)
            operator = operator @ factor
        total = total + operator.scale(coefficient)
    return total


class RepresentationSum:
    """Finite direct sum of truncated components, operators block diagonal."""

    def __init__(self, components: Sequence[RepComponent]):
        if not components:
            raise InvalidParameterError("a direct sum needs at least one component")
        ns = {c.n for c in components}
        if len(ns) != 1:
            raise DimensionMismatchError(f"components disagree on n: {sorted(ns)}")
        self.components = list(components)
        self.n = components[0].n
        self.q = components[0].q
        self.offsets = np.cumsum([0] + [c.dim for c in components])
        self.dim = int(self.offsets[-1])
        self.interior = np.concatenate([c.interior + off for c, off in zip(components, self.offsets)])
        self._cache: Dict[Tuple[str, int], SparseOperator] = {}

    @property
    def label(self) -> Optional[int]:
        return None

    def _blocks(self, name: str, j: int, pick: Callable[[RepComponent], SparseOperator]) -> SparseOperator:
        key = (name, j)
        if key not in self._cache:
            self._cache[key] = block_diag([pick(c) for c in self.components])
        return self._cache[key]

    def z(self, j: int) -> SparseOperator:
        return self._blocks("z", j, lambda c: c.z(j))

    def z_star(self, j: int) -> SparseOperator:
        return self._blocks("z*", j, lambda c: c.z_star(j))

    def Q(self, j: int) -> SparseOperator:
        return self._blocks("Q", j, lambda c: c.Q(j))

    def spectral_values(self, j: int) -> np.ndarray:
        return np.concatenate([c.spectral_values(j) for c in self.components])

    def kernel_positions(self, j: int, tol: Optional[float] = None) -> np.ndarray:
        """Interior basis vectors the composed Q_j annihilates, |Q_j h| <= tol."""
        tol = settings.vanishing_tol if tol is None else tol
        diagonal = np.abs(self.Q(j).diagonal_values())
        return self.interior[diagonal[self.interior] <= tol]

    def block_of(self, position: int) -> RepComponent:
        return self.components[int(np.searchsorted(self.offsets, position, side="right")) - 1]


Representation = Union[RepComponent, RepresentationSum]


def _record(suite: str, relation: str, component: Optional[int], residual: float,
            interior_size: int, tolerance: float) -> ReportRecord:
    return ReportRecord(
        suite=suite,
        relation=relation,
        component=component,
        max_residual=residual,
        interior_size=interior_size,
        tolerance=tolerance,
        passed=residual <= tolerance,
    )


def verify_relations(rep: Representation, tolerance: Optional[float] = None) -> RelationReport:
    """
    Check the defining relations on the interior of a component or direct sum.

    Families (one record each, maximum over all index choices):
        commute.zz      z_j z_i - q z_i z_j                      j > i
        commute.zz*     z_j z_i* - q z_i* z_j                    j != i
        commute.z*z*    z_i* z_j* - q z_j* z_i*                  i < j
        qhyperbolic     z_i z_i* - q^2 z_i* z_i + (1-q^2) Q_{i+1}   i < n
        qnormal         z_n z_n* - q^2 z_n* z_n
        fQ.commute      f(Q_k) z_j - z_j f(Q_k), same for z_j*      j < k
        fQ.scale        f(Q_k) z_j - z_j f(q^-2 Q_k), f(Q_k) z_j* - z_j* f(q^2 Q_k)   j >= k
        Q.commute       Q_j Q_l - Q_l Q_j
    """
    tolerance = settings.tolerance if tolerance is None else tolerance
    q, n, columns = rep.q, rep.n, rep.interior
    z = {j: rep.z(j) for j in range(1, n + 1)}
    zs = {j: rep.z_star(j) for j in range(1, n + 1)}
    residuals: Dict[str, float] = defaultdict(float)

    def check(name: str, terms) -> None:
        residuals[name] = max(residuals[name], combination_residual(terms, columns))

    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            check("commute.zz", [(1, z[j] @ z[i]), (-q, z[i] @ z[j])])
            check("commute.z*z*", [(1, zs[i] @ zs[j]), (-q, zs[j] @ zs[i])])
        for j in range(1, n + 1):
            if j != i:
                check("commute.zz*", [(1, z[j] @ zs[i]), (-q, zs[i] @ z[j])])
    for i in range(1, n):
        check("qhyperbolic", [(1, z[i] @ zs[i]), (-q * q, zs[i] @ z[i]), (1 - q * q, rep.Q(i + 1))])
    check("qnormal", [(1, z[n] @ zs[n]), (-q * q, zs[n] @ z[n])])

    for k in range(1, n + 1):
        values = rep.spectral_values(k)
        for f in SPECTRAL_FUNCTIONS.values():
            fQ = SparseOperator.diagonal(f(values))
            fQ_down = SparseOperator.diagonal(f(values / (q * q)))
            fQ_up = SparseOperator.diagonal(f(values * q * q))
            for j in range(1, n + 1):
                if j < k:
                    check("fQ.commute", [(1, fQ @ z[j]), (-1, z[j] @ fQ)])
                    check("fQ.commute", [(1, fQ @ zs[j]), (-1, zs[j] @ fQ)])
                else:
                    check("fQ.scale", [(1, fQ @ z[j]), (-1, z[j] @ fQ_down)])
                    check("fQ.scale", [(1, fQ @ zs[j]), (-1, zs[j] @ fQ_up)])
    for j in range(1, n + 1):
        for l in range(j + 1, n + 1):
            check("Q.commute", [(1, rep.Q(j) @ rep.Q(l)), (-1, rep.Q(l) @ rep.Q(j))])

    records = [
        _record("relations", name, rep.label, value, len(columns), tolerance)
        for name, value in sorted(residuals.items())
    ]
    report = RelationReport(component=rep.label, records=records)
    logger.info("Relations verified", component=rep.label, dim=rep.dim,
                interior=len(columns), passed=report.passed, worst=report.worst())
    return report


def verify_spectrum(rep: RepComponent, rtol: Optional[float] = None) -> RelationReport:
    """
    Check that every Q_j is diagonal with the predicted eigenvalues and that the
    stratum projections select exactly the predicted basis vectors.
    """
    rtol = settings.spectrum_rtol if rtol is None else rtol
    columns = rep.interior
    off_diagonal = diagonal_error = block_excess = 0.0
    mismatches = 0
    for j in range(1, rep.n + 1):
        Q = rep.Q(j)
        off_diagonal = max(off_diagonal, Q.off_diagonal_max())
        if columns.size:
            expected = rep.spectral_values(j)[columns]
            got = Q.diagonal_values().real[columns]
            diagonal_error = max(diagonal_error, float(np.max(np.abs(got - expected) / np.maximum(1.0, expected))))
        if j > rep.k or not columns.size:
            continue

        values = {m: rep.spectral_values(m)[columns] for m in range(j, rep.k + 1)}
        labels = rep.basis.indices[columns, j - 1:]
        for stratum in np.unique(labels, axis=0):
            predicted = (labels == stratum).all(axis=1)
            selected = np.ones(columns.size, dtype=bool)
            intervals = stratum_intervals(rep.q, stratum, j)
            for m, (lo, hi) in intervals:
                selected &= (values[m] > lo) & (values[m] <= hi)
            mismatches += int(np.count_nonzero(selected != predicted))

            lo, hi = intervals[0][1]
            eigenvalues = hermitian_spectrum(Q.restrict(columns[predicted]))
            excess = np.maximum(eigenvalues / hi - 1.0, 1.0 - eigenvalues / lo)
            block_excess = max(block_excess, float(np.max(excess, initial=0.0)))

    label, size = rep.label, len(columns)
    records = [
        _record("spectrum", "Q.offdiagonal", label, off_diagonal, size, rtol),
        _record("spectrum", "Q.eigenvalues", label, diagonal_error, size, rtol),
        _record("spectrum", "Q.strata", label, float(mismatches), size, rtol),
        _record("spectrum", "Q.block_spectrum", label, block_excess, size, rtol),
    ]
    return RelationReport(component=label, records=records)


def verify_auxiliary(rep: RepComponent, tolerance: Optional[float] = None) -> RelationReport:
    """
    Check the polar decomposition z_j = S_j |z_j| and the operators w_j (j < k):
    w_j is q-hyperbolic, sqrt(Q_{j+1})^{-1} commutes with z_j, and w_j restricted
    to one axis equals the q-hyperbolic model operator.
    """
    tolerance = settings.tolerance if tolerance is None else tolerance
    q, columns = rep.q, rep.interior
    identity = SparseOperator.identity(rep.dim)
    residuals: Dict[str, float] = defaultdict(float)

    for j in range(1, rep.n + 1):
        polar = combination_residual([(1, rep.z(j)), (-1, rep.shift(j) @ rep.modulus(j))], np.arange(rep.dim))
        residuals["polar"] = max(residuals["polar"], polar)
    model = build_qhyp(rep.truncation.N, q)
    model_scale = max(1.0, model.max_abs())
    for j in range(1, rep.k):
        w = w_operator(rep, j)
        w_star = w.adjoint()
        residuals["w.qhyperbolic"] = max(residuals["w.qhyperbolic"], combination_residual(
            [(1, w @ w_star), (-q * q, w_star @ w), (1 - q * q, identity)], columns))
        inverse_root = SparseOperator.diagonal(1.0 / np.sqrt(rep.spectral_values(j + 1)))
        residuals["w.commute"] = max(residuals["w.commute"], combination_residual(
            [(1, inverse_root @ rep.z(j)), (-1, rep.z(j) @ inverse_root)], columns))
        anchors = columns[np.linspace(0, columns.size - 1, num=min(8, columns.size)).astype(int)] if columns.size else []
        for anchor in anchors:
            block = w.restrict(axis_positions(rep, j, int(anchor)))
            deviation = (block - model).max_abs() / model_scale
            residuals["w.slice"] = max(residuals["w.slice"], deviation)

    records = [
        _record("auxiliary", name, rep.label, value, len(columns), tolerance)
        for name, value in sorted(residuals.items())
    ]
    return RelationReport(component=rep.label, records=records)


def builder_deviation(first: RepComponent, second: RepComponent) -> float:
    """
    Largest relative entry difference between two builds of the same component
    once the first basis is permuted onto the second. Covers z_j, S_j, |z_j|
    and the lattice coordinates.
    """
    if (first.k, first.n, first.dim) != (second.k, second.n, second.dim):
        raise DimensionMismatchError(f"cannot compare {first!r} with {second!r}")
    perm = first.basis.permutation_to(second.basis)
    worst = 0.0
    for j in range(1, first.n + 1):
        for pick in (RepComponent.z, RepComponent.shift, RepComponent.modulus):
            target = pick(second, j)
            moved = pick(first, j).permuted(perm)
            worst = max(worst, (moved - target).max_abs() / max(1.0, target.max_abs()))
    if first.k:
        moved = np.empty_like(first.coordinates)
        moved[perm] = first.coordinates
        scale = max(1.0, float(np.max(np.abs(second.coordinates))))
        worst = max(worst, float(np.max(np.abs(moved - second.coordinates))) / scale)
    return worst


def compare_builders(k: int, truncation: TruncationSpec, measure: MeasureSpec,
                     tolerance: Optional[float] = None) -> ReportRecord:
    """Build H_k both ways and report their deviation."""
    tolerance = settings.equivalence_tol if tolerance is None else tolerance
    abstract = build_component_abstract(k, truncation, measure.fiber())
    lattice = build_component_lattice(k, truncation, measure)
    deviation = builder_deviation(abstract, lattice)
    logger.info("Builders compared", k=k, dim=abstract.dim, deviation=deviation)
    return _record("equivalence", "builders", k, deviation, abstract.dim, tolerance)
