"""
Generator calculus of the C*-algebra of the quantum complex plane.

Functions on R_+^n are sympy expressions over the radial coordinates r1..rn
(generator terms) or the lattice coordinates t1..tn of the last component
(crossed symbols), together with the symbol q. Indicator functions of single
points q^{-m} and of the half lattice {q^{-m}: m >= lo} are sympy functions
that absorb q-power factors of their argument, so shifting a coordinate by
q^a keeps them in canonical form.

A generator term f * S_1^{#l_1} .. S_n^{#l_n} is represented on the component
H_k as diag(f(|z_1|, .., |z_n|)) composed with powers of the phase operators,
where S^{#m} means S^m for m >= 0 and (S*)^{-m} otherwise.
"""
import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from tokenize import TokenError
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from app.config import get_settings
from app.models.config_models import FiberSpectrum, TruncationSpec
from app.models.report_models import NormRow, SeparationReport
from app.services.opkernel import SparseOperator, block_diag, operator_norm_lb
from app.services.qrep import RepComponent, build_component_abstract
from app.utils.errors import (
    DimensionMismatchError,
    ExpressionSyntaxError,
    GeneratorIndexError,
    InvalidParameterError,
    NotC0Error,
    ReportIOError,
    VanishingConditionError,
)

logger = structlog.get_logger()
settings = get_settings()

RADIAL = "radial"
LATTICE = "lattice"

Q = sympy.Symbol("q", positive=True)
MultiIndex = Tuple[int, ...]


def _chi_point(x, m, q):
    return np.isclose(x, np.power(float(q), -float(m)), rtol=1e-9, atol=0.0).astype(np.float64)


def _chi_lattice(x, lo, q):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        level = np.log(x) / -np.log(float(q))
    nearest = np.round(level)
    on_lattice = (x > 0) & (np.abs(level - nearest) <= 1e-9 * np.maximum(1.0, np.abs(level)))
    return (on_lattice & (nearest >= lo)).astype(np.float64)


def _pos_part(x):
    return np.maximum(x, 0.0)


def _positive_indicator(x):
    return (np.asarray(x) > 0).astype(np.float64)


class ChiPoint(sympy.Function):
    """Indicator of the point x = q^{-m}; chi(q^c x, m) is rewritten to chi(x, m + c)."""

    nargs = 3
    _imp_ = staticmethod(_chi_point)

    @classmethod
    def eval(cls, x, m, q):
        if x.is_zero:
            return sympy.S.Zero
        base, exponent = x.as_coeff_exponent(q)
        if exponent != 0 and exponent.is_Integer and base != 0:
            return cls(base, m + exponent, q)
        return None

    def _eval_power(self, exponent):
        if exponent.is_Integer and exponent > 0:
            return self
        return None

    def _eval_is_real(self):
        return True


class ChiLattice(sympy.Function):
    """Indicator of {q^{-m}: m >= lo}; chi(q^c x, lo) is rewritten to chi(x, lo + c)."""

    nargs = 3
    _imp_ = staticmethod(_chi_lattice)

    @classmethod
    def eval(cls, x, lo, q):
        if x.is_zero:
            return sympy.S.Zero
        base, exponent = x.as_coeff_exponent(q)
        if exponent != 0 and exponent.is_Integer and base != 0:
            return cls(base, lo + exponent, q)
        return None

    def _eval_power(self, exponent):
        if exponent.is_Integer and exponent > 0:
            return self
        return None

    def _eval_is_real(self):
        return True


class PosPart(sympy.Function):
    """max(x, 0)."""

    nargs = 1
    _imp_ = staticmethod(_pos_part)

    @classmethod
    def eval(cls, x):
        if x.is_extended_nonnegative:
            return x
        if x.is_extended_negative:
            return sympy.S.Zero
        return None


class PositiveIndicator(sympy.Function):
    """1 where x > 0, else 0."""

    nargs = 1
    _imp_ = staticmethod(_positive_indicator)

    @classmethod
    def eval(cls, x):
        if x.is_zero:
            return sympy.S.Zero
        if x.is_number and x.is_positive:
            return sympy.S.One
        return None


_NUMERIC = {
    "ChiPoint": _chi_point,
    "ChiLattice": _chi_lattice,
    "PosPart": _pos_part,
    "PositiveIndicator": _positive_indicator,
}


@lru_cache(maxsize=None)
def coordinate_symbols(n: int, kind: str = RADIAL) -> Tuple[sympy.Symbol, ...]:
    if kind == RADIAL:
        return tuple(sympy.Symbol(f"r{j}", nonnegative=True) for j in range(1, n + 1))
    if kind == LATTICE:
        return tuple(sympy.Symbol(f"t{j}", positive=True) for j in range(1, n + 1))
    raise InvalidParameterError(f"unknown coordinate kind {kind!r}")


@lru_cache(maxsize=4096)
def _compile(expr: sympy.Expr, symbols: Tuple[sympy.Symbol, ...]):
    return sympy.lambdify(symbols + (Q,), expr, modules=[_NUMERIC, "numpy"])


def _reduce_indicators(term: sympy.Expr) -> sympy.Expr:
    """Collapse products of indicators acting on the same argument."""
    points: Dict[sympy.Expr, set] = defaultdict(set)
    lowers: Dict[sympy.Expr, list] = defaultdict(list)
    q_args: Dict[sympy.Expr, sympy.Expr] = {}
    others = []
    for factor in sympy.Mul.make_args(term):
        base, _ = factor.as_base_exp()
        if isinstance(base, ChiPoint):
            points[base.args[0]].add(base.args[1])
            q_args[base.args[0]] = base.args[2]
        elif isinstance(base, ChiLattice):
            lowers[base.args[0]].append(base.args[1])
            q_args[base.args[0]] = base.args[2]
        else:
            others.append(factor)
    for x in set(points) | set(lowers):
        found = points.get(x, set())
        if len(found) > 1:
            return sympy.S.Zero
        if found:
            (m,) = found
            if any(lo > m for lo in lowers.get(x, [])):
                return sympy.S.Zero
            others.append(ChiPoint(x, m, q_args[x]))
        else:
            others.append(ChiLattice(x, max(lowers[x]), q_args[x]))
    return sympy.Mul(*others)


def canonicalize(expr: sympy.Expr) -> sympy.Expr:
    expanded = sympy.expand(expr)
    return sympy.Add(*[_reduce_indicators(term) for term in sympy.Add.make_args(expanded)])


@dataclass(frozen=True)
class FunctionExpr:
    """Real function of n radial or lattice coordinates (and q)."""

    expr: sympy.Expr
    n: int
    kind: str = RADIAL

    def __post_init__(self):
        object.__setattr__(self, "expr", sympy.sympify(self.expr))
        allowed = set(coordinate_symbols(self.n, self.kind)) | {Q}
        unknown = self.expr.free_symbols - allowed
        if unknown:
            names = ", ".join(sorted(str(s) for s in unknown))
            raise GeneratorIndexError(f"unknown symbols {names} for n={self.n} ({self.kind} coordinates)")

    @classmethod
    def constant(cls, value, n: int, kind: str = RADIAL) -> "FunctionExpr":
        return cls(sympy.sympify(value), n, kind)

    @property
    def symbols(self) -> Tuple[sympy.Symbol, ...]:
        return coordinate_symbols(self.n, self.kind)

    def _same(self, other: "FunctionExpr") -> None:
        if (self.n, self.kind) != (other.n, other.kind):
            raise DimensionMismatchError(
                f"cannot combine {self.kind} functions of {self.n} and {other.kind} functions of {other.n} variables")

    def __add__(self, other: "FunctionExpr") -> "FunctionExpr":
        self._same(other)
        return FunctionExpr(self.expr + other.expr, self.n, self.kind)

    def __sub__(self, other: "FunctionExpr") -> "FunctionExpr":
        self._same(other)
        return FunctionExpr(self.expr - other.expr, self.n, self.kind)

    def __mul__(self, other: Union["FunctionExpr", int, float]) -> "FunctionExpr":
        if isinstance(other, FunctionExpr):
            self._same(other)
            return FunctionExpr(self.expr * other.expr, self.n, self.kind)
        return FunctionExpr(self.expr * sympy.sympify(other), self.n, self.kind)

    __rmul__ = __mul__

    def __neg__(self) -> "FunctionExpr":
        return FunctionExpr(-self.expr, self.n, self.kind)

    def substitute(self, mapping: Mapping[sympy.Symbol, sympy.Expr], kind: Optional[str] = None) -> "FunctionExpr":
        """Simultaneous substitution; `kind` switches the coordinate system of the result."""
        return FunctionExpr(self.expr.xreplace(dict(mapping)), self.n, kind or self.kind)

    def sigma(self, shift: Sequence[int]) -> "FunctionExpr":
        """t_j -> q^{a_j} t_j for every j (lattice functions)."""
        mapping = {t: Q ** a * t for t, a in zip(self.symbols, shift) if a}
        return self.substitute(mapping) if mapping else self

    def canonical(self) -> "FunctionExpr":
        return FunctionExpr(canonicalize(self.expr), self.n, self.kind)

    def is_zero(self) -> bool:
        return canonicalize(self.expr) == 0

    def evaluate(self, points: np.ndarray, q: float) -> np.ndarray:
        """
        Evaluate at the rows of `points`.

        Args:
            points: array (m, n'); columns beyond n' are treated as zero
            q: numeric deformation parameter

        Returns:
            np.ndarray: m real values
        """
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[None, :]
        if points.shape[1] < self.n:
            points = np.hstack([points, np.zeros((points.shape[0], self.n - points.shape[1]))])
        compiled = _compile(self.expr, self.symbols)
        with np.errstate(all="ignore"):
            values = compiled(*points[:, :self.n].T, float(q))
        return np.broadcast_to(np.asarray(values, dtype=np.float64), (points.shape[0],)).copy()

    def __str__(self) -> str:
        return str(self.expr)


def radial_transport(n: int, j: int, m: int) -> Dict[sympy.Symbol, sympy.Expr]:
    """
    Radial coordinates at the source of S_j^{#m} in terms of those at the target.

    r_i -> q^m r_i (i < j), r_j -> sqrt(q^{2m} r_j^2 + (q^{2m} - 1) sum_{i>j} r_i^2),
    r_i unchanged for i > j.
    """
    r = coordinate_symbols(n, RADIAL)
    tail = sum((r[i] ** 2 for i in range(j, n)), sympy.S.Zero)
    mapping = {r[i]: Q ** m * r[i] for i in range(j - 1)}
    mapping[r[j - 1]] = sympy.sqrt(PosPart(Q ** (2 * m) * r[j - 1] ** 2 + (Q ** (2 * m) - 1) * tail))
    return mapping


@lru_cache(maxsize=None)
def lattice_radial(n: int) -> Dict[sympy.Symbol, sympy.Expr]:
    """|z_j| on the last component in lattice coordinates."""
    r = coordinate_symbols(n, RADIAL)
    t = coordinate_symbols(n, LATTICE)
    mapping = {}
    for j in range(n - 1):
        tail = sympy.Mul(*t[j + 1:])
        mapping[r[j]] = ChiLattice(t[j], 1, Q) * sympy.sqrt(PosPart(t[j] ** 2 - 1)) * tail
    mapping[r[n - 1]] = t[n - 1]
    return mapping


@dataclass(frozen=True)
class GeneratorTerm:
    """f(|z_1|, .., |z_n|) S_1^{#l_1} .. S_n^{#l_n}."""

    term_id: str
    f: FunctionExpr
    l: MultiIndex

    def __post_init__(self):
        object.__setattr__(self, "l", tuple(int(v) for v in self.l))
        if len(self.l) != self.f.n:
            raise DimensionMismatchError(f"term {self.term_id}: {len(self.l)} shift exponents for n={self.f.n}")
        if self.f.kind != RADIAL:
            raise InvalidParameterError(f"term {self.term_id}: generator functions use radial coordinates")

    @property
    def n(self) -> int:
        return self.f.n

    def star(self) -> "GeneratorTerm":
        """Adjoint term: f transported through the inverse shifts, gated at r_j = 0 for l_j != 0."""
        expr = self.f.expr
        for j in range(self.n, 0, -1):
            if self.l[j - 1]:
                expr = expr.xreplace(radial_transport(self.n, j, -self.l[j - 1]))
        r = coordinate_symbols(self.n, RADIAL)
        for j, lj in enumerate(self.l):
            if lj:
                expr = expr * PositiveIndicator(r[j])
        return GeneratorTerm(f"{self.term_id}*", FunctionExpr(expr, self.n), tuple(-v for v in self.l))


def _radial_grid(radius: float, per_axis: int) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-3, radius, per_axis - 1)])


def _grid_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    if not axes:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def check_radius(q: float, M: int) -> float:
    return float(q) ** -(M + 4)


def check_vanishing(term: GeneratorTerm, q: float, radius: float,
                    extra_points: Optional[np.ndarray] = None, tol: Optional[float] = None) -> None:
    """
    Sampled check that f vanishes on {r_j = 0} for every j with l_j != 0.

    Points: r_j = 0 times a grid [0] + geomspace(1e-3, radius) on the other axes
    (64 points per axis, fewer when n is large), plus `extra_points` with column j
    set to zero. Raises VanishingConditionError on the first violation.
    """
    tol = settings.vanishing_tol if tol is None else tol
    n = term.n
    per_axis = settings.vanishing_grid_points
    if n > 3:
        per_axis = max(4, int(round(per_axis ** (2.0 / (n - 1)))))
    grid = _radial_grid(radius, per_axis)
    for j, lj in enumerate(term.l):
        if not lj:
            continue
        points = _grid_points([grid] * (n - 1))
        points = np.insert(points, j, 0.0, axis=1)
        if extra_points is not None and len(extra_points):
            extra = np.array(extra_points, dtype=np.float64, copy=True)
            extra[:, j] = 0.0
            points = np.vstack([points, extra])
        values = np.abs(term.f.evaluate(points, q))
        worst = float(np.nanmax(values)) if values.size else 0.0
        if not worst <= tol:
            where = points[int(np.nanargmax(values))]
            logger.warning("Vanishing condition violated", term=term.term_id, axis=j + 1, value=worst)
            raise VanishingConditionError(
                f"term {term.term_id}: f = {worst:.3e} at r = {where.tolist()} although l_{j + 1} = {lj}")


def check_c0(term: GeneratorTerm, q: float, radius: float, tol: Optional[float] = None) -> float:
    """
    Spot check of decay at infinity: one coordinate at `radius`, the others on a
    coarse grid. Returns the largest |f| seen; raises NotC0Error above tol.
    """
    tol = settings.c0_tol if tol is None else tol
    n = term.n
    coarse = np.array([0.0, 1e-3, 1.0, np.sqrt(radius), radius])
    rows = []
    for j in range(n):
        points = _grid_points([coarse] * (n - 1))
        rows.append(np.insert(points, j, radius, axis=1))
    values = np.abs(term.f.evaluate(np.vstack(rows), q))
    worst = float(np.nanmax(values)) if np.isfinite(values).any() else float("inf")
    if np.isnan(values).any() or worst > tol:
        raise NotC0Error(f"term {term.term_id}: |f| = {worst:.3e} at radius {radius:.3e}")
    return worst


def pi_k(term: GeneratorTerm, rep: RepComponent, check: bool = True) -> SparseOperator:
    """
    pi_k(f S^{#l}) = diag(f(radial)) S_1^{#l_1} .. S_n^{#l_n} on one component.

    On H_0 this is f(0, .., 0) for l = 0 and zero otherwise; S_j vanishes for j > k.
    """
    if term.n != rep.n:
        raise DimensionMismatchError(f"term over n={term.n}, component over n={rep.n}")
    if check:
        check_vanishing(term, rep.q, check_radius(rep.q, rep.truncation.M), extra_points=rep.radial)
    operator = SparseOperator.diagonal(term.f.evaluate(rep.radial, rep.q))
    for j, lj in enumerate(term.l, start=1):
        if lj:
            operator = operator @ rep.shift(j).power(lj)
    return operator


def represent(terms: Sequence[GeneratorTerm], reps: Sequence[RepComponent], check: bool = True) -> SparseOperator:
    """Block-diagonal image of the sum of `terms` under pi_0 + .. + pi_n."""
    if not terms:
        raise InvalidParameterError("nothing to represent")
    blocks = []
    for rep in reps:
        total = SparseOperator.zeros(rep.dim)
        for term in terms:
            total = total + pi_k(term, rep, check=check)
        blocks.append(total)
    return block_diag(blocks)


@dataclass(frozen=True)
class CrossedSymbol:
    """Finite sum of g_m(t) S^{#m} over the last component; one entry per multi-index m."""

    n: int
    terms: Tuple[Tuple[MultiIndex, FunctionExpr], ...] = field(default_factory=tuple)

    @classmethod
    def build(cls, n: int, pieces: Iterable[Tuple[Sequence[int], Union[FunctionExpr, sympy.Expr]]]) -> "CrossedSymbol":
        merged: Dict[MultiIndex, sympy.Expr] = defaultdict(lambda: sympy.S.Zero)
        for m, g in pieces:
            m = tuple(int(v) for v in m)
            if len(m) != n:
                raise DimensionMismatchError(f"multi-index {m} has the wrong length for n={n}")
            merged[m] = merged[m] + (g.expr if isinstance(g, FunctionExpr) else sympy.sympify(g))
        terms = tuple(
            (m, FunctionExpr(expr, n, LATTICE))
            for m, expr in sorted(merged.items())
            if expr != 0
        )
        return cls(n, terms)

    @classmethod
    def one(cls, n: int) -> "CrossedSymbol":
        return cls.build(n, [((0,) * n, sympy.S.One)])

    @classmethod
    def shift(cls, n: int, j: int, power: int = 1) -> "CrossedSymbol":
        if not 1 <= j <= n:
            raise GeneratorIndexError(f"shift index {j} outside 1..{n}")
        m = [0] * n
        m[j - 1] = power
        return cls.build(n, [(m, sympy.S.One)])

    @classmethod
    def function(cls, g: Union[FunctionExpr, sympy.Expr], n: int) -> "CrossedSymbol":
        return cls.build(n, [((0,) * n, g)])

    def __iter__(self) -> Iterator[Tuple[MultiIndex, FunctionExpr]]:
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: "CrossedSymbol") -> "CrossedSymbol":
        self._same(other)
        return CrossedSymbol.build(self.n, list(self.terms) + list(other.terms))

    def __sub__(self, other: "CrossedSymbol") -> "CrossedSymbol":
        return self + other.scale(-1)

    def __mul__(self, other: "CrossedSymbol") -> "CrossedSymbol":
        return symbol_multiply(self, other)

    def scale(self, factor) -> "CrossedSymbol":
        return CrossedSymbol.build(self.n, [(m, g * factor) for m, g in self.terms])

    def _same(self, other: "CrossedSymbol") -> None:
        if self.n != other.n:
            raise DimensionMismatchError(f"symbols over n={self.n} and n={other.n}")

    def star(self) -> "CrossedSymbol":
        return symbol_star(self)

    def canonical(self) -> "CrossedSymbol":
        return CrossedSymbol.build(self.n, [(m, g.canonical()) for m, g in self.terms])

    def support(self) -> int:
        """Largest coordinate index the symbol depends on or shifts."""
        used = 0
        for m, g in self.terms:
            used = max([used] + [j + 1 for j, v in enumerate(m) if v])
            for j, t in enumerate(g.symbols, start=1):
                if t in g.expr.free_symbols:
                    used = max(used, j)
        return used

    def equals(self, other: "CrossedSymbol", q: Optional[float] = None, tol: float = 1e-12) -> bool:
        """Symbolic equality of canonical forms, falling back to evaluation at lattice points."""
        self._same(other)
        difference = (self - other).canonical()
        if not len(difference):
            return True
        if q is None:
            return False
        points = _lattice_sample(self.n, q)
        for _, g in difference:
            if np.nanmax(np.abs(g.evaluate(points, q))) > tol:
                return False
        return True

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(f"({g})*S^{list(m)}" for m, g in self.terms)


def _lattice_sample(n: int, q: float, depth: int = 6) -> np.ndarray:
    axes = [q ** -np.arange(1, depth + 1, dtype=np.float64)] * (n - 1)
    axes.append(np.concatenate([s * q ** np.arange(-depth, depth + 1, dtype=np.float64) for s in settings.default_samples]))
    return _grid_points(axes)


def _defect(n: int, j: int, left: int, right: int) -> sympy.Expr:
    """S_j^{#left} S_j^{#right} = defect * S_j^{#(left+right)} on the last component."""
    if j == n or left <= 0 or right >= 0:
        return sympy.S.One
    t = coordinate_symbols(n, LATTICE)[j - 1]
    gamma = min(left, -right)
    return 1 - sum(ChiPoint(t, left - r, Q) for r in range(gamma))


def symbol_multiply(x: CrossedSymbol, y: CrossedSymbol) -> CrossedSymbol:
    """
    Normal-form product: (g S^{#a})(h S^{#b}) = g sigma^a(h) prod_j c_j S^{#(a+b)}.

    c_j = 1 - sum_{r<gamma} chi_{q^{-(a_j - r)}}(t_j) when a_j > 0 > b_j on a
    unilateral coordinate (gamma = min(a_j, -b_j)), and 1 otherwise.
    """
    x._same(y)
    n = x.n
    pieces = []
    for a, g in x.terms:
        for b, h in y.terms:
            factor = g.expr * h.sigma(a).expr
            for j in range(1, n + 1):
                factor = factor * _defect(n, j, a[j - 1], b[j - 1])
            pieces.append((tuple(u + v for u, v in zip(a, b)), factor))
    return CrossedSymbol.build(n, pieces)


def symbol_star(x: CrossedSymbol) -> CrossedSymbol:
    """(g S^{#m})* = sigma^{-m}(g) S^{#(-m)}."""
    return CrossedSymbol.build(x.n, [(tuple(-v for v in m), g.sigma([-v for v in m])) for m, g in x.terms])


def term_to_symbol(term: GeneratorTerm) -> CrossedSymbol:
    """pi_n of a generator term written as a crossed symbol in lattice coordinates."""
    g = term.f.substitute(lattice_radial(term.n), kind=LATTICE)
    return CrossedSymbol.build(term.n, [(term.l, g)])


def symbol_operator(x: CrossedSymbol, rep: RepComponent) -> SparseOperator:
    """sum_m diag(g_m(t)) S^{#m} on a component whose coordinates cover the symbol's support."""
    if x.n != rep.n:
        raise DimensionMismatchError(f"symbol over n={x.n}, component over n={rep.n}")
    if x.support() > rep.k:
        raise GeneratorIndexError(f"symbol uses coordinates up to {x.support()}, component has k={rep.k}")
    total = SparseOperator.zeros(rep.dim)
    for m, g in x.terms:
        operator = SparseOperator.diagonal(g.evaluate(rep.coordinates, rep.q))
        for j, mj in enumerate(m, start=1):
            if mj:
                operator = operator @ rep.shift(j).power(mj)
        total = total + operator
    return total


def _product_deviation(x: CrossedSymbol, y: CrossedSymbol, rep: RepComponent) -> float:
    reduced = symbol_operator(symbol_multiply(x, y), rep)
    composed = symbol_operator(x, rep) @ symbol_operator(y, rep)
    rows = rep.interior
    if not rows.size:
        return 0.0
    difference = (reduced - composed).matrix[rows]
    scale = max(1.0, composed.max_abs())
    return float(abs(difference).max()) / scale if difference.nnz else 0.0


def symbol_vs_matrix(x: CrossedSymbol, y: CrossedSymbol, rep: RepComponent) -> float:
    """Interior-row deviation of pi_n(xy) from pi_n(x) pi_n(y) on the last component."""
    if rep.k != rep.n:
        raise InvalidParameterError(f"the symbol calculus lives on H_{rep.n}, got H_{rep.k}")
    return _product_deviation(x, y, rep)


def component_multiplicativity_defect(x: CrossedSymbol, y: CrossedSymbol, rep: RepComponent) -> float:
    """
    Same deviation on a component H_k, k <= n, for symbols supported on coordinates <= k.

    For k < n the shift S_k is unitary on H_k, so the defect indicator of a
    mixed S_k S_k* product fires exactly at atoms t_k = q^{-1}, which exist only
    when some fiber sample equals 1.
    """
    deviation = _product_deviation(x, y, rep)
    logger.debug("Component multiplicativity", k=rep.k, deviation=deviation)
    return deviation


def random_symbol(n: int, rng: np.random.Generator, max_shift: int = 2, n_terms: int = 2,
                  coordinates: Optional[int] = None) -> CrossedSymbol:
    """Seeded random symbol; shifts and functions use coordinates 1..`coordinates` (default n)."""
    used = n if coordinates is None else coordinates
    t = coordinate_symbols(n, LATTICE)
    pieces = []
    for _ in range(n_terms):
        m = [0] * n
        for j in range(used):
            m[j] = int(rng.integers(-max_shift, max_shift + 1))
        j = int(rng.integers(0, used))
        library = [sympy.S.One, sympy.exp(-t[j]), t[j] * sympy.exp(-t[j])]
        if j < n - 1:
            library.append(ChiPoint(t[j], int(rng.integers(1, 4)), Q))
        g = library[int(rng.integers(0, len(library)))]
        coefficient = sympy.Rational(int(rng.integers(1, 8)) * (1 if rng.random() < 0.5 else -1), 4)
        pieces.append((m, coefficient * g))
    return CrossedSymbol.build(n, pieces)


def random_generator_term(n: int, rng: np.random.Generator, term_id: str) -> GeneratorTerm:
    """Seeded random C0 term: a polynomial factor vanishing where required, times exp(-c sum r)."""
    r = coordinate_symbols(n, RADIAL)
    l = tuple(int(v) for v in rng.integers(-1, 2, size=n))
    decay = sympy.Rational(int(rng.integers(1, 3)), 2)
    expr = sympy.exp(-decay * sum(r)) * (int(rng.integers(1, 4)) + int(rng.integers(0, 3)) * r[int(rng.integers(0, n))])
    for j, lj in enumerate(l):
        if lj:
            expr = expr * r[j]
    return GeneratorTerm(term_id, FunctionExpr(expr, n), l)


def _sweep_is_increasing(sweep: Sequence[TruncationSpec]) -> bool:
    sizes = [(t.N, t.M) for t in sweep]
    return all(a[0] <= b[0] and a[1] <= b[1] and a != b for a, b in zip(sizes, sizes[1:]))


def norm_estimate(
    terms: Sequence[GeneratorTerm],
    fiber: FiberSpectrum,
    sweep: Sequence[TruncationSpec],
    iterations: Optional[int] = None,
    seed: Optional[int] = None,
) -> List[NormRow]:
    """
    Lower bounds for the operator norm of every term, per component and for the
    whole direct sum, along a sweep of growing truncations.

    Truncations are nested compressions, so every bound stays valid for later
    entries; `norm_lb` is the running maximum and `raw_lb` the bound of the
    truncation alone. Diagonal operators report the exact max |entry|.
    """
    if not sweep:
        raise InvalidParameterError("empty truncation sweep")
    if not _sweep_is_increasing(sweep):
        raise InvalidParameterError("sweep must grow strictly in size")
    seed = settings.seed if seed is None else seed
    n = sweep[0].n
    for term in terms:
        if term.n != n:
            raise DimensionMismatchError(f"term {term.term_id} over n={term.n}, sweep over n={n}")
        check_c0(term, fiber.q_value, check_radius(fiber.q_value, sweep[-1].M))

    running: Dict[Tuple[str, Optional[int]], float] = defaultdict(float)
    rows: List[NormRow] = []
    for truncation in sweep:
        reps = [build_component_abstract(k, truncation, fiber) for k in range(n + 1)]
        for term in terms:
            block_bounds = []
            for rep in reps:
                raw = operator_norm_lb(pi_k(term, rep), iterations=iterations, seed=seed)
                block_bounds.append(raw)
                running[(term.term_id, rep.k)] = max(running[(term.term_id, rep.k)], raw)
                rows.append(NormRow(term_id=term.term_id, k=rep.k, truncation=truncation.label(),
                                    size=rep.dim, norm_lb=running[(term.term_id, rep.k)], raw_lb=raw))
            raw = max(block_bounds)
            running[(term.term_id, None)] = max(running[(term.term_id, None)], raw)
            rows.append(NormRow(term_id=term.term_id, k=None, truncation=truncation.label(),
                                size=sum(rep.dim for rep in reps), norm_lb=running[(term.term_id, None)], raw_lb=raw))
        logger.info("Norm sweep step", truncation=truncation.label(), terms=len(terms))
    return rows


@dataclass(frozen=True)
class PolarPoint:
    """Point of C^n as moduli and phases; the phase of a zero coordinate carries no information."""

    moduli: Tuple[float, ...]
    phases: Tuple[float, ...]

    def __post_init__(self):
        if len(self.moduli) != len(self.phases):
            raise DimensionMismatchError("one phase per modulus is required")
        if any(r < 0 for r in self.moduli):
            raise InvalidParameterError("moduli must be nonnegative")

    @classmethod
    def from_complex(cls, values: Sequence[complex]) -> "PolarPoint":
        values = np.asarray(values, dtype=np.complex128)
        return cls(tuple(float(v) for v in np.abs(values)), tuple(float(v) for v in np.angle(values)))


def classical_value(term: GeneratorTerm, point: PolarPoint, q: float) -> complex:
    """f(|z_1|, .., |z_n|) e^{i(l_1 theta_1 + .. + l_n theta_n)}."""
    if len(point.moduli) != term.n:
        raise DimensionMismatchError(f"point in C^{len(point.moduli)}, term over n={term.n}")
    modulus = term.f.evaluate(np.array([point.moduli]), q)[0]
    return complex(modulus * np.exp(1j * float(np.dot(term.l, point.phases))))


def classical_separation(
    pairs: Sequence[Tuple[PolarPoint, PolarPoint]],
    family: Sequence[GeneratorTerm],
    q: float = 0.5,
    tolerance: Optional[float] = None,
) -> SeparationReport:
    """Report the pairs that no family member tells apart (|difference| <= tolerance for all)."""
    tolerance = settings.separation_tol if tolerance is None else tolerance
    for term in family:
        check_vanishing(term, q, check_radius(q, settings.default_M))
    unseparated = []
    smallest = float("inf")
    for position, (first, second) in enumerate(pairs):
        best = max((abs(classical_value(t, first, q) - classical_value(t, second, q)) for t in family), default=0.0)
        smallest = min(smallest, best)
        if best <= tolerance:
            unseparated.append(position)
    report = SeparationReport(
        pairs_checked=len(pairs),
        family_size=len(family),
        tolerance=tolerance,
        unseparated=unseparated,
        smallest_separation=0.0 if smallest == float("inf") else smallest,
    )
    logger.info("Separation checked", pairs=len(pairs), family=len(family), unseparated=len(unseparated))
    return report


def random_point_pairs(n: int, count: int, rng: np.random.Generator, max_modulus: float = 3.0) -> List[Tuple[PolarPoint, PolarPoint]]:
    def draw() -> PolarPoint:
        return PolarPoint(tuple(rng.uniform(0.0, max_modulus, n).tolist()),
                          tuple(rng.uniform(-np.pi, np.pi, n).tolist()))
    return [(draw(), draw()) for _ in range(count)]


def _local_names(n: int) -> Dict[str, object]:
    r = coordinate_symbols(n, RADIAL)

    def axis(j) -> sympy.Symbol:
        j = int(j)
        if not 1 <= j <= n:
            raise GeneratorIndexError(f"coordinate index {j} outside 1..{n}")
        return r[j - 1]

    names: Dict[str, object] = {f"r{j}": r[j - 1] for j in range(1, n + 1)}
    names.update({
        "q": Q,
        "sqrt": sympy.sqrt,
        "exp": sympy.exp,
        "chi": lambda m, j: ChiPoint(axis(j), int(m), Q),
        "chiI": lambda j: ChiLattice(axis(j), 1, Q),
    })
    return names


def parse_function(text: str, n: int) -> FunctionExpr:
    """Parse f from text over r1..rn, q, sqrt, exp, chi(m, j) and chiI(j)."""
    try:
        expr = parse_expr(text, local_dict=_local_names(n), transformations=standard_transformations)
    except GeneratorIndexError:
        raise
    except (SyntaxError, TypeError, ValueError, AttributeError, TokenError) as e:
        position = getattr(e, "offset", None) or 0
        raise ExpressionSyntaxError(f"cannot parse {text!r}: {e}", position, text) from e
    if not isinstance(expr, sympy.Expr):
        raise ExpressionSyntaxError(f"{text!r} is not an expression", 0, text)
    return FunctionExpr(expr, n)


def load_generator_terms(path: Union[str, Path], n: int) -> List[GeneratorTerm]:
    """
    Read generator terms from a JSON-lines file: {"id": str, "l": [int, ..], "f": str}.

    Blank lines and lines starting with '#' are skipped.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ReportIOError(f"cannot read generator terms from {path}: {e}") from e
    terms: List[GeneratorTerm] = []
    seen = set()
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
            term_id, l, text = str(record["id"]), record["l"], str(record["f"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ExpressionSyntaxError(f"{path}:{number}: malformed generator record", 0, line) from e
        if term_id in seen:
            raise InvalidParameterError(f"{path}:{number}: duplicate term id {term_id!r}")
        seen.add(term_id)
        terms.append(GeneratorTerm(term_id, parse_function(text, n), tuple(l)))
    logger.info("Generator terms loaded", path=str(path), count=len(terms))
    return terms


def separation_family(n: int) -> List[GeneratorTerm]:
    """
    Fixed family of C0 terms that separates points of C^n.

    With R = r_1 + .. + r_n: exp(-R); r_j exp(-R) with l = 0 and with l = e_j;
    r_j^2 exp(-R) with l = 2 e_j; r_1 r_2 exp(-R) with l = e_1 - e_2; exp(-2R).
    """
    r = coordinate_symbols(n, RADIAL)
    decay = sympy.exp(-sum(r))
    zero = (0,) * n

    def unit(j: int, value: int = 1) -> MultiIndex:
        return tuple(value if i == j else 0 for i in range(n))

    family = [GeneratorTerm("exp", FunctionExpr(decay, n), zero)]
    family += [GeneratorTerm(f"mod{j + 1}", FunctionExpr(r[j] * decay, n), zero) for j in range(n)]
    family += [GeneratorTerm(f"phase{j + 1}", FunctionExpr(r[j] * decay, n), unit(j)) for j in range(n)]
    family += [GeneratorTerm(f"phase{j + 1}^2", FunctionExpr(r[j] ** 2 * decay, n), unit(j, 2)) for j in range(n)]
    if n >= 2:
        l = tuple(1 if i == 0 else -1 if i == 1 else 0 for i in range(n))
        family.append(GeneratorTerm("cross12", FunctionExpr(r[0] * r[1] * decay, n), l))
    family.append(GeneratorTerm("exp2", FunctionExpr(decay ** 2, n), zero))
    return family
