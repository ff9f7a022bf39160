import json

import numpy as np
import pytest
import sympy

from app.models.config_models import FiberSpectrum, TruncationSpec
from app.services import qcstar
from app.services.qcstar import (
    Q,
    ChiLattice,
    ChiPoint,
    CrossedSymbol,
    FunctionExpr,
    GeneratorTerm,
    PolarPoint,
    canonicalize,
    check_c0,
    check_vanishing,
    classical_separation,
    component_multiplicativity_defect,
    coordinate_symbols,
    load_generator_terms,
    norm_estimate,
    parse_function,
    pi_k,
    random_point_pairs,
    random_symbol,
    represent,
    separation_family,
    symbol_operator,
    symbol_vs_matrix,
    term_to_symbol,
)
from app.services.qrep import build_component_abstract
from app.utils.errors import (
    ExpressionSyntaxError,
    GeneratorIndexError,
    InvalidParameterError,
    NotC0Error,
    ReportIOError,
    VanishingConditionError,
)

QV = 0.5


@pytest.fixture
def r2():
    return coordinate_symbols(2)


@pytest.fixture
def t2():
    return coordinate_symbols(2, qcstar.LATTICE)


class TestIndicators:
    def test_point_indicator_absorbs_q_powers(self, t2):
        t1 = t2[0]
        assert ChiPoint(Q ** 2 * t1, 1, Q) == ChiPoint(t1, 3, Q)
        assert ChiLattice(t1 / Q, 1, Q) == ChiLattice(t1, 0, Q)

    def test_indicator_products(self, t2):
        t1 = t2[0]
        assert canonicalize(ChiPoint(t1, 1, Q) * ChiPoint(t1, 2, Q)) == 0
        assert canonicalize(ChiPoint(t1, 2, Q) ** 3) == ChiPoint(t1, 2, Q)
        assert canonicalize(ChiPoint(t1, 2, Q) * ChiLattice(t1, 3, Q)) == 0
        assert canonicalize(ChiPoint(t1, 3, Q) * ChiLattice(t1, 1, Q)) == ChiPoint(t1, 3, Q)
        assert canonicalize(ChiLattice(t1, 1, Q) * ChiLattice(t1, 4, Q)) == ChiLattice(t1, 4, Q)

    def test_numeric_indicators(self, t2):
        f = FunctionExpr(ChiPoint(t2[0], 2, Q) + ChiLattice(t2[1], 1, Q), 2, qcstar.LATTICE)
        points = np.array([[4.0, 2.0], [4.0, 1.0], [3.0, 0.5]])
        assert f.evaluate(points, QV).tolist() == [2.0, 1.0, 0.0]


class TestFunctionExpr:
    def test_unknown_symbols(self):
        with pytest.raises(GeneratorIndexError):
            FunctionExpr(sympy.Symbol("x"), 1)

    def test_evaluation_pads_missing_coordinates(self, r2):
        f = FunctionExpr(sympy.exp(-r2[0] - r2[1]), 2)
        assert np.allclose(f.evaluate(np.array([[0.0], [1.0]]), QV), [1.0, np.exp(-1.0)])

    def test_constant_broadcasts(self):
        assert FunctionExpr.constant(3, 2).evaluate(np.zeros((4, 2)), QV).tolist() == [3.0] * 4

    def test_sigma_shifts_lattice_coordinates(self, t2):
        f = FunctionExpr(t2[0] * t2[1], 2, qcstar.LATTICE)
        assert f.sigma([1, -1]).expr == t2[0] * t2[1]
        assert f.sigma([2, 0]).expr == Q ** 2 * t2[0] * t2[1]


class TestGeneratorTerms:
    def test_vanishing_condition(self, r2):
        bad = GeneratorTerm("bad", FunctionExpr(sympy.exp(-r2[0]), 2), (1, 0))
        with pytest.raises(VanishingConditionError):
            check_vanishing(bad, QV, 100.0)
        good = GeneratorTerm("good", FunctionExpr(r2[0] * sympy.exp(-r2[0]), 2), (1, 0))
        check_vanishing(good, QV, 100.0)

    def test_decay_check(self, r2):
        growing = GeneratorTerm("grow", FunctionExpr(r2[0] / (1 + r2[1]), 2), (0, 0))
        with pytest.raises(NotC0Error):
            check_c0(growing, QV, 1e3)
        decaying = GeneratorTerm("decay", FunctionExpr(sympy.exp(-r2[0] - r2[1]), 2), (0, 0))
        assert check_c0(decaying, QV, 1e3) <= 1e-6

    def test_vacuum_image(self, components, r2):
        scalar = GeneratorTerm("s", FunctionExpr(2 * sympy.exp(-r2[0]), 2), (0, 0))
        shifted = GeneratorTerm("t", FunctionExpr(r2[0] * sympy.exp(-r2[0]), 2), (1, 0))
        assert pi_k(scalar, components[0]).to_dense().tolist() == [[2.0]]
        assert pi_k(shifted, components[0]).nnz == 0

    @pytest.mark.parametrize("term_id", ["phase1", "phase2", "phase1^2", "cross12"])
    def test_star_term_represents_the_adjoint(self, components, term_id):
        term = {t.term_id: t for t in separation_family(2)}[term_id]
        for rep in components:
            image = pi_k(term, rep)
            adjoint = pi_k(term.star(), rep)
            assert (adjoint - image.adjoint()).max_abs() <= 1e-12 * max(1.0, image.max_abs())

    def test_star_id_and_shift(self):
        term = separation_family(2)[-2]
        assert term.star().term_id == "cross12*"
        assert term.star().l == (-1, 1)

    def test_direct_sum_image(self, components):
        family = separation_family(2)
        total = represent(family[:2], components)
        assert total.dim == sum(c.dim for c in components)
        with pytest.raises(InvalidParameterError):
            represent([], components)


class TestCrossedSymbols:
    def test_unilateral_shift_defect(self):
        product = CrossedSymbol.shift(2, 1) * CrossedSymbol.shift(2, 1, -1)
        t1 = coordinate_symbols(2, qcstar.LATTICE)[0]
        expected = CrossedSymbol.function(1 - ChiPoint(t1, 1, Q), 2)
        assert product.equals(expected)
        assert (CrossedSymbol.shift(2, 1, -1) * CrossedSymbol.shift(2, 1)).equals(CrossedSymbol.one(2))

    def test_last_shift_is_unitary(self):
        product = CrossedSymbol.shift(2, 2) * CrossedSymbol.shift(2, 2, -1)
        assert product.equals(CrossedSymbol.one(2))

    def test_products_match_matrices(self, top):
        rng = np.random.default_rng(11)
        for _ in range(6):
            x, y = random_symbol(2, rng), random_symbol(2, rng)
            assert symbol_vs_matrix(x, y, top) <= 1e-10

    def test_products_match_matrices_at_full_size(self, fiber):
        top = build_component_abstract(2, TruncationSpec(n=2, q_value=QV, N=8, M=8, d=3), fiber)
        rng = np.random.default_rng(7)
        deviation = max(symbol_vs_matrix(random_symbol(2, rng), random_symbol(2, rng), top) for _ in range(200))
        assert deviation <= 1e-10

    def test_star_reverses_products(self):
        rng = np.random.default_rng(5)
        x, y = random_symbol(2, rng, n_terms=1), random_symbol(2, rng, n_terms=1)
        assert (x * y).star().equals(y.star() * x.star(), q=QV)

    def test_star_is_the_operator_adjoint(self, top):
        rng = np.random.default_rng(2)
        x = random_symbol(2, rng)
        assert (symbol_operator(x.star(), top) - symbol_operator(x, top).adjoint()).max_abs() <= 1e-10 * max(
            1.0, symbol_operator(x, top).max_abs())

    def test_pullback_of_generator_terms(self, top):
        for term in separation_family(2):
            symbol_image = symbol_operator(term_to_symbol(term), top)
            assert (pi_k(term, top) - symbol_image).max_abs() <= 1e-12 * max(1.0, symbol_image.max_abs())

    def test_symbol_support_must_fit_the_component(self, components):
        with pytest.raises(GeneratorIndexError):
            symbol_operator(CrossedSymbol.shift(2, 2), components[1])

    def test_matrix_check_needs_the_top_component(self, components):
        with pytest.raises(InvalidParameterError):
            symbol_vs_matrix(CrossedSymbol.one(2), CrossedSymbol.one(2), components[1])

    def test_lower_component_breaks_the_shift_defect_at_one(self, truncation):
        h1 = build_component_abstract(1, truncation, FiberSpectrum(q_value=QV, samples=(0.9, 1.0)))
        x, y = CrossedSymbol.shift(2, 1), CrossedSymbol.shift(2, 1, -1)
        assert component_multiplicativity_defect(x, y, h1) >= 0.5
        assert component_multiplicativity_defect(y, x, h1) <= 1e-12

    def test_lower_component_is_multiplicative_away_from_one(self, truncation):
        h1 = build_component_abstract(1, truncation, FiberSpectrum(q_value=QV, samples=(0.9,)))
        x, y = CrossedSymbol.shift(2, 1), CrossedSymbol.shift(2, 1, -1)
        assert component_multiplicativity_defect(x, y, h1) <= 1e-12
        rng = np.random.default_rng(23)
        for _ in range(6):
            x, y = random_symbol(2, rng, coordinates=1), random_symbol(2, rng, coordinates=1)
            assert component_multiplicativity_defect(x, y, h1) <= 1e-10


class TestNormEstimates:
    @pytest.fixture
    def sweep(self):
        return [TruncationSpec(n=2, q_value=QV, N=size, M=size, d=1) for size in (3, 4)]

    def test_rows_are_monotone(self, corpus_dir, fiber, sweep):
        terms = load_generator_terms(corpus_dir / "norm_terms.jsonl", 2)
        rows = norm_estimate(terms, fiber, sweep, iterations=50)
        assert len(rows) == len(sweep) * len(terms) * 4
        best = {}
        for row in rows:
            key = (row.term_id, row.k)
            assert row.norm_lb >= best.get(key, 0.0)
            assert row.norm_lb >= row.raw_lb
            best[key] = row.norm_lb

    def test_multiplication_bound_is_exact(self, fiber, sweep, r2):
        term = GeneratorTerm("decay", FunctionExpr(sympy.exp(-r2[0] - r2[1]), 2), (0, 0))
        rows = [row for row in norm_estimate([term], fiber, sweep) if row.k == 0]
        assert [row.raw_lb for row in rows] == [1.0, 1.0]

    def test_sweep_must_grow(self, fiber, sweep, r2):
        term = GeneratorTerm("decay", FunctionExpr(sympy.exp(-r2[0]), 2), (0, 0))
        with pytest.raises(InvalidParameterError):
            norm_estimate([term], fiber, list(reversed(sweep)))

    def test_growing_terms_are_rejected(self, fiber, sweep, r2):
        term = GeneratorTerm("grow", FunctionExpr(r2[0], 2), (0, 0))
        with pytest.raises(NotC0Error):
            norm_estimate([term], fiber, sweep)

    def test_full_sweep_is_monotone(self, corpus_dir, fiber):
        sweep = [TruncationSpec(n=2, q_value=QV, N=size, M=size, d=1) for size in (4, 6, 8, 10)]
        terms = load_generator_terms(corpus_dir / "norm_terms.jsonl", 2)
        rows = norm_estimate(terms, fiber, sweep)
        assert sorted({row.size for row in rows}) == [4, 6, 8, 10]
        by_key = {}
        for row in rows:
            by_key.setdefault((row.term_id, row.k), []).append(row.norm_lb)
        assert all(bounds == sorted(bounds) for bounds in by_key.values())


class TestSeparation:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_random_pairs_are_separated(self, n):
        pairs = random_point_pairs(n, 1000, np.random.default_rng(n))
        report = classical_separation(pairs, separation_family(n))
        assert report.pairs_checked == 1000
        assert report.unseparated == []

    def test_equal_points_are_not_separated(self):
        point = PolarPoint.from_complex([1 + 1j, 0.5])
        report = classical_separation([(point, point)], separation_family(2))
        assert report.unseparated == [0]

    def test_phase_differences_are_seen(self):
        first = PolarPoint((1.0, 2.0), (0.0, 0.0))
        second = PolarPoint((1.0, 2.0), (0.0, 0.5))
        report = classical_separation([(first, second)], separation_family(2))
        assert report.unseparated == []
        assert report.smallest_separation > 1e-3

    def test_phase_of_a_zero_coordinate_is_invisible(self):
        first = PolarPoint((0.0, 1.0), (0.0, 0.0))
        second = PolarPoint((0.0, 1.0), (2.0, 0.0))
        assert classical_separation([(first, second)], separation_family(2)).unseparated == [0]

    def test_negative_moduli(self):
        with pytest.raises(InvalidParameterError):
            PolarPoint((-1.0,), (0.0,))


class TestLoading:
    def test_corpus_family_matches_the_builtin_family(self, corpus_dir):
        loaded = load_generator_terms(corpus_dir / "separation_family.jsonl", 3)
        builtin = separation_family(3)
        assert [t.term_id for t in loaded] == [t.term_id for t in builtin]
        assert [t.l for t in loaded] == [t.l for t in builtin]
        for a, b in zip(loaded, builtin):
            assert sympy.simplify(a.f.expr - b.f.expr) == 0

    def test_indicator_names(self):
        f = parse_function("chi(2, 1)*exp(-r2) + chiI(2)", 2)
        r = coordinate_symbols(2)
        assert f.expr == ChiPoint(r[0], 2, Q) * sympy.exp(-r[1]) + ChiLattice(r[1], 1, Q)

    @pytest.mark.parametrize("text", ["r1 +* r2", "exp(-r1", "r1 = 2"])
    def test_syntax_errors(self, text):
        with pytest.raises(ExpressionSyntaxError):
            parse_function(text, 2)

    @pytest.mark.parametrize("text", ["r3", "chi(1, 3)"])
    def test_coordinate_out_of_range(self, text):
        with pytest.raises(GeneratorIndexError):
            parse_function(text, 2)

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / "terms.jsonl"
        record = json.dumps({"id": "a", "l": [0], "f": "exp(-r1)"})
        path.write_text(record + "\n\n" + record + "\n")
        with pytest.raises(InvalidParameterError):
            load_generator_terms(path, 1)

    def test_malformed_record(self, tmp_path):
        path = tmp_path / "terms.jsonl"
        path.write_text('{"id": "a", "f": "exp(-r1)"}\n')
        with pytest.raises(ExpressionSyntaxError):
            load_generator_terms(path, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ReportIOError):
            load_generator_terms(tmp_path / "absent.jsonl", 1)
