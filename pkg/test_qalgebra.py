from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.services.qalgebra import (
    LaurentQ,
    Letter,
    QPolynomial,
    build_Q,
    check_local_confluence,
    coefficient_ring_violations,
    evaluate_at_q,
    normal_form,
    parse_expr,
    reduction_bound,
    reduction_depth,
    relation_identities,
    rewrite_rules,
    verify_identity,
)
from app.utils.errors import (
    DimensionMismatchError,
    ExpressionSyntaxError,
    GeneratorIndexError,
    InvalidParameterError,
)

N_GEN = 3


def words(n: int, max_size: int = 5):
    return st.lists(
        st.builds(Letter, st.integers(min_value=1, max_value=n), st.booleans()),
        max_size=max_size,
    ).map(tuple)


def polynomials(n: int):
    terms = st.lists(st.tuples(words(n, 4), st.integers(min_value=-3, max_value=3)), min_size=1, max_size=4)
    return terms.map(lambda items: sum(
        (QPolynomial.monomial(w, n, c) for w, c in items), QPolynomial.zero(n)))


def test_commuting_unstarred_letters_picks_up_q():
    assert str(normal_form(parse_expr("z2*z1", 2))) == "q*z1*z2"


def test_last_generator_is_q_normal():
    assert str(normal_form(parse_expr("z1*z1#", 1))) == "q^2*z1#*z1"


def test_defect_term_for_lower_generator():
    lhs = normal_form(parse_expr("z1*z1#", 2))
    expected = parse_expr("q^2*z1#*z1 - (1 - q^2)*z2#*z2", 2)
    assert lhs == expected


def test_normal_words_are_untouched():
    p = parse_expr("z2#*z1#*z1*z2", 2)
    assert p.is_normal()
    assert normal_form(p) == p


@given(polynomials(N_GEN))
def test_normal_form_is_idempotent(p):
    once = normal_form(p)
    assert once.is_normal()
    assert normal_form(once) == once


@given(polynomials(N_GEN), polynomials(N_GEN))
def test_normal_form_is_linear(p, r):
    assert normal_form(p + r) == normal_form(p) + normal_form(r)


@given(polynomials(N_GEN))
def test_star_is_compatible_with_the_relations(p):
    assert normal_form(p.star()) == normal_form(normal_form(p).star())


@given(polynomials(2))
def test_star_is_an_involution(p):
    assert p.star().star() == p


@given(words(N_GEN, 5))
def test_reduction_chains_stay_below_the_bound(word):
    assert reduction_depth(word, N_GEN) <= reduction_bound(len(word))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_rewrite_system_is_locally_confluent(n):
    report = check_local_confluence(n, 4)
    assert report.confluent
    assert not report.sampled
    assert report.words_checked == sum((2 * n) ** length for length in range(5))
    assert report.max_chain <= report.chain_bound


def test_confluence_needs_overlapping_words():
    with pytest.raises(InvalidParameterError):
        check_local_confluence(2, 2)


def test_rule_table():
    assert [rule.label for rule in rewrite_rules(1)] == ["e"]
    assert sorted(rule.label for rule in rewrite_rules(2)) == ["a", "b", "c", "c", "d", "e"]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_identity_catalogue_holds(n):
    for identity in relation_identities(n, max_degree=2):
        result = verify_identity(identity.lhs, identity.rhs)
        assert result.holds, f"{identity.label}: residual {result.residual}"


def test_identity_catalogue_holds_at_degree_three_for_four_generators():
    identities = relation_identities(4, max_degree=3)
    failed = [i.label for i in identities if not verify_identity(i.lhs, i.rhs).holds]
    assert identities and not failed


@pytest.mark.parametrize("n", [1, 2, 3])
def test_normal_forms_stay_in_the_integer_ring(n):
    assert coefficient_ring_violations(n, 3) == []


def test_inverse_q_leaves_the_integer_ring():
    assert parse_expr("3*q^2*z1 - z1#", 1).in_integer_ring()
    assert not QPolynomial.monomial((), 1, LaurentQ.q_power(-1)).in_integer_ring()
    assert not QPolynomial.constant(LaurentQ.constant(Fraction(1, 2)), 1).in_integer_ring()


def test_false_identity_reports_residual():
    result = verify_identity(parse_expr("z1*z2", 2), parse_expr("z2*z1", 2))
    assert not result.holds
    assert result.residual == normal_form(parse_expr("z1*z2 - q*z1*z2", 2))


def test_identity_sides_must_share_n():
    with pytest.raises(DimensionMismatchError):
        verify_identity(parse_expr("z1", 1), parse_expr("z1", 2))


def test_q_sums():
    assert build_Q(3, 2).is_zero()
    assert build_Q(1, 2) == parse_expr("z1#*z1 + z2#*z2", 2)
    with pytest.raises(GeneratorIndexError):
        build_Q(0, 2)


def test_laurent_arithmetic():
    q = LaurentQ.q_power(1)
    assert (1 - q ** 2) * (1 + q ** 2) == 1 - q ** 4
    assert (q ** -2) * q ** 2 == 1
    assert str(LaurentQ({-1: 2, 0: -1})) == "2*q^-1-1"
    with pytest.raises(ValueError):
        (1 + q) ** -1


def test_negative_q_powers_parse():
    p = parse_expr("q^-2*z1", 1)
    assert p.coefficient((Letter(1),)) == LaurentQ.q_power(-2)


@pytest.mark.parametrize("text,position", [
    ("z1 + * z2", 5),
    ("z1 $", 3),
    ("(z1 + z2", 8),
    ("z1^-1", 2),
])
def test_syntax_errors_carry_the_offset(text, position):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expr(text, 2)
    assert info.value.position == position


def test_empty_expression():
    with pytest.raises(ExpressionSyntaxError):
        parse_expr("   ", 2)


def test_generator_out_of_range():
    with pytest.raises(GeneratorIndexError):
        parse_expr("z3*z1", 2)


def test_evaluation_needs_q_in_unit_interval():
    p = parse_expr("q*z1", 1)
    assert evaluate_at_q(p, 0.5).coefficient((Letter(1),)) == 0.5
    with pytest.raises(InvalidParameterError):
        evaluate_at_q(p, 1.0)
