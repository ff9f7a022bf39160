"""
Exact symbolic model of the coordinate *-algebra of the quantum complex plane.

Elements are noncommutative polynomials in z_1..z_n, z_1*..z_n* whose
coefficients are Laurent polynomials in q with rational coefficients. The
canonical normal form puts all starred letters first with non-increasing
indices, followed by the unstarred letters with non-decreasing indices. Five
rewrite rules reach it:

    (a) z_j z_i   -> q z_i z_j                                   j > i
    (b) z_i* z_j* -> q z_j* z_i*                                 i < j
    (c) z_j z_i*  -> q z_i* z_j                                  j != i
    (d) z_i z_i*  -> q^2 z_i* z_i - (1-q^2) sum_{j>i} z_j* z_j   i < n
    (e) z_n z_n*  -> q^2 z_n* z_n

Reduction always rewrites the leftmost reducible pair. Results are memoized per
(word, n); every value in this module is immutable.

Expression grammar accepted by `parse_expr`:

    expr     := term (("+" | "-") term)*
    term     := factor ("*" factor)*
    factor   := ("+" | "-") factor | power
    power    := atom ("^" exponent)?
    exponent := ("+" | "-")? INT
    atom     := INT | "q" | GEN | "(" expr ")"
    GEN      := "z" INT "#"?            (# marks the adjoint)

Negative exponents are only allowed on q-monomials.
"""
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
import structlog

from app.config import get_settings
from app.models.report_models import ConfluenceReport, DivergentWord
from app.utils.errors import (
    DimensionMismatchError,
    ExpressionSyntaxError,
    GeneratorIndexError,
    InvalidParameterError,
)

logger = structlog.get_logger()
settings = get_settings()

Rational = Union[int, Fraction]


class LaurentQ:
    """Laurent polynomial in q with rational coefficients; no zero coefficient is stored."""

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: Optional[Mapping[int, Rational]] = None):
        cleaned: Dict[int, Fraction] = {}
        for exponent, value in (coeffs or {}).items():
            value = Fraction(value)
            if value:
                cleaned[int(exponent)] = value
        self._coeffs = cleaned

    @classmethod
    def constant(cls, value: Rational) -> "LaurentQ":
        return cls({0: value})

    @classmethod
    def q_power(cls, exponent: int, value: Rational = 1) -> "LaurentQ":
        return cls({exponent: value})

    @classmethod
    def coerce(cls, value) -> "LaurentQ":
        if isinstance(value, LaurentQ):
            return value
        if isinstance(value, (int, Fraction)):
            return cls.constant(value)
        raise TypeError(f"cannot use {type(value).__name__} as a q-coefficient")

    def items(self) -> List[Tuple[int, Fraction]]:
        return sorted(self._coeffs.items())

    def is_monomial(self) -> bool:
        return len(self._coeffs) == 1

    def min_exponent(self) -> int:
        return min(self._coeffs) if self._coeffs else 0

    def in_integer_ring(self) -> bool:
        """True when the value lies in Z[q]: integer coefficients, no negative powers."""
        return all(e >= 0 and c.denominator == 1 for e, c in self._coeffs.items())

    def evaluate(self, q_value: float) -> float:
        return float(sum(float(c) * q_value ** e for e, c in self._coeffs.items()))

    def __bool__(self) -> bool:
        return bool(self._coeffs)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = LaurentQ.constant(other)
        if not isinstance(other, LaurentQ):
            return NotImplemented
        return self._coeffs == other._coeffs

    def __hash__(self) -> int:
        return hash(tuple(self.items()))

    def __add__(self, other) -> "LaurentQ":
        try:
            other = LaurentQ.coerce(other)
        except TypeError:
            return NotImplemented
        merged = dict(self._coeffs)
        for e, c in other._coeffs.items():
            merged[e] = merged.get(e, 0) + c
        return LaurentQ(merged)

    __radd__ = __add__

    def __neg__(self) -> "LaurentQ":
        return LaurentQ({e: -c for e, c in self._coeffs.items()})

    def __sub__(self, other) -> "LaurentQ":
        try:
            return self + (-LaurentQ.coerce(other))
        except TypeError:
            return NotImplemented

    def __rsub__(self, other) -> "LaurentQ":
        return LaurentQ.coerce(other) - self

    def __mul__(self, other) -> "LaurentQ":
        try:
            other = LaurentQ.coerce(other)
        except TypeError:
            return NotImplemented
        result: Dict[int, Fraction] = {}
        for e1, c1 in self._coeffs.items():
            for e2, c2 in other._coeffs.items():
                result[e1 + e2] = result.get(e1 + e2, 0) + c1 * c2
        return LaurentQ(result)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "LaurentQ":
        if exponent < 0:
            if not self.is_monomial():
                raise ValueError("only q-monomials have inverses")
            (e, c), = self._coeffs.items()
            return LaurentQ({e * exponent: c ** exponent})
        result = LaurentQ.constant(1)
        for _ in range(exponent):
            result = result * self
        return result

    def __str__(self) -> str:
        if not self._coeffs:
            return "0"
        text = ""
        for position, (exponent, value) in enumerate(self.items()):
            magnitude = abs(value)
            if exponent == 0:
                body = str(magnitude)
            else:
                monomial = "q" if exponent == 1 else f"q^{exponent}"
                body = monomial if magnitude == 1 else f"{magnitude}*{monomial}"
            if value < 0:
                text += "-" + body
            else:
                text += body if position == 0 else "+" + body
        return text

    def __repr__(self) -> str:
        return f"LaurentQ({self})"


_ONE = LaurentQ.constant(1)


class Letter(NamedTuple):
    """Generator z_index, or its adjoint when starred."""
    index: int
    starred: bool = False

    def star(self) -> "Letter":
        return Letter(self.index, not self.starred)

    def __str__(self) -> str:
        return f"z{self.index}{'#' if self.starred else ''}"


Word = Tuple[Letter, ...]


def word_to_str(word: Word) -> str:
    return "*".join(str(letter) for letter in word) if word else "1"


def word_key(word: Word) -> Tuple:
    """Sort key used for canonical printing: shorter words first, then letters."""
    return (len(word), tuple((letter.index, 0 if letter.starred else 1) for letter in word))


def star_word(word: Word) -> Word:
    return tuple(letter.star() for letter in reversed(word))


def _pair_is_normal(first: Letter, second: Letter) -> bool:
    if first.starred and second.starred:
        return first.index >= second.index
    if not first.starred and not second.starred:
        return first.index <= second.index
    return first.starred


def is_normal_word(word: Word) -> bool:
    return all(_pair_is_normal(a, b) for a, b in zip(word, word[1:]))


class QPolynomial:
    """Map Word -> LaurentQ over n generators; zero coefficients are never stored."""

    __slots__ = ("n", "_terms")

    def __init__(self, n: int, terms: Optional[Mapping[Word, Union[LaurentQ, Rational]]] = None):
        if n < 1:
            raise InvalidParameterError(f"dimension n must be >= 1, got {n}")
        self.n = n
        cleaned: Dict[Word, LaurentQ] = {}
        for word, coefficient in (terms or {}).items():
            word = tuple(Letter(*letter) for letter in word)
            for letter in word:
                if not 1 <= letter.index <= n:
                    raise GeneratorIndexError(f"generator z{letter.index} outside 1..{n}")
            coefficient = LaurentQ.coerce(coefficient)
            if coefficient:
                cleaned[word] = coefficient
        self._terms = cleaned

    @classmethod
    def zero(cls, n: int) -> "QPolynomial":
        return cls(n)

    @classmethod
    def constant(cls, value: Union[LaurentQ, Rational], n: int) -> "QPolynomial":
        return cls(n, {(): value})

    @classmethod
    def one(cls, n: int) -> "QPolynomial":
        return cls.constant(1, n)

    @classmethod
    def generator(cls, index: int, n: int, starred: bool = False) -> "QPolynomial":
        if not 1 <= index <= n:
            raise GeneratorIndexError(f"generator z{index} outside 1..{n}")
        return cls(n, {(Letter(index, starred),): 1})

    @classmethod
    def monomial(cls, word: Word, n: int, coefficient: Union[LaurentQ, Rational] = 1) -> "QPolynomial":
        return cls(n, {tuple(word): coefficient})

    def terms(self) -> List[Tuple[Word, LaurentQ]]:
        return sorted(self._terms.items(), key=lambda item: word_key(item[0]))

    def words(self) -> List[Word]:
        return [word for word, _ in self.terms()]

    def coefficient(self, word: Word) -> LaurentQ:
        return self._terms.get(tuple(word), LaurentQ())

    def is_zero(self) -> bool:
        return not self._terms

    def is_normal(self) -> bool:
        return all(is_normal_word(word) for word in self._terms)

    def in_integer_ring(self) -> bool:
        return all(c.in_integer_ring() for c in self._terms.values())

    def degree(self) -> int:
        return max((len(word) for word in self._terms), default=0)

    def _check_same(self, other: "QPolynomial") -> None:
        if self.n != other.n:
            raise DimensionMismatchError(f"polynomials over n={self.n} and n={other.n}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, QPolynomial):
            return NotImplemented
        return self.n == other.n and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self.n, frozenset(self._terms.items())))

    def __add__(self, other) -> "QPolynomial":
        if not isinstance(other, QPolynomial):
            try:
                other = QPolynomial.constant(LaurentQ.coerce(other), self.n)
            except TypeError:
                return NotImplemented
        self._check_same(other)
        merged = dict(self._terms)
        for word, coefficient in other._terms.items():
            merged[word] = merged.get(word, LaurentQ()) + coefficient
        return QPolynomial(self.n, merged)

    __radd__ = __add__

    def __neg__(self) -> "QPolynomial":
        return QPolynomial(self.n, {w: -c for w, c in self._terms.items()})

    def __sub__(self, other) -> "QPolynomial":
        return self + (-other)

    def __rsub__(self, other) -> "QPolynomial":
        return (-self) + other

    def scale(self, factor: Union[LaurentQ, Rational]) -> "QPolynomial":
        factor = LaurentQ.coerce(factor)
        return QPolynomial(self.n, {w: c * factor for w, c in self._terms.items()})

    def __mul__(self, other) -> "QPolynomial":
        if not isinstance(other, QPolynomial):
            try:
                return self.scale(other)
            except TypeError:
                return NotImplemented
        self._check_same(other)
        result: Dict[Word, LaurentQ] = {}
        for w1, c1 in self._terms.items():
            for w2, c2 in other._terms.items():
                word = w1 + w2
                result[word] = result.get(word, LaurentQ()) + c1 * c2
        return QPolynomial(self.n, result)

    def __rmul__(self, other) -> "QPolynomial":
        try:
            return self.scale(other)
        except TypeError:
            return NotImplemented

    def __pow__(self, exponent: int) -> "QPolynomial":
        if exponent < 0:
            raise ValueError("polynomials have no negative powers")
        result = QPolynomial.one(self.n)
        for _ in range(exponent):
            result = result * self
        return result

    def star(self) -> "QPolynomial":
        # q is real and rational coefficients are fixed by conjugation
        return QPolynomial(self.n, {star_word(w): c for w, c in self._terms.items()})

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        text = ""
        for position, (word, coefficient) in enumerate(self.terms()):
            negative = coefficient.items()[0][1] < 0
            if negative:
                coefficient = -coefficient
            if coefficient == 1:
                body = word_to_str(word)
            else:
                shown = str(coefficient) if coefficient.is_monomial() else f"({coefficient})"
                body = shown if not word else f"{shown}*{word_to_str(word)}"
            if position == 0:
                text = ("-" if negative else "") + body
            else:
                text += (" - " if negative else " + ") + body
        return text

    def __repr__(self) -> str:
        return f"QPolynomial(n={self.n}, {self})"


@dataclass(frozen=True)
class RewriteRule:
    """One instantiated rule: the length-2 word `left` rewrites to `right`."""
    label: str
    left: Word
    right: QPolynomial

    def __str__(self) -> str:
        return f"({self.label}) {word_to_str(self.left)} -> {self.right}"


@lru_cache(maxsize=None)
def _rule_for_pair(first: Letter, second: Letter, n: int) -> Optional[RewriteRule]:
    q = LaurentQ.q_power(1)
    q2 = LaurentQ.q_power(2)
    left = (first, second)
    swapped = (second, first)
    if _pair_is_normal(first, second):
        return None
    if not first.starred and not second.starred:
        return RewriteRule("a", left, QPolynomial(n, {swapped: q}))
    if first.starred and second.starred:
        return RewriteRule("b", left, QPolynomial(n, {swapped: q}))
    if first.index != second.index:
        return RewriteRule("c", left, QPolynomial(n, {swapped: q}))
    i = first.index
    if i == n:
        return RewriteRule("e", left, QPolynomial(n, {swapped: q2}))
    terms: Dict[Word, LaurentQ] = {swapped: q2}
    defect = -(1 - q2)
    for j in range(i + 1, n + 1):
        terms[(Letter(j, True), Letter(j))] = defect
    return RewriteRule("d", left, QPolynomial(n, terms))


def rewrite_rules(n: int) -> Tuple[RewriteRule, ...]:
    """Every instantiated rule for n generators."""
    alphabet = _alphabet(n)
    rules = (_rule_for_pair(a, b, n) for a, b in product(alphabet, repeat=2))
    return tuple(rule for rule in rules if rule is not None)


def _alphabet(n: int) -> Tuple[Letter, ...]:
    return tuple(Letter(j, starred) for j in range(1, n + 1) for starred in (True, False))


def redex_positions(word: Word, n: int) -> List[int]:
    return [p for p in range(len(word) - 1) if _rule_for_pair(word[p], word[p + 1], n) is not None]


def rewrite_at(word: Word, position: int, n: int) -> Dict[Word, LaurentQ]:
    """Apply the rule whose left side sits at `position`; one rewriting step."""
    rule = _rule_for_pair(word[position], word[position + 1], n)
    if rule is None:
        raise ValueError(f"no rule applies at position {position} of {word_to_str(word)}")
    return {
        word[:position] + replacement + word[position + 2:]: coefficient
        for replacement, coefficient in rule.right.terms()
    }


def _accumulate(target: Dict[Word, LaurentQ], word: Word, value: LaurentQ) -> None:
    total = target.get(word, LaurentQ()) + value
    if total:
        target[word] = total
    else:
        target.pop(word, None)


@lru_cache(maxsize=1 << 16)
def _reduce_word(word: Word, n: int) -> Tuple[Tuple[Tuple[Word, LaurentQ], ...], int]:
    """Normal form of one word, plus the length of the longest rewriting chain used."""
    positions = redex_positions(word, n)
    if not positions:
        return ((word, _ONE),), 0
    accumulated: Dict[Word, LaurentQ] = {}
    chain = 0
    for rewritten, coefficient in rewrite_at(word, positions[0], n).items():
        reduced, depth = _reduce_word(rewritten, n)
        chain = max(chain, depth)
        for normal_word, value in reduced:
            _accumulate(accumulated, normal_word, coefficient * value)
    ordered = tuple(sorted(accumulated.items(), key=lambda item: word_key(item[0])))
    return ordered, chain + 1


def _normalize_terms(terms: Mapping[Word, LaurentQ], n: int) -> Dict[Word, LaurentQ]:
    result: Dict[Word, LaurentQ] = {}
    for word, coefficient in terms.items():
        reduced, _ = _reduce_word(tuple(word), n)
        for normal_word, value in reduced:
            _accumulate(result, normal_word, coefficient * value)
    return result


def reduction_depth(word: Word, n: int) -> int:
    """Length of the longest rewriting chain the reduction of `word` passes through."""
    return _reduce_word(tuple(word), n)[1]


def reduction_bound(length: int) -> int:
    """
    Upper bound on rewriting chains for words of a given length.

    Every rule lowers (star-after-nonstar inversions, block disorder)
    lexicographically; the first component is at most floor(L^2/4) and the
    second at most L(L-1)/2.
    """
    inversions = length * length // 4
    disorder = length * (length - 1) // 2
    return (inversions + 1) * (disorder + 1)


def normal_form(p: QPolynomial) -> QPolynomial:
    """Canonical representative of p modulo the defining relations."""
    return QPolynomial(p.n, _normalize_terms(dict(p.terms()), p.n))


def star(p: QPolynomial) -> QPolynomial:
    return p.star()


def build_Q(k: int, n: int) -> QPolynomial:
    """Q_k = sum_{j=k}^{n} z_j* z_j; Q_{n+1} is the zero polynomial."""
    if not 1 <= k <= n + 1:
        raise GeneratorIndexError(f"Q index {k} outside 1..{n + 1}")
    return QPolynomial(n, {(Letter(j, True), Letter(j)): 1 for j in range(k, n + 1)})


class IdentityResult(NamedTuple):
    holds: bool
    residual: QPolynomial


def verify_identity(lhs: QPolynomial, rhs: QPolynomial) -> IdentityResult:
    if lhs.n != rhs.n:
        raise DimensionMismatchError(f"identity sides over n={lhs.n} and n={rhs.n}")
    residual = normal_form(lhs - rhs)
    return IdentityResult(residual.is_zero(), residual)


class NamedIdentity(NamedTuple):
    label: str
    lhs: QPolynomial
    rhs: QPolynomial


def relation_identities(n: int, max_degree: Optional[int] = None) -> List[NamedIdentity]:
    """
    Catalogue of the consequences of the relations that involve Q_k.

    Args:
        n: number of generators
        max_degree: highest power of Q_k in the polynomial-commutation families

    Returns:
        List[NamedIdentity]: labelled (lhs, rhs) pairs, all expected to hold
    """
    max_degree = settings.identity_degree if max_degree is None else max_degree
    q = LaurentQ.q_power(1)
    q2 = LaurentQ.q_power(2)
    z = {j: QPolynomial.generator(j, n) for j in range(1, n + 1)}
    zs = {j: QPolynomial.generator(j, n, starred=True) for j in range(1, n + 1)}
    Q = {k: build_Q(k, n) for k in range(1, n + 2)}
    identities: List[NamedIdentity] = []

    for k in range(1, n + 1):
        identities.append(NamedIdentity(
            f"defect[k={k}]", z[k] * zs[k] - q2 * zs[k] * z[k], -(1 - q2) * Q[k + 1]))

    for k in range(1, n + 1):
        for i in range(1, k):
            identities.append(NamedIdentity(f"Q-commute[z{i},k={k}]", z[i] * Q[k], Q[k] * z[i]))
            identities.append(NamedIdentity(f"Q-commute[z{i}#,k={k}]", zs[i] * Q[k], Q[k] * zs[i]))
        for j in range(k, n + 1):
            identities.append(NamedIdentity(f"Q-scale[z{j},k={k}]", z[j] * Q[k], q2 * Q[k] * z[j]))
            identities.append(NamedIdentity(f"Q-scale[z{j}#,k={k}]", Q[k] * zs[j], q2 * zs[j] * Q[k]))

    for k in range(1, n + 1):
        for degree in range(1, max_degree + 1):
            power = Q[k] ** degree
            scale = q ** (2 * degree)
            for i in range(1, k):
                identities.append(NamedIdentity(
                    f"Qpow-commute[z{i},k={k},deg={degree}]", z[i] * power, power * z[i]))
                identities.append(NamedIdentity(
                    f"Qpow-commute[z{i}#,k={k},deg={degree}]", zs[i] * power, power * zs[i]))
            for j in range(k, n + 1):
                identities.append(NamedIdentity(
                    f"Qpow-scale[z{j},k={k},deg={degree}]", z[j] * power, scale * power * z[j]))
                identities.append(NamedIdentity(
                    f"Qpow-scale[z{j}#,k={k},deg={degree}]", power * zs[j], scale * zs[j] * power))
    return identities


def _words_up_to(n: int, max_len: int) -> Iterator[Word]:
    alphabet = _alphabet(n)
    for length in range(max_len + 1):
        for word in product(alphabet, repeat=length):
            yield word


def _sampled_words(n: int, max_len: int, count: int, seed: int) -> Iterator[Word]:
    rng = np.random.default_rng(seed)
    alphabet = _alphabet(n)
    for _ in range(count):
        length = int(rng.integers(2, max_len + 1))
        picks = rng.integers(0, len(alphabet), size=length)
        yield tuple(alphabet[int(i)] for i in picks)


def check_local_confluence(n: int, max_len: int, seed: Optional[int] = None) -> ConfluenceReport:
    """
    Reduce each word by every distinct first rule application and compare the normal forms.

    Words up to `max_len` are enumerated exhaustively unless their number exceeds
    the configured threshold, in which case a seeded random sample is used.
    """
    if max_len < 3:
        raise InvalidParameterError(f"max_len must be >= 3, got {max_len}")
    seed = settings.seed if seed is None else seed
    total = sum((2 * n) ** length for length in range(max_len + 1))
    sampled = total > settings.confluence_threshold
    words = (
        _sampled_words(n, max_len, settings.confluence_sample_size, seed)
        if sampled
        else _words_up_to(n, max_len)
    )

    checked = overlaps = max_chain = 0
    divergent: List[DivergentWord] = []
    for word in words:
        checked += 1
        max_chain = max(max_chain, reduction_depth(word, n))
        positions = redex_positions(word, n)
        if len(positions) < 2:
            continue
        overlaps += 1
        forms = {
            str(QPolynomial(n, _normalize_terms(rewrite_at(word, p, n), n)))
            for p in positions
        }
        if len(forms) > 1:
            logger.warning("Divergent reduction", word=word_to_str(word), normal_forms=sorted(forms))
            divergent.append(DivergentWord(word=word_to_str(word), normal_forms=sorted(forms)))

    report = ConfluenceReport(
        n=n,
        max_len=max_len,
        words_checked=checked,
        overlaps_checked=overlaps,
        sampled=sampled,
        max_chain=max_chain,
        chain_bound=reduction_bound(max_len),
        divergent=divergent,
    )
    logger.info("Confluence check finished", n=n, max_len=max_len, words=checked,
                sampled=sampled, confluent=report.confluent)
    return report


def coefficient_ring_violations(n: int, max_len: int = 3) -> List[str]:
    """
    Words whose normal form has a coefficient outside Z[q].

    Every word of length <= `max_len` is reduced with coefficient 1.
    """
    violations = [
        word_to_str(word)
        for word in _words_up_to(n, max_len)
        if not normal_form(QPolynomial.monomial(word, n)).in_integer_ring()
    ]
    if violations:
        logger.warning("Coefficients left Z[q]", n=n, words=violations[:10], count=len(violations))
    return violations


@dataclass(frozen=True)
class NumericPolynomial:
    """Polynomial with floating complex coefficients, produced by `evaluate_at_q`."""
    n: int
    q_value: float
    terms: Tuple[Tuple[Word, complex], ...]

    def coefficient(self, word: Word) -> complex:
        return dict(self.terms).get(tuple(word), 0j)

    def degree(self) -> int:
        return max((len(word) for word, _ in self.terms), default=0)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(f"({c:.12g})*{word_to_str(w)}" for w, c in self.terms)


def evaluate_at_q(p: QPolynomial, q_value: float) -> NumericPolynomial:
    if not 0 < q_value < 1:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q_value}")
    terms = tuple((word, complex(c.evaluate(q_value))) for word, c in p.terms())
    return NumericPolynomial(p.n, float(q_value), tuple((w, c) for w, c in terms if c != 0))


_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)|(?P<int>\d+)|(?P<gen>z(?P<index>\d+)(?P<star>#?))|(?P<q>q)|(?P<op>[-+*^()−])"
)


class _Token(NamedTuple):
    kind: str
    value: str
    position: int


def _tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    position = 0
    while position < len(text):
        match = _TOKEN_RE.match(text, position)
        if match is None:
            raise ExpressionSyntaxError(f"unexpected character {text[position]!r}", position, text)
        kind = match.lastgroup
        if kind == "index" or kind == "star":
            kind = "gen"
        if kind != "ws":
            value = match.group(0).replace("−", "-")
            tokens.append(_Token(kind, value, position))
        position = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.tokens = _tokenize(text)
        self.index = 0

    def _peek(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _error(self, message: str, token: Optional[_Token] = None) -> ExpressionSyntaxError:
        token = token or self._peek()
        return ExpressionSyntaxError(message, token.position, self.text)

    def parse(self) -> QPolynomial:
        if self._peek().kind == "end":
            raise self._error("empty expression")
        value = self._expr()
        if self._peek().kind != "end":
            raise self._error(f"unexpected {self._peek().value!r}")
        return value

    def _expr(self) -> QPolynomial:
        value = self._term()
        while self._peek().value in ("+", "-") and self._peek().kind == "op":
            op = self._advance().value
            rhs = self._term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def _term(self) -> QPolynomial:
        value = self._factor()
        while self._peek().kind == "op" and self._peek().value == "*":
            self._advance()
            value = value * self._factor()
        return value

    def _factor(self) -> QPolynomial:
        token = self._peek()
        if token.kind == "op" and token.value in ("+", "-"):
            self._advance()
            value = self._factor()
            return value if token.value == "+" else -value
        return self._power()

    def _power(self) -> QPolynomial:
        base = self._atom()
        if not (self._peek().kind == "op" and self._peek().value == "^"):
            return base
        caret = self._advance()
        sign = 1
        if self._peek().kind == "op" and self._peek().value in ("+", "-"):
            sign = -1 if self._advance().value == "-" else 1
        token = self._advance()
        if token.kind != "int":
            raise self._error("exponent must be an integer", token)
        exponent = sign * int(token.value)
        if exponent >= 0:
            return base ** exponent
        words = base.words()
        if words != [()] or not base.coefficient(()).is_monomial():
            raise self._error("negative exponent requires a q-monomial", caret)
        return QPolynomial.constant(base.coefficient(()) ** exponent, self.n)

    def _atom(self) -> QPolynomial:
        token = self._advance()
        if token.kind == "int":
            return QPolynomial.constant(int(token.value), self.n)
        if token.kind == "q":
            return QPolynomial.constant(LaurentQ.q_power(1), self.n)
        if token.kind == "gen":
            starred = token.value.endswith("#")
            index = int(token.value[1:-1] if starred else token.value[1:])
            if not 1 <= index <= self.n:
                raise GeneratorIndexError(
                    f"generator z{index} at position {token.position} outside 1..{self.n}")
            return QPolynomial.generator(index, self.n, starred)
        if token.kind == "op" and token.value == "(":
            value = self._expr()
            closing = self._advance()
            if closing.value != ")":
                raise self._error("expected ')'", closing)
            return value
        if token.kind == "end":
            raise self._error("unexpected end of input", token)
        raise self._error(f"unexpected {token.value!r}", token)


def parse_expr(text: str, n: int) -> QPolynomial:
    """
    Parse an expression into an un-normalized QPolynomial.

    Args:
        text: expression in the documented grammar
        n: number of generators

    Returns:
        QPolynomial: the parsed value
    """
    if n < 1:
        raise InvalidParameterError(f"dimension n must be >= 1, got {n}")
    return _Parser(text, n).parse()
