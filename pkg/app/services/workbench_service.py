"""
Workbench service: runs the verification suites and the batch operations
behind the CLI and the HTTP API.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import structlog
import sympy

from app.config import get_settings
from app.models.config_models import FiberSpectrum, RunConfig
from app.models.report_models import (
    ComponentSummary,
    ConfluenceReport,
    NormRow,
    ReportRecord,
    SeparationReport,
    SuiteName,
)
from app.services import qalgebra, qcstar, qrep
from app.services.opkernel import SparseOperator, write_matrix_market
from app.utils.errors import DomainError, InvalidParameterError

logger = structlog.get_logger()
settings = get_settings()

OPERATOR_NAMES = ("z", "Q", "S", "w")
SYMBOL_SUITE_MAX_N = 3


def _record(suite: SuiteName, relation: str, residual: float, tolerance: float,
            component: Optional[int] = None, interior_size: int = 0) -> ReportRecord:
    return ReportRecord(
        suite=suite.value,
        relation=relation,
        component=component,
        max_residual=float(residual),
        interior_size=interior_size,
        tolerance=tolerance,
        passed=bool(residual <= tolerance),
    )


class WorkbenchService:
    """Verification suites over one RunConfig."""

    def __init__(self):
        self._started = False

    def _start(self) -> None:
        if not self._started:
            self._started = True
            logger.info("Workbench service initialized", default_n=settings.default_n, default_q=settings.default_q)

    def normalize(self, expr: str, n: int) -> str:
        self._start()
        return str(qalgebra.normal_form(qalgebra.parse_expr(expr, n)))

    def identity(self, lhs: str, rhs: str, n: int) -> qalgebra.IdentityResult:
        self._start()
        return qalgebra.verify_identity(qalgebra.parse_expr(lhs, n), qalgebra.parse_expr(rhs, n))

    def confluence(self, n: int, max_len: int = 4, seed: Optional[int] = None) -> ConfluenceReport:
        self._start()
        return qalgebra.check_local_confluence(n, max_len, seed=seed)

    def build_components(self, config: RunConfig, builder: str = qrep.ABSTRACT) -> List[qrep.RepComponent]:
        self._start()
        truncation = config.truncation()
        if builder == qrep.ABSTRACT:
            return [qrep.build_component_abstract(k, truncation, config.fiber()) for k in range(config.n + 1)]
        if builder == qrep.LATTICE:
            return [qrep.build_component_lattice(k, truncation, config.measure()) for k in range(config.n + 1)]
        raise InvalidParameterError(f"unknown builder {builder!r}; expected {qrep.ABSTRACT} or {qrep.LATTICE}")

    def summarize(self, components: Sequence[qrep.RepComponent]) -> List[ComponentSummary]:
        return [
            ComponentSummary(
                component=c.k,
                builder=c.builder,
                dim=c.dim,
                interior_size=len(c.interior),
                nnz=c.nnz(),
                truncation=c.truncation.label(),
                samples=list(c.fiber.samples),
            )
            for c in components
        ]

    # Suites

    def symbolic_suite(self, config: RunConfig) -> List[ReportRecord]:
        records = []
        for identity in qalgebra.relation_identities(config.n):
            result = qalgebra.verify_identity(identity.lhs, identity.rhs)
            residual = 0.0 if result.holds else float(len(result.residual.terms()))
            records.append(_record(SuiteName.SYMBOLIC, identity.label, residual, config.tolerance))
        violations = qalgebra.coefficient_ring_violations(config.n)
        records.append(_record(SuiteName.SYMBOLIC, "coefficient_ring", len(violations), config.tolerance))

        # the same identities hold numerically once evaluated on a component
        components = self.build_components(config)
        top = components[-1]
        for identity in qalgebra.relation_identities(config.n, max_degree=1):
            difference = qalgebra.evaluate_at_q(identity.lhs - identity.rhs, config.q_value)
            operator = qrep.apply_polynomial(top, difference)
            scale = max(1.0, qrep.apply_polynomial(top, qalgebra.evaluate_at_q(identity.lhs, config.q_value)).max_abs())
            residual = float(np.abs(operator.matrix[top.interior].toarray()).max(initial=0.0)) / scale
            records.append(_record(SuiteName.SYMBOLIC, f"operator:{identity.label}", residual,
                                   config.tolerance, component=top.k, interior_size=len(top.interior)))
        return records

    def relations_suite(self, config: RunConfig, components: Sequence[qrep.RepComponent]) -> List[ReportRecord]:
        records = []
        for component in components:
            records.extend(qrep.verify_relations(component, config.tolerance).records)
        records.extend(qrep.verify_relations(qrep.RepresentationSum(components), config.tolerance).records)
        return records

    def spectrum_suite(self, config: RunConfig, components: Sequence[qrep.RepComponent]) -> List[ReportRecord]:
        records = []
        for component in components:
            records.extend(qrep.verify_spectrum(component).records)

        # on the interior, ker Q_{j} is exactly H_0 + .. + H_{j-1}
        total = qrep.RepresentationSum(components)
        mismatches = 0
        for j in range(1, config.n + 1):
            expected = total.interior[total.interior < total.offsets[j]]
            mismatches += len(set(total.kernel_positions(j).tolist()) ^ set(expected.tolist()))
        records.append(_record(SuiteName.SPECTRUM, "Q.kernel", mismatches, settings.spectrum_rtol,
                               interior_size=len(total.interior)))
        return records

    def equivalence_suite(self, config: RunConfig) -> List[ReportRecord]:
        truncation = config.truncation()
        return [qrep.compare_builders(k, truncation, config.measure()) for k in range(config.n + 1)]

    def auxiliary_suite(self, config: RunConfig, components: Sequence[qrep.RepComponent]) -> List[ReportRecord]:
        records = []
        for component in components:
            records.extend(qrep.verify_auxiliary(component, config.tolerance).records)
        return records

    def symbols_suite(self, config: RunConfig, components: Sequence[qrep.RepComponent]) -> List[ReportRecord]:
        """Crossed-symbol products against matrices, *-compatibility of pi_k and the symbol pullback."""
        n = config.n
        if n > SYMBOL_SUITE_MAX_N:
            logger.warning("Symbol suite skipped", n=n, max_n=SYMBOL_SUITE_MAX_N)
            return []
        rng = np.random.default_rng(config.seed)
        top = components[-1]
        tolerance = config.tolerance

        deviation = 0.0
        for _ in range(config.symbol_pairs):
            x = qcstar.random_symbol(n, rng)
            y = qcstar.random_symbol(n, rng)
            deviation = max(deviation, qcstar.symbol_vs_matrix(x, y, top))
        records = [_record(SuiteName.SYMBOLS, "symbol.product", deviation, tolerance,
                           component=top.k, interior_size=len(top.interior))]

        failures = 0
        for _ in range(3):
            x, y, z = (qcstar.random_symbol(n, rng, n_terms=1) for _ in range(3))
            if not ((x * y) * z).equals(x * (y * z), q=config.q_value):
                failures += 1
        records.append(_record(SuiteName.SYMBOLS, "symbol.associativity", failures, tolerance))

        star_deviation = pullback_deviation = 0.0
        for index in range(config.symbol_pairs):
            term = qcstar.random_generator_term(n, rng, f"random{index}")
            for component in components:
                image = qcstar.pi_k(term, component)
                adjoint = qcstar.pi_k(term.star(), component)
                scale = max(1.0, image.max_abs())
                star_deviation = max(star_deviation, (adjoint - image.adjoint()).max_abs() / scale)
            symbol_image = qcstar.symbol_operator(qcstar.term_to_symbol(term), top)
            scale = max(1.0, symbol_image.max_abs())
            pullback_deviation = max(pullback_deviation, (qcstar.pi_k(term, top) - symbol_image).max_abs() / scale)
        records.append(_record(SuiteName.SYMBOLS, "pi.star", star_deviation, tolerance))
        records.append(_record(SuiteName.SYMBOLS, "pi.symbol_pullback", pullback_deviation, tolerance,
                               component=top.k, interior_size=top.dim))

        # pi_k for k < n is multiplicative once no fiber sample sits at 1
        below_one = tuple(a for a in config.fiber().samples if a < 1.0)
        multiplicativity = 0.0
        if below_one:
            fiber = FiberSpectrum(q_value=config.q_value, samples=below_one)
            for k in range(1, n):
                component = qrep.build_component_abstract(k, config.truncation(), fiber)
                for _ in range(config.symbol_pairs):
                    x = qcstar.random_symbol(n, rng, coordinates=k)
                    y = qcstar.random_symbol(n, rng, coordinates=k)
                    multiplicativity = max(multiplicativity,
                                           qcstar.component_multiplicativity_defect(x, y, component))
        records.append(_record(SuiteName.SYMBOLS, "pi_k.multiplicative", multiplicativity, tolerance))
        return records

    def norm_rows(self, config: RunConfig, terms: Optional[Sequence[qcstar.GeneratorTerm]] = None) -> List[NormRow]:
        self._start()
        if terms is None:
            rng = np.random.default_rng(config.seed)
            terms = [qcstar.random_generator_term(config.n, rng, f"random{i}") for i in range(config.symbol_pairs)]
        sweep = [config.truncation(size) for size in config.sweep]
        return qcstar.norm_estimate(terms, config.fiber(), sweep, seed=config.seed)

    def norms_suite(self, config: RunConfig) -> List[ReportRecord]:
        rows = self.norm_rows(config)
        previous: Dict[tuple, float] = {}
        decrease = 0.0
        for row in rows:
            key = (row.term_id, row.k)
            if key in previous:
                decrease = max(decrease, previous[key] - row.norm_lb)
            previous[key] = row.norm_lb
        records = [_record(SuiteName.NORMS, "norm.monotone", decrease, config.tolerance)]

        # pure multiplication: the bound is the lattice max of |f|
        r = qcstar.coordinate_symbols(config.n)
        term = qcstar.GeneratorTerm("decay", qcstar.FunctionExpr(r[-1] * sympy.exp(-sum(r)), config.n),
                                    (0,) * config.n)
        size = config.sweep[-1]
        truncation = config.truncation(size)
        lattice_max = max(
            float(np.max(np.abs(term.f.evaluate(qrep.build_component_abstract(k, truncation, config.fiber()).radial,
                                                config.q_value))))
            for k in range(config.n + 1)
        )
        estimate = [row for row in qcstar.norm_estimate([term], config.fiber(), [truncation]) if row.k is None][0]
        records.append(_record(SuiteName.NORMS, "norm.multiplication_exact", abs(estimate.norm_lb - lattice_max),
                               config.tolerance))
        return records

    def separation(self, config: RunConfig, family: Optional[Sequence[qcstar.GeneratorTerm]] = None,
                   pair_count: int = 1000) -> SeparationReport:
        self._start()
        family = qcstar.separation_family(config.n) if family is None else family
        rng = np.random.default_rng(config.seed)
        pairs = qcstar.random_point_pairs(config.n, pair_count, rng)
        return qcstar.classical_separation(pairs, family, q=config.q_value)

    def separation_suite(self, config: RunConfig) -> List[ReportRecord]:
        report = self.separation(config)
        records = [_record(SuiteName.SEPARATION, "separation.random", len(report.unseparated), config.tolerance)]

        # a phase on a zero coordinate is not a different point
        family = qcstar.separation_family(config.n)
        moduli = tuple([0.0] + [1.0] * (config.n - 1))
        same = [(qcstar.PolarPoint(moduli, (0.0,) * config.n),
                 qcstar.PolarPoint(moduli, tuple([1.234] + [0.0] * (config.n - 1))))]
        ghost = qcstar.classical_separation(same, family, q=config.q_value)
        records.append(_record(SuiteName.SEPARATION, "separation.zero_phase",
                               1 - len(ghost.unseparated), config.tolerance))
        return records

    def confluence_suite(self, config: RunConfig) -> List[ReportRecord]:
        report = self.confluence(config.n, 4, seed=config.seed)
        residual = len(report.divergent) + (0 if report.max_chain <= report.chain_bound else 1)
        return [_record(SuiteName.CONFLUENCE, "confluence", residual, config.tolerance)]

    def run_verification(self, config: RunConfig) -> List[ReportRecord]:
        """Run the selected suites and return their records in canonical order."""
        self._start()
        suites = set(config.suites)
        records: List[ReportRecord] = []
        needs_components = suites & {SuiteName.RELATIONS, SuiteName.SPECTRUM, SuiteName.AUXILIARY, SuiteName.SYMBOLS}
        components = self.build_components(config) if needs_components else []

        if SuiteName.SYMBOLIC in suites:
            records += self.symbolic_suite(config)
        if SuiteName.RELATIONS in suites:
            records += self.relations_suite(config, components)
        if SuiteName.SPECTRUM in suites:
            records += self.spectrum_suite(config, components)
        if SuiteName.EQUIVALENCE in suites:
            records += self.equivalence_suite(config)
        if SuiteName.AUXILIARY in suites:
            records += self.auxiliary_suite(config, components)
        if SuiteName.SYMBOLS in suites:
            records += self.symbols_suite(config, components)
        if SuiteName.NORMS in suites:
            records += self.norms_suite(config)
        if SuiteName.SEPARATION in suites:
            records += self.separation_suite(config)
        if SuiteName.CONFLUENCE in suites:
            records += self.confluence_suite(config)

        records.sort(key=ReportRecord.sort_key)
        failed = [r for r in records if not r.passed]
        for record in failed:
            logger.warning("Check failed", suite=record.suite, relation=record.relation,
                           component=record.component, residual=record.max_residual)
        logger.info("Verification finished", n=config.n, q=config.q, records=len(records), failed=len(failed))
        return records

    # Export

    def _operators(self, component: qrep.RepComponent, what: str,
                   terms: Dict[str, qcstar.GeneratorTerm]) -> Dict[str, SparseOperator]:
        if what in terms:
            return {f"gen-{what}": qcstar.pi_k(terms[what], component)}
        if what not in OPERATOR_NAMES:
            raise InvalidParameterError(
                f"unknown operator {what!r}; expected one of {', '.join(OPERATOR_NAMES)} or a generator id")
        out = {}
        for j in range(1, component.n + 1):
            if what == "z":
                out[f"z{j}"] = component.z(j)
            elif what == "S":
                out[f"S{j}"] = component.shift(j)
            elif what == "Q":
                out[f"Q{j}"] = qrep.Q_operator(component, j)
            elif j < component.k:
                out[f"w{j}"] = qrep.w_operator(component, j)
        return out

    def export(self, config: RunConfig, what: str, out_dir: Optional[Union[str, Path]] = None,
               components: Optional[Sequence[int]] = None,
               terms: Optional[Sequence[qcstar.GeneratorTerm]] = None) -> List[Path]:
        """
        Write one Matrix Market file per operator per component.

        Files are named <operator>_k<k>_N<N>_M<M>.mtx inside `out_dir`.
        """
        out_dir = Path(out_dir or config.export_dir)
        by_id = {t.term_id: t for t in (terms or [])}
        wanted = range(config.n + 1) if components is None else components
        built = self.build_components(config)
        paths = []
        for k in wanted:
            if not 0 <= k <= config.n:
                raise InvalidParameterError(f"component {k} outside 0..{config.n}")
            component = built[k]
            operators = self._operators(component, what, by_id)
            if what == "w" and not operators and components is not None:
                raise DomainError(f"no w_j is defined on H_{k}")
            truncation = component.truncation
            for name, operator in operators.items():
                path = out_dir / f"{name}_k{k}_N{truncation.N}_M{truncation.M}.mtx"
                comment = f"{name} on H_{k}, q={config.q}, {truncation.label()}, builder={component.builder}"
                paths.append(write_matrix_market(operator, path, comment=comment))
        logger.info("Operators exported", what=what, files=len(paths), directory=str(out_dir))
        return paths


# Global workbench service instance
workbench_service = WorkbenchService()
