import numpy as np
import pytest
from pydantic import ValidationError

from app.models.config_models import FiberSpectrum, MeasureSpec, TruncationSpec
from app.services.opkernel import SparseOperator, combination_residual
from app.services.qalgebra import evaluate_at_q, parse_expr
from app.services.qrep import (
    Q_operator,
    RepresentationSum,
    apply_polynomial,
    axis_positions,
    build_component_abstract,
    build_component_lattice,
    build_qhyp,
    build_qnormal,
    builder_deviation,
    compare_builders,
    spectral_projection,
    stratum_intervals,
    stratum_projection,
    verify_auxiliary,
    verify_relations,
    verify_spectrum,
    w_operator,
)
from app.utils.errors import DomainError, GeneratorIndexError, InvalidParameterError

Q = 0.5


class TestModelOperators:
    def test_qhyperbolic_relation_below_the_edge(self):
        N = 6
        w = build_qhyp(N, Q)
        terms = [(1, w @ w.adjoint()), (-Q * Q, w.adjoint() @ w), (1 - Q * Q, SparseOperator.identity(N))]
        assert combination_residual(terms, np.arange(N - 1)) <= 1e-12

    def test_qhyperbolic_weights(self):
        w = build_qhyp(3, Q)
        assert w.entries()[(1, 0)].real == pytest.approx(np.sqrt(Q ** -2 - 1))
        assert w.entries()[(2, 1)].real == pytest.approx(np.sqrt(Q ** -4 - 1))

    def test_qnormal_relation_inside_the_window(self, fiber):
        M = 4
        z = build_qnormal(fiber, M, Q)
        terms = [(1, z @ z.adjoint()), (-Q * Q, z.adjoint() @ z)]
        inner = [s * (2 * M + 1) + i for s in range(len(fiber)) for i in range(1, 2 * M)]
        assert combination_residual(terms, np.array(inner)) <= 1e-12

    def test_q_must_match_the_fiber(self, fiber):
        with pytest.raises(InvalidParameterError):
            build_qnormal(fiber, 3, 0.3)


class TestParameters:
    def test_margin_must_leave_an_interior(self):
        with pytest.raises(ValidationError):
            TruncationSpec(n=2, q_value=Q, N=3, M=5, d=3)

    def test_fiber_samples_in_range(self):
        with pytest.raises(ValidationError):
            FiberSpectrum(q_value=Q, samples=(0.4, 1.0))
        assert FiberSpectrum.filtered([0.4, 0.7, 1.0], Q).samples == (0.7, 1.0)

    def test_measure_is_defined_by_its_orbits(self):
        assert set(MeasureSpec.model_fields) == {"q_value", "samples"}
        with pytest.raises(ValidationError):
            MeasureSpec(q_value=Q, samples=(0.5,))

    def test_component_index_in_range(self, truncation, fiber):
        with pytest.raises(InvalidParameterError):
            build_component_abstract(3, truncation, fiber)


class TestComponents:
    def test_dimensions(self, components):
        assert [c.dim for c in components] == [1, 3 * 11, 3 * 5 * 11]

    def test_vacuum_component(self, components):
        h0 = components[0]
        assert h0.z(1).nnz == 0 and h0.z(2).nnz == 0
        assert h0.spectral_values(1).tolist() == [0.0]

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_relations_hold_on_each_component(self, components, k):
        report = verify_relations(components[k])
        assert report.passed, [r for r in report.records if not r.passed]
        assert {r.relation for r in report.records} >= {"commute.zz", "qhyperbolic", "qnormal", "fQ.scale"}

    def test_relations_hold_on_the_direct_sum(self, components):
        report = verify_relations(RepresentationSum(components))
        assert report.passed
        assert report.component is None

    @pytest.mark.parametrize("k", [1, 2])
    def test_spectrum(self, components, k):
        report = verify_spectrum(components[k])
        assert report.passed, [r for r in report.records if not r.passed]

    def test_q_is_diagonal_with_predicted_values(self, top):
        Q1 = Q_operator(top, 1)
        interior = top.interior
        expected = Q ** (-2 * top.basis.indices[interior].sum(axis=1)) * top.sample_values[interior] ** 2
        assert np.allclose(Q1.diagonal_values().real[interior], expected, rtol=1e-12)

    def test_generators_beyond_k_vanish(self, components):
        h1 = components[1]
        assert h1.z(2).nnz == 0
        assert not h1.spectral_values(2).any()
        with pytest.raises(GeneratorIndexError):
            h1.z(3)

    def test_kernel_of_q_is_the_lower_components(self, components):
        total = RepresentationSum(components)
        assert total.kernel_positions(1).tolist() == [0]
        h1_interior = (components[1].interior + 1).tolist()
        assert total.kernel_positions(2).tolist() == [0] + h1_interior
        assert total.block_of(5) is components[1]

    def test_kernel_is_read_from_the_composed_operator(self, truncation, fiber, monkeypatch):
        components = [build_component_abstract(k, truncation, fiber) for k in range(3)]
        top = components[2]
        monkeypatch.setattr(top, "z", lambda j: SparseOperator.zeros(top.dim))
        total = RepresentationSum(components)
        kernel = set(total.kernel_positions(1).tolist())
        assert kernel >= set((top.interior + total.offsets[2]).tolist())

    def test_polynomial_image_matches_the_defect_relation(self, top):
        poly = parse_expr("z1*z1# - q^2*z1#*z1 + (1 - q^2)*z2#*z2", 2)
        operator = apply_polynomial(top, evaluate_at_q(poly, Q))
        scale = apply_polynomial(top, evaluate_at_q(parse_expr("z1*z1#", 2), Q)).max_abs()
        residual = np.abs(operator.to_dense()[:, top.interior]).max() / scale
        assert residual <= 1e-12


class TestSpectralCalculus:
    def test_stratum_intervals(self):
        assert stratum_intervals(Q, [1], 1) == [(1, (1.0, 4.0))]
        assert stratum_intervals(Q, [2, -1], 1) == [(1, (1.0, 4.0)), (2, (0.0625, 0.25))]

    def test_stratum_projection_selects_the_labels(self, top):
        projection = stratum_projection(top, [2, 0])
        selected = np.flatnonzero(projection.diagonal_values().real)
        labels = top.basis.indices[selected]
        assert len(selected) == 3
        assert (labels == [2, 0]).all()

    def test_spectral_projection_of_h1(self, components):
        h1 = components[1]
        projection = spectral_projection(h1, 1, (Q ** 2, 1.0))
        selected = np.flatnonzero(projection.diagonal_values().real)
        assert h1.basis.indices[selected, 0].tolist() == [0, 0, 0]


class TestAuxiliaryOperators:
    def test_w_needs_a_higher_coordinate(self, components):
        with pytest.raises(DomainError):
            w_operator(components[1], 1)

    def test_auxiliary_checks(self, top):
        report = verify_auxiliary(top)
        assert report.passed, [r for r in report.records if not r.passed]
        assert {r.relation for r in report.records} == {"polar", "w.qhyperbolic", "w.commute", "w.slice"}

    def test_axis_slice_is_the_qhyperbolic_model(self, top):
        anchor = int(top.interior[0])
        positions = axis_positions(top, 1, anchor)
        assert top.basis.indices[positions, 0].tolist() == [1, 2, 3, 4, 5]
        block = w_operator(top, 1).restrict(positions)
        model = build_qhyp(top.truncation.N, Q)
        assert (block - model).max_abs() <= 1e-12 * model.max_abs()


class TestBuilders:
    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_builders_agree(self, truncation, measure, k):
        record = compare_builders(k, truncation, measure)
        assert record.passed
        assert record.relation == "builders"

    def test_lattice_component_satisfies_the_relations(self, truncation, measure):
        report = verify_relations(build_component_lattice(2, truncation, measure))
        assert report.passed

    def test_deviation_detects_a_different_q(self, measure):
        first = build_component_abstract(1, TruncationSpec(n=1, q_value=Q, N=3, M=3, d=1), measure.fiber())
        other = MeasureSpec(q_value=0.55, samples=(0.6, 0.9, 1.0))
        second = build_component_lattice(1, TruncationSpec(n=1, q_value=0.55, N=3, M=3, d=1), other)
        assert builder_deviation(first, second) > 1e-3


ACCEPTANCE = [(n, q) for q in (0.3, 0.5, 0.9) for n in (1, 2, 3, 4)]


@pytest.fixture(scope="module", params=ACCEPTANCE, ids=lambda p: f"n{p[0]}-q{p[1]}")
def full_size(request):
    n, q = request.param
    truncation = TruncationSpec(n=n, q_value=q, N=8, M=8, d=3)
    measure = MeasureSpec(q_value=q, samples=((1 + q) / 2, 1.0))
    components = [build_component_abstract(k, truncation, measure.fiber()) for k in range(n + 1)]
    return truncation, measure, components


class TestFullSize:
    def test_relations(self, full_size):
        _, _, components = full_size
        for component in components:
            report = verify_relations(component)
            assert report.passed, [r for r in report.records if not r.passed]

    def test_spectrum(self, full_size):
        _, _, components = full_size
        for component in components[1:]:
            report = verify_spectrum(component)
            assert report.passed, [r for r in report.records if not r.passed]

    def test_builders_agree_on_the_top_component(self, full_size):
        truncation, measure, _ = full_size
        assert compare_builders(truncation.n, truncation, measure).passed
