import numpy as np
import pytest
from pydantic import ValidationError

from app.models.config_models import RunConfig, load_run_config, parse_config_text
from app.models.report_models import ReportRecord, SuiteName
from app.services import qrep
from app.services.opkernel import SparseOperator, read_matrix_market
from app.services.workbench_service import WorkbenchService, workbench_service
from app.utils.errors import ConfigError, DomainError, InvalidParameterError, ReportIOError
from app.utils.formatters import format_report, format_summary, to_json_line
from app.utils.logging_config import configure_logging


def with_suites(config: RunConfig, *suites: SuiteName) -> RunConfig:
    return config.model_copy(update={"suites": list(suites)})


class TestRunConfig:
    def test_parse_config_text(self):
        values = parse_config_text("n = 2  # generators\nq = 1/3\n\nsamples = 0.5, 1.0\n")
        assert values == {"n": "2", "q": "1/3", "samples": ["0.5", "1.0"]}

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config_text("colour = blue")

    def test_missing_assignment(self):
        with pytest.raises(ConfigError):
            parse_config_text("n 2")

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n = 1\nq = 1/3\nN = 4\nM = 4\nd = 1\nsuites = relations, spectrum\n")
        config = load_run_config(path, {"M": 6, "seed": None})
        assert (config.n, config.q, config.N, config.M) == (1, "1/3", 4, 6)
        assert config.suites == [SuiteName.RELATIONS, SuiteName.SPECTRUM]
        assert config.q_value == pytest.approx(1 / 3)

    @pytest.mark.parametrize("overrides", [{"q": "2"}, {"q": "abc"}, {"N": 3, "d": 3}, {"samples": [0.1]},
                                           {"sweep": [1, 4]}])
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigError):
            load_run_config(None, overrides)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ReportIOError):
            load_run_config(tmp_path / "absent.cfg")

    def test_samples_outside_the_fiber_are_dropped(self):
        config = RunConfig(q="1/2", samples=[0.3, 0.7, 1.0])
        assert config.fiber().samples == (0.7, 1.0)

    def test_sweep_must_increase(self):
        with pytest.raises(ValidationError):
            RunConfig(sweep=[4, 4])

    def test_sweep_truncation_keeps_an_interior(self):
        truncation = RunConfig(d=3).truncation(2)
        assert (truncation.N, truncation.M, truncation.d) == (2, 2, 1)


class TestSuites:
    def test_symbolic(self, small_config):
        records = workbench_service.symbolic_suite(small_config)
        assert records and all(r.passed for r in records)
        assert any(r.relation.startswith("operator:") for r in records)
        assert [r.relation for r in records].count("coefficient_ring") == 1

    def test_structural_suites(self, small_config):
        config = with_suites(small_config, SuiteName.RELATIONS, SuiteName.SPECTRUM,
                             SuiteName.EQUIVALENCE, SuiteName.AUXILIARY)
        records = workbench_service.run_verification(config)
        failed = [r for r in records if not r.passed]
        assert not failed, failed
        assert records == sorted(records, key=ReportRecord.sort_key)
        assert {r.suite for r in records} == {"relations", "spectrum", "equivalence", "auxiliary"}
        assert any(r.relation == "Q.kernel" for r in records)

    def test_kernel_check_sees_a_vanishing_generator(self, small_config, monkeypatch):
        components = workbench_service.build_components(small_config)
        top = components[-1]
        monkeypatch.setattr(top, "z", lambda j: SparseOperator.zeros(top.dim))
        records = workbench_service.spectrum_suite(small_config, components)
        kernel = next(r for r in records if r.relation == "Q.kernel")
        assert not kernel.passed
        assert kernel.max_residual >= len(top.interior)

    def test_symbols(self, small_config):
        records = workbench_service.run_verification(with_suites(small_config, SuiteName.SYMBOLS))
        assert {r.relation for r in records} == {"symbol.product", "symbol.associativity",
                                                 "pi.star", "pi.symbol_pullback", "pi_k.multiplicative"}
        assert all(r.passed for r in records), [r for r in records if not r.passed]

    def test_symbols_skip_large_n(self, small_config):
        config = small_config.model_copy(update={"n": 4})
        assert workbench_service.symbols_suite(config, []) == []

    def test_norms(self, small_config):
        records = workbench_service.norms_suite(small_config)
        assert [r.relation for r in records] == ["norm.monotone", "norm.multiplication_exact"]
        assert all(r.passed for r in records)

    def test_separation(self, small_config):
        records = workbench_service.separation_suite(small_config)
        assert all(r.passed for r in records)

    def test_confluence(self, small_config):
        assert all(r.passed for r in workbench_service.confluence_suite(small_config))

    def test_identical_configs_give_identical_reports(self, small_config):
        config = with_suites(small_config, SuiteName.RELATIONS, SuiteName.SYMBOLS)
        first = format_report(workbench_service.run_verification(config))
        second = format_report(workbench_service.run_verification(config))
        assert first == second


class TestBuildAndExport:
    def test_summaries(self, small_config):
        components = workbench_service.build_components(small_config, builder="lattice")
        summaries = workbench_service.summarize(components)
        assert [s.component for s in summaries] == [0, 1, 2]
        assert summaries[2].dim == 3 * 5 * 11
        assert summaries[2].truncation == "N=5,M=5,d=2"

    def test_unknown_builder(self, small_config):
        with pytest.raises(InvalidParameterError):
            workbench_service.build_components(small_config, builder="dense")

    def test_export_generators(self, small_config, tmp_path):
        paths = workbench_service.export(small_config, "z", out_dir=tmp_path, components=[1])
        assert sorted(p.name for p in paths) == ["z1_k1_N5_M5.mtx", "z2_k1_N5_M5.mtx"]
        z1 = read_matrix_market(tmp_path / "z1_k1_N5_M5.mtx")
        built = qrep.build_component_abstract(1, small_config.truncation(), small_config.fiber())
        assert np.array_equal(z1.to_dense(), built.z(1).to_dense())

    def test_export_w_and_q(self, small_config, tmp_path):
        paths = workbench_service.export(small_config, "w", out_dir=tmp_path)
        assert [p.name for p in paths] == ["w1_k2_N5_M5.mtx"]
        paths = workbench_service.export(small_config, "Q", out_dir=tmp_path, components=[0])
        assert len(paths) == 2

    def test_export_generator_term(self, small_config, tmp_path):
        from app.services.qcstar import separation_family

        paths = workbench_service.export(small_config, "phase1", out_dir=tmp_path, components=[2],
                                         terms=separation_family(2))
        assert [p.name for p in paths] == ["gen-phase1_k2_N5_M5.mtx"]

    def test_w_on_a_low_component(self, small_config, tmp_path):
        with pytest.raises(DomainError):
            workbench_service.export(small_config, "w", out_dir=tmp_path, components=[1])

    def test_unknown_operator(self, small_config, tmp_path):
        with pytest.raises(InvalidParameterError):
            workbench_service.export(small_config, "x", out_dir=tmp_path)

    def test_component_out_of_range(self, small_config, tmp_path):
        with pytest.raises(InvalidParameterError):
            workbench_service.export(small_config, "z", out_dir=tmp_path, components=[3])


class TestFormatting:
    def test_json_line_uses_the_schema_alias(self):
        record = ReportRecord(suite="relations", relation="qnormal", component=1,
                              max_residual=0.0, tolerance=1e-10, passed=True)
        line = to_json_line(record)
        assert line.startswith('{"component": 1')
        assert '"schema": "qplane.report/1"' in line

    def test_summary(self):
        records = [
            ReportRecord(suite="relations", relation="qnormal", component=2,
                         max_residual=1e-3, tolerance=1e-10, passed=False),
            ReportRecord(suite="relations", relation="qhyperbolic", max_residual=0.0, tolerance=1e-10, passed=True),
        ]
        summary = format_summary(records)
        assert summary.splitlines()[0] == "FAIL relations/qnormal k=2 residual=1.000e-03 tol=1.000e-10"
        assert summary.splitlines()[-1] == "FAIL: 1/2 checks within tolerance"


class TestServiceLifecycle:
    def test_construction_is_silent(self, capsys):
        configure_logging("INFO", "json")
        service = WorkbenchService()
        assert "Workbench service initialized" not in capsys.readouterr().err
        service.normalize("z2*z1", 2)
        service.normalize("z1*z2", 2)
        assert capsys.readouterr().err.count("Workbench service initialized") == 1
