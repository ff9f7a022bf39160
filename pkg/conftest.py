"""
Shared fixtures for the workbench tests.
"""
from pathlib import Path

import pytest
from hypothesis import settings as hypothesis_settings

from app.models.config_models import FiberSpectrum, MeasureSpec, RunConfig, TruncationSpec
from app.models.report_models import SuiteName
from app.services.qrep import build_component_abstract

hypothesis_settings.register_profile("qplane", deadline=None, derandomize=True, max_examples=40)
hypothesis_settings.load_profile("qplane")

CORPUS = Path(__file__).parent / "corpus"
Q = 0.5
SAMPLES = (0.6, 0.9, 1.0)


@pytest.fixture
def corpus_dir() -> Path:
    return CORPUS


@pytest.fixture
def truncation() -> TruncationSpec:
    return TruncationSpec(n=2, q_value=Q, N=5, M=5, d=2)


@pytest.fixture
def fiber() -> FiberSpectrum:
    return FiberSpectrum(q_value=Q, samples=SAMPLES)


@pytest.fixture
def measure() -> MeasureSpec:
    return MeasureSpec(q_value=Q, samples=SAMPLES)


@pytest.fixture
def components(truncation, fiber):
    """H_0, H_1, H_2 for n = 2 from the abstract builder."""
    return [build_component_abstract(k, truncation, fiber) for k in range(truncation.n + 1)]


@pytest.fixture
def top(components):
    return components[-1]


@pytest.fixture
def small_config() -> RunConfig:
    return RunConfig(
        n=2,
        q="1/2",
        N=5,
        M=5,
        d=2,
        samples=list(SAMPLES),
        suites=[SuiteName.RELATIONS],
        sweep=[3, 4],
        symbol_pairs=4,
        seed=7,
    )
