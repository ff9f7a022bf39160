"""
Pydantic models for run configuration and representation parameters.
"""
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.config import get_settings
from app.models.report_models import SuiteName
from app.utils.errors import ConfigError, ReportIOError

logger = structlog.get_logger()
settings = get_settings()

DEFAULT_SUITES = [
    SuiteName.SYMBOLIC,
    SuiteName.RELATIONS,
    SuiteName.SPECTRUM,
    SuiteName.EQUIVALENCE,
    SuiteName.AUXILIARY,
    SuiteName.SYMBOLS,
]


def parse_q(text: str) -> Fraction:
    """
    Parse a deformation parameter given as a rational or decimal string.

    Args:
        text: e.g. "1/2" or "0.3"

    Returns:
        Fraction: exact value of q
    """
    try:
        value = Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as e:
        raise ValueError(f"q must be a rational number, got {text!r}") from e
    if not 0 < value < 1:
        raise ValueError(f"q must lie in (0, 1), got {text}")
    return value


class TruncationSpec(BaseModel):
    """Index window of a truncated component and its interior margin."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=1, description="Number of generators")
    q_value: float = Field(..., gt=0, lt=1, description="Deformation parameter")
    N: int = Field(..., ge=2, description="Largest unilateral index")
    M: int = Field(..., ge=1, description="Bilateral window |i| <= M")
    d: int = Field(..., ge=0, description="Interior margin")

    @model_validator(mode="after")
    def validate_margin(self):
        """Interior must be nonempty."""
        if self.d >= min(self.N, self.M):
            raise ValueError(f"interior margin d={self.d} must be < min(N, M)={min(self.N, self.M)}")
        return self

    def label(self) -> str:
        return f"N={self.N},M={self.M},d={self.d}"


class FiberSpectrum(BaseModel):
    """Eigenvalue samples of the fiber operator, each in (q, 1]."""

    model_config = ConfigDict(frozen=True)

    q_value: float = Field(..., gt=0, lt=1)
    samples: Tuple[float, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_samples(self):
        """Every sample must satisfy q < a <= 1."""
        for a in self.samples:
            if not self.q_value < a <= 1.0:
                raise ValueError(f"fiber sample {a} outside (q, 1] for q={self.q_value}")
        return self

    @classmethod
    def filtered(cls, samples: List[float], q_value: float) -> "FiberSpectrum":
        """Keep the samples inside (q, 1]; at least one must survive."""
        kept = tuple(a for a in samples if q_value < a <= 1.0)
        dropped = [a for a in samples if a not in kept]
        if dropped:
            logger.info("Fiber samples outside (q, 1] dropped", q=q_value, dropped=dropped)
        if not kept:
            raise ValueError(f"no fiber sample left in (q, 1] for q={q_value}")
        return cls(q_value=q_value, samples=kept)

    def __len__(self) -> int:
        return len(self.samples)


class MeasureSpec(BaseModel):
    """Atomic q-invariant measure: orbits s * q^(-i) of each sample."""

    model_config = ConfigDict(frozen=True)

    q_value: float = Field(..., gt=0, lt=1)
    samples: Tuple[float, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_orbits(self):
        """Orbit representatives in (q, 1]."""
        for s in self.samples:
            if not self.q_value < s <= 1.0:
                raise ValueError(f"orbit representative {s} outside (q, 1]")
        return self

    def fiber(self) -> FiberSpectrum:
        return FiberSpectrum(q_value=self.q_value, samples=self.samples)


class RunConfig(BaseModel):
    """Everything a batch run needs; identical configs give byte-identical reports."""

    n: int = Field(default_factory=lambda: settings.default_n, ge=1, le=6)
    q: str = Field(default_factory=lambda: settings.default_q, description="Rational string, e.g. 1/2")
    N: int = Field(default_factory=lambda: settings.default_N, ge=2)
    M: int = Field(default_factory=lambda: settings.default_M, ge=1)
    d: int = Field(default_factory=lambda: settings.default_d, ge=0)
    samples: List[float] = Field(default_factory=lambda: list(settings.default_samples))
    suites: List[SuiteName] = Field(default_factory=lambda: list(DEFAULT_SUITES))
    output: Optional[str] = Field(None, description="Report path; stdout when absent")
    export_dir: str = Field("export", description="Directory for Matrix Market files")
    seed: int = Field(default_factory=lambda: settings.seed)
    tolerance: float = Field(default_factory=lambda: settings.tolerance, gt=0)
    sweep: List[int] = Field(default_factory=lambda: list(settings.sweep_sizes))
    symbol_pairs: int = Field(default_factory=lambda: settings.symbol_pairs, ge=1)

    @field_validator("q")
    @classmethod
    def validate_q(cls, v):
        """q must be a rational in (0, 1)."""
        parse_q(v)
        return str(v).strip()

    @field_validator("sweep")
    @classmethod
    def validate_sweep(cls, v):
        """Sweep sizes strictly increasing."""
        if not v or list(v) != sorted(set(v)):
            raise ValueError("sweep must be a strictly increasing list of sizes")
        return v

    @model_validator(mode="after")
    def validate_truncation(self):
        """Truncation, sweep and fiber parameters must be usable."""
        self.truncation()
        for size in self.sweep:
            if size < 2:
                raise ValueError(f"sweep size {size} must be >= 2")
            self.truncation(size)
        self.fiber()
        return self

    @property
    def q_fraction(self) -> Fraction:
        return parse_q(self.q)

    @property
    def q_value(self) -> float:
        return float(self.q_fraction)

    def truncation(self, size: Optional[int] = None) -> TruncationSpec:
        """Truncation of this run, or of one sweep entry (N = M = size)."""
        if size is None:
            return TruncationSpec(n=self.n, q_value=self.q_value, N=self.N, M=self.M, d=self.d)
        return TruncationSpec(n=self.n, q_value=self.q_value, N=size, M=size, d=min(self.d, size - 1))

    def fiber(self) -> FiberSpectrum:
        return FiberSpectrum.filtered(self.samples, self.q_value)

    def measure(self) -> MeasureSpec:
        fiber = self.fiber()
        return MeasureSpec(q_value=self.q_value, samples=fiber.samples)


CONFIG_KEYS = ("n", "q", "N", "M", "d", "samples", "suites", "output", "export_dir",
               "seed", "tolerance", "sweep", "symbol_pairs")
LIST_KEYS = ("samples", "suites", "sweep")


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse the key = value config format.

    One assignment per line, '#' starts a comment, blank lines are ignored and
    list values are comma separated. Unknown keys raise ConfigError.
    """
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}")
        values[key] = [item.strip() for item in value.split(",") if item.strip()] if key in LIST_KEYS else value
    return values


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Settings defaults, then the config file, then explicit overrides (None values skipped)."""
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ReportIOError(f"cannot read config {path}: {e}") from e
        values.update(parse_config_text(text, str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid configuration: {details}") from e
