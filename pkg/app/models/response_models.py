"""
Pydantic models for API request and response structures.
"""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator

from app.models.report_models import ConfluenceReport, ReportRecord, SuiteName


class NormalizeRequest(BaseModel):
    """Expression to bring into normal form."""
    expr: str = Field(..., min_length=1, description="Expression in z1..zn, z1#..zn#, q and integers")
    n: int = Field(..., ge=1, le=8, description="Number of generators")


class NormalizeResponse(BaseModel):
    expr: str
    n: int
    normal_form: str


class IdentityRequest(BaseModel):
    """Candidate identity lhs = rhs."""
    lhs: str = Field(..., min_length=1)
    rhs: str = Field(..., min_length=1)
    n: int = Field(..., ge=1, le=8)


class IdentityResponse(BaseModel):
    holds: bool
    residual: str = Field(..., description="Normal form of lhs - rhs")


class ConfluenceRequest(BaseModel):
    n: int = Field(..., ge=1, le=4)
    max_len: int = Field(4, ge=3, le=6)
    seed: Optional[int] = None


class VerifyRequest(BaseModel):
    """Subset of the run configuration accepted over HTTP."""
    n: int = Field(2, ge=1, le=3)
    q: str = Field("1/2")
    N: int = Field(6, ge=2, le=10)
    M: int = Field(6, ge=1, le=10)
    d: int = Field(3, ge=0)
    samples: List[float] = Field(default_factory=lambda: [0.6, 0.9, 1.0])
    suites: List[SuiteName] = Field(default_factory=lambda: [SuiteName.SYMBOLIC, SuiteName.RELATIONS])
    seed: Optional[int] = None

    @field_validator("suites")
    @classmethod
    def validate_suites(cls, v):
        """At least one suite."""
        if not v:
            raise ValueError("select at least one suite")
        return v


class VerifyResponse(BaseModel):
    passed: bool
    records: List[ReportRecord]


class ConfluenceResponse(BaseModel):
    confluent: bool
    report: ConfluenceReport


class ErrorResponse(BaseModel):
    """Error response structure."""
    success: bool = Field(False, description="Request success status")
    error_code: str = Field(..., description="Error code")
    error_message: str = Field(..., description="Error message")
    details: Optional[List[Dict[str, Any]]] = Field(None, description="Per-field validation errors")
    timestamp: float = Field(..., description="Error timestamp")


class HealthCheckResponse(BaseModel):
    """Health check response structure."""
    status: str = Field(..., description="Service health status")
    version: str = Field(..., description="Application version")
    environment: str = Field(..., description="Environment name")
    timestamp: float = Field(..., description="Check timestamp")
