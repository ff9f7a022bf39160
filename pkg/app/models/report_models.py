"""
Pydantic models for verification reports.

Every record serializes to one JSON line with sorted keys; the `schema` field
versions the layout.
"""
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, computed_field

SCHEMA_VERSION = "qplane.report/1"


class SuiteName(str, Enum):
    """Suites a verification run can select."""
    SYMBOLIC = "symbolic"
    RELATIONS = "relations"
    SPECTRUM = "spectrum"
    EQUIVALENCE = "equivalence"
    AUXILIARY = "auxiliary"
    SYMBOLS = "symbols"
    NORMS = "norms"
    SEPARATION = "separation"
    CONFLUENCE = "confluence"


class ReportRecord(BaseModel):
    """One checked relation on one component."""
    schema_version: str = Field(SCHEMA_VERSION, alias="schema")
    suite: str = Field(..., description="Suite that produced the record")
    relation: str = Field(..., description="Relation family or check name")
    component: Optional[int] = Field(None, ge=0, description="Component index k, None for symbolic checks")
    max_residual: float = Field(..., ge=0)
    interior_size: int = Field(0, ge=0, description="Basis vectors the check was applied to")
    tolerance: float = Field(..., gt=0)
    passed: bool

    model_config = {"populate_by_name": True}

    def sort_key(self):
        return (self.suite, self.relation, -1 if self.component is None else self.component)


class RelationReport(BaseModel):
    """Result of verifying the defining relations on one component (None for a direct sum)."""
    component: Optional[int] = Field(None, ge=0)
    records: List[ReportRecord] = Field(default_factory=list)

    @computed_field
    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def worst(self) -> float:
        return max((r.max_residual for r in self.records), default=0.0)


class DivergentWord(BaseModel):
    """A word whose first-step reductions reach different normal forms."""
    word: str
    normal_forms: List[str]


class ConfluenceReport(BaseModel):
    schema_version: str = Field(SCHEMA_VERSION, alias="schema")
    n: int = Field(..., ge=1)
    max_len: int = Field(..., ge=0)
    words_checked: int = Field(..., ge=0)
    overlaps_checked: int = Field(..., ge=0, description="Words with at least two redexes")
    sampled: bool = Field(..., description="True when a random sample replaced exhaustive enumeration")
    max_chain: int = Field(..., ge=0, description="Longest reduction chain seen")
    chain_bound: int = Field(..., ge=0)
    divergent: List[DivergentWord] = Field(default_factory=list)

    model_config = {"populate_by_name": True}

    @computed_field
    @property
    def confluent(self) -> bool:
        return not self.divergent and self.max_chain <= self.chain_bound


class NormRow(BaseModel):
    """Norm lower bound of one generator term on one block for one truncation."""
    schema_version: str = Field(SCHEMA_VERSION, alias="schema")
    term_id: str
    k: Optional[int] = Field(None, description="Component index; None for the whole direct sum")
    truncation: str
    size: int = Field(..., ge=1)
    norm_lb: float = Field(..., ge=0, description="Running maximum along the sweep")
    raw_lb: float = Field(..., ge=0, description="Bound computed on this truncation alone")

    model_config = {"populate_by_name": True}


class SeparationReport(BaseModel):
    schema_version: str = Field(SCHEMA_VERSION, alias="schema")
    pairs_checked: int = Field(..., ge=0)
    family_size: int = Field(..., ge=0)
    tolerance: float = Field(..., gt=0)
    unseparated: List[int] = Field(default_factory=list, description="Indices of pairs no family member separates")
    smallest_separation: float = Field(..., ge=0, description="Min over pairs of the max family difference")

    model_config = {"populate_by_name": True}


class ComponentSummary(BaseModel):
    """What rep-build materialized for one component."""
    schema_version: str = Field(SCHEMA_VERSION, alias="schema")
    component: int = Field(..., ge=0)
    builder: str
    dim: int = Field(..., ge=1)
    interior_size: int = Field(..., ge=0)
    nnz: int = Field(..., ge=0, description="Stored entries over all z_j")
    truncation: str
    samples: List[float]

    model_config = {"populate_by_name": True}
