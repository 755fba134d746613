"""
Judge score models for MirrorBot.
"""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator


# Rubric dimensions in report order
DIMENSIONS = ("entity", "dimensions", "movement", "environment")


class JudgeScore(BaseModel):
    """Rubric scores of one iteration; a dimension is None when the judge never answered."""

    iteration: int = Field(..., ge=1)
    entity: Optional[int] = None
    dimensions: Optional[int] = None
    movement: Optional[int] = None
    environment: Optional[int] = None
    rationales: Dict[str, str] = Field(default_factory=dict)

    @field_validator('entity', 'dimensions', 'movement', 'environment')
    @classmethod
    def validate_range(cls, v):
        if v is not None and not 0 <= v <= 5:
            raise ValueError('Scores must be integers in 0..5')
        return v

    def get(self, dimension: str) -> Optional[int]:
        if dimension not in DIMENSIONS:
            raise KeyError(dimension)
        return getattr(self, dimension)

    @property
    def complete(self) -> bool:
        return all(self.get(d) is not None for d in DIMENSIONS)


class DimensionSummary(BaseModel):
    """Mean and population standard deviation of one dimension."""

    mean: float
    sd: float
    n: int = Field(..., ge=0)
    missing: int = Field(0, ge=0)


class ScoreSummary(BaseModel):
    """Per-dimension aggregates and per-iteration series of a run."""

    dimensions: Dict[str, DimensionSummary]
    series: Dict[str, List[Tuple[int, int]]]
    iterations: int
    coverage: float = Field(..., ge=0.0, le=1.0, description="Share of dimension scores present")
