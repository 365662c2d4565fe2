from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class StrictModel(BaseModel):
    """Scenario sections reject unknown keys."""
    model_config = ConfigDict(extra="forbid")


# Scenario sections
class TimeGridSpec(StrictModel):
    start: float = 0.0
    stop: float
    steps: int = Field(ge=1)


class SpaceSpec(StrictModel):
    kind: Literal["cycle", "unit-cycle", "interval", "points", "complete", "sphere-mesh", "edge-table"]
    n: Optional[int] = None
    scale: str = "1"                      # expression in t multiplying every edge length
    radius: float = 1.0
    a: float = -1.0
    b: float = 1.0
    points: Optional[List[float]] = None
    distances: Optional[List[List[float]]] = None
    n_lat: Optional[int] = None
    n_lon: Optional[int] = None
    path: Optional[str] = None


class MeasureSpec(StrictModel):
    """Reference measure m; uniform when no weights are given."""
    weights: Optional[List[float]] = None


class WeightSpec(StrictModel):
    """f_t on vertices: an expression in t and the vertex coordinates, or a table (times x vertices)."""
    expression: Optional[str] = None
    table: Optional[List[List[float]]] = None
    bound: Optional[float] = None


class PotentialSpec(StrictModel):
    kind: Literal["quadratic", "entropy", "table", "expression"]
    coeff: float = 1.0
    center: Optional[List[float]] = None
    table: Optional[List[List[float]]] = None
    expression: Optional[str] = None


class GeneratorSpec(StrictModel):
    kind: Literal["circle-laplacian", "interval-laplacian", "two-point", "matrix", "random-markov"]
    n: Optional[int] = None
    scale: Optional[str] = None           # expression in t multiplying the generator
    rate: float = 1.0
    matrices: Optional[List[List[List[float]]]] = None
    seed: Optional[int] = None


class ChartSpec(StrictModel):
    model: Optional[Literal["flat", "sphere", "hyperbolic"]] = None
    dim: int = Field(default=2, ge=1, le=3)
    scale: Optional[str] = None           # conformal factor c(t), g_t = c(t) g_model
    metric: Optional[List[List[str]]] = None
    weight: Optional[str] = None
    potential: Optional[str] = None
    box: Optional[List[Tuple[float, float]]] = None


class InstanceSpec(StrictModel):
    """Time-dependent finite mm-space given by distance matrices (one, or one per grid time)."""
    distances: List[Any]
    m: Optional[List[float]] = None
    f: Optional[List[Any]] = None


class CheckSpec(StrictModel):
    id: str
    op: str
    params: Dict[str, Any] = Field(default_factory=dict)


class Scenario(StrictModel):
    name: str
    description: Optional[str] = None
    seed: int = 0
    tolerance: Optional[float] = None
    time_grid: TimeGridSpec
    space: Optional[SpaceSpec] = None
    measure: Optional[MeasureSpec] = None
    weights: Optional[WeightSpec] = None
    potential: Optional[PotentialSpec] = None
    generator: Optional[GeneratorSpec] = None
    chart: Optional[ChartSpec] = None
    instance: Optional[InstanceSpec] = None
    instances: Dict[str, InstanceSpec] = Field(default_factory=dict)
    checks: List[CheckSpec] = Field(default_factory=list)

    @field_validator("checks")
    @classmethod
    def _unique_ids(cls, checks: List[CheckSpec]) -> List[CheckSpec]:
        seen = set()
        for c in checks:
            if c.id in seen:
                raise ValueError(f"duplicate check id '{c.id}'")
            seen.add(c.id)
        return checks


# Reports
class SlackPoint(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    t: Optional[float] = None
    pair_id: str
    tau: Optional[float] = None
    slack: float


class CheckRecord(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    id: str
    op: str
    status: Literal["pass", "fail", "undetermined", "error", "numerical_failure"]
    holds: Optional[bool] = None
    message: Optional[str] = None
    result: Optional[Any] = None
    slacks: List[SlackPoint] = Field(default_factory=list)
    seconds: Optional[float] = None


class ReportDocument(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str
    tool_version: str
    app_name: str
    scenario: str
    scenario_hash: str
    gradient_constraint: Optional[str] = None
    exit_code: int = 0
    checks: List[CheckRecord] = Field(default_factory=list)
