"""Scenario documents validated with Pydantic before any computation runs."""

from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from delaywalk.verify import Tolerances


class StrictModel(BaseModel):
    """Base for scenario sections: unknown fields are rejected."""

    class Config:
        """Pydantic configuration."""
        extra = "forbid"
        validate_assignment = True


# ==================== θ-MARGINALS ====================

class ThetaAtom(StrictModel):
    weight: float = Field(..., gt=0, description="Probability of this delay")
    theta: float = Field(..., ge=-1, le=0, description="Delay offset in [-1, 0]")


class AtomicTheta(StrictModel):
    kind: Literal["atomic"] = "atomic"
    atoms: List[ThetaAtom] = Field(..., min_length=1)


class UniformTheta(StrictModel):
    kind: Literal["uniform"] = "uniform"
    nodes: int = Field(64, ge=2, description="Initial Gauss-Legendre node count")


class ExponentialTheta(StrictModel):
    """Density k e^{kθ} / (1 - e^{-k}) on [-1, 0]."""
    kind: Literal["exponential"] = "exponential"
    rate: float
    nodes: int = Field(64, ge=2)


ThetaSpec = Annotated[Union[AtomicTheta, UniformTheta, ExponentialTheta], Field(discriminator="kind")]


# ==================== JUMP LAWS ====================

class PointAtom(StrictModel):
    weight: float = Field(..., gt=0)
    z: List[float] = Field(..., min_length=1)


class AtomicLaw(StrictModel):
    kind: Literal["atomic"] = "atomic"
    atoms: List[PointAtom] = Field(..., min_length=1)

    @field_validator("atoms")
    @classmethod
    def validate_dimensions(cls, v: List[PointAtom]) -> List[PointAtom]:
        """All atoms share one dimension."""
        if len({len(atom.z) for atom in v}) != 1:
            raise ValueError("All atoms must have the same dimension")
        return v

    @property
    def dimension(self) -> int:
        return len(self.atoms[0].z)


class UniformBoxLaw(StrictModel):
    kind: Literal["uniform_box"] = "uniform_box"
    lower: List[float] = Field(..., min_length=1)
    upper: List[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_box(self) -> "UniformBoxLaw":
        if len(self.lower) != len(self.upper):
            raise ValueError("Box bounds must have the same dimension")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("Each lower bound must be below its upper bound")
        return self

    @property
    def dimension(self) -> int:
        return len(self.lower)


class GaussianLaw(StrictModel):
    kind: Literal["gaussian"] = "gaussian"
    mean: List[float] = Field(..., min_length=1)
    covariance: List[List[float]]

    @model_validator(mode="after")
    def validate_shape(self) -> "GaussianLaw":
        n = len(self.mean)
        if len(self.covariance) != n or any(len(row) != n for row in self.covariance):
            raise ValueError("Covariance must be N x N with N = len(mean)")
        return self

    @property
    def dimension(self) -> int:
        return len(self.mean)


LawSpec = Annotated[Union[AtomicLaw, UniformBoxLaw, GaussianLaw], Field(discriminator="kind")]


# ==================== STRIP MEASURES ====================

class StripAtom(StrictModel):
    weight: float = Field(..., gt=0)
    theta: float = Field(..., ge=-1, le=0)
    z: List[float] = Field(..., min_length=1)


class AtomicMeasureSpec(StrictModel):
    kind: Literal["atomic"] = "atomic"
    atoms: List[StripAtom] = Field(..., min_length=1)

    @property
    def dimension(self) -> int:
        return len(self.atoms[0].z)

    @field_validator("atoms")
    @classmethod
    def validate_dimensions(cls, v: List[StripAtom]) -> List[StripAtom]:
        if len({len(atom.z) for atom in v}) != 1:
            raise ValueError("All atoms must have the same dimension")
        return v


class CouplingSpec(StrictModel):
    """z = qθ."""
    q: List[float] = Field(..., min_length=1)


class ProductMeasureSpec(StrictModel):
    kind: Literal["product"] = "product"
    theta: ThetaSpec
    jumps: Optional[LawSpec] = None
    coupling: Optional[CouplingSpec] = None

    @model_validator(mode="after")
    def validate_factor(self) -> "ProductMeasureSpec":
        if (self.jumps is None) == (self.coupling is None):
            raise ValueError("A product measure needs exactly one of 'jumps' or 'coupling'")
        return self

    @property
    def dimension(self) -> int:
        return self.jumps.dimension if self.jumps is not None else len(self.coupling.q)


MeasureSpec = Annotated[Union[AtomicMeasureSpec, ProductMeasureSpec], Field(discriminator="kind")]


# ==================== RATES ====================

class ConstantOneRateSpec(StrictModel):
    kind: Literal["constant_one"] = "constant_one"


class SeparableRateSpec(StrictModel):
    """α(t, θ) = scale · e^{rate·θ} + amplitude · e^{-decay·t}."""
    kind: Literal["separable"] = "separable"
    scale: float = Field(1.0, gt=0)
    rate: float = 0.0
    amplitude: float = Field(0.0, description="Signed transient amplitude; min α∞ + amplitude must stay positive")
    decay: float = Field(1.0, gt=0)


class HistorySpec(StrictModel):
    """y⁰(θ) = intercept + slope·θ on [-1, 0]."""
    intercept: float = Field(1.0, gt=0)
    slope: float = 0.0

    @model_validator(mode="after")
    def validate_nonnegative(self) -> "HistorySpec":
        if self.intercept - self.slope < 0:
            raise ValueError("History must stay nonnegative on [-1, 0]")
        return self


class HyperbolicRateSpec(StrictModel):
    """α(t, θ) = a e^{-bθ} y(t+θ)/y(t); η is the θ-marginal of Q."""
    kind: Literal["hyperbolic_dde"] = "hyperbolic_dde"
    a: float = Field(..., gt=0)
    b: float
    history: HistorySpec = Field(default_factory=HistorySpec)
    dde_step: float = Field(1e-3, gt=0, le=1)


RateSpec = Annotated[
    Union[ConstantOneRateSpec, SeparableRateSpec, HyperbolicRateSpec],
    Field(discriminator="kind"),
]


# ==================== INITIAL CONDITION AND RUN ====================

class InitialSpec(StrictModel):
    law: LawSpec
    mode: Literal["constant", "per_theta"] = "constant"
    cells: int = Field(16, ge=1, description="Cells on [-1, 0] for per-θ draws")


class RunSpec(StrictModel):
    horizon: float = Field(..., gt=0)
    probes: List[float] = Field(..., min_length=1)
    n: int = Field(1000, ge=1, description="Ensemble size")
    seed: int = Field(..., ge=0, le=2**64 - 1, description="Master seed")
    workers: Optional[int] = Field(None, ge=1)
    sampler: Literal["thinning", "inversion"] = "thinning"
    recentring: Literal["drift", "path"] = "drift"
    lattice_step: float = Field(1e-3, gt=0, le=1)
    lattice_times: Optional[List[float]] = Field(None, description="Times compared with the lattice oracle")

    @model_validator(mode="after")
    def validate_probes(self) -> "RunSpec":
        if any(b <= a for a, b in zip(self.probes, self.probes[1:])):
            raise ValueError("Probe times must be strictly increasing")
        if self.probes[0] < 0 or self.probes[-1] > self.horizon:
            raise ValueError("Probe times must lie in [0, horizon]")
        if self.lattice_times and any(t < 0 or t > self.horizon for t in self.lattice_times):
            raise ValueError("Lattice times must lie in [0, horizon]")
        return self


class Scenario(StrictModel):
    """
    A complete, self-describing run description.

    Dimensions of the measure and the initial law must agree with
    `dimension`.
    """
    name: str = Field(..., min_length=1)
    description: Optional[str] = None
    dimension: int = Field(..., ge=1)
    measure: MeasureSpec
    rate: RateSpec
    initial: InitialSpec
    run: RunSpec
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @field_validator("name")
    @classmethod
    def validate_name(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("Name cannot be empty")
        return v.strip()

    @model_validator(mode="after")
    def validate_dimensions(self) -> "Scenario":
        if self.measure.dimension != self.dimension:
            raise ValueError(f"Measure has dimension {self.measure.dimension}, expected {self.dimension}")
        if self.initial.law.dimension != self.dimension:
            raise ValueError(f"Initial law has dimension {self.initial.law.dimension}, expected {self.dimension}")
        return self
