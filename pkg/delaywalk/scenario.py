"""
Turn validated scenario documents into runtime objects.

Usage:
    scenario = load_scenario("scenarios/delayed_poisson.json")
    runtime = build_runtime(scenario)
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from delaywalk import __version__
from delaywalk.dde import LinearHistory
from delaywalk.exceptions import ConfigurationError
from delaywalk.items import (
    AtomicLaw,
    AtomicMeasureSpec,
    AtomicTheta,
    ExponentialTheta,
    GaussianLaw,
    HyperbolicRateSpec,
    Scenario,
    SeparableRateSpec,
    UniformBoxLaw,
)
from delaywalk.lattice import LatticeInitial
from delaywalk.measures import (
    AtomicJumps,
    AtomicStripMeasure,
    ExponentialDensity,
    GaussianJumps,
    JumpMarginal,
    LinearCoupling,
    ProductStripMeasure,
    StripMeasure,
    ThetaMeasure,
    UniformBox,
    UniformDensity,
)
from delaywalk.pipelines import ValidationPipeline
from delaywalk.rates import ExponentialRate, RateKind, RatePolicy, get_registry
from delaywalk.simulator import HistoryMode, InitialCondition, JumpTimeSampler

logger = logging.getLogger(__name__)


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"Scenario file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Scenario file {path} is not valid JSON: {e}")
    return ValidationPipeline().process(payload)


def apply_overrides(
    scenario: Scenario,
    seed: Optional[int] = None,
    n: Optional[int] = None,
    horizon: Optional[float] = None,
    probes: Optional[List[float]] = None,
    workers: Optional[int] = None,
) -> Scenario:
    """Return a revalidated copy with CLI overrides applied to the run section."""
    payload = scenario.model_dump(mode="json")
    run = payload["run"]
    if horizon is not None:
        run["horizon"] = horizon
        if probes is None:
            run["probes"] = [p for p in run["probes"] if p <= horizon] or [horizon]
    for key, value in (("seed", seed), ("n", n), ("probes", probes), ("workers", workers)):
        if value is not None:
            run[key] = value
    return ValidationPipeline().process(payload)


def scenario_hash(scenario: Scenario) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(scenario.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ==================== BUILDERS ====================

def build_theta(spec) -> ThetaMeasure:
    if isinstance(spec, AtomicTheta):
        return ThetaMeasure.atomic([a.weight for a in spec.atoms], [a.theta for a in spec.atoms])
    if isinstance(spec, ExponentialTheta):
        return ThetaMeasure.from_density(ExponentialDensity(spec.rate), spec.nodes)
    return ThetaMeasure.from_density(UniformDensity(), spec.nodes)


def build_law(spec) -> JumpMarginal:
    if isinstance(spec, AtomicLaw):
        return AtomicJumps([a.weight for a in spec.atoms], [a.z for a in spec.atoms])
    if isinstance(spec, UniformBoxLaw):
        return UniformBox(spec.lower, spec.upper)
    if isinstance(spec, GaussianLaw):
        return GaussianJumps(spec.mean, spec.covariance)
    raise ConfigurationError(f"Unsupported law: {spec}")


def build_measure(spec) -> StripMeasure:
    if isinstance(spec, AtomicMeasureSpec):
        return AtomicStripMeasure(
            [a.weight for a in spec.atoms],
            [a.theta for a in spec.atoms],
            [a.z for a in spec.atoms],
        )
    theta = build_theta(spec.theta)
    if spec.coupling is not None:
        return ProductStripMeasure(theta, coupling=LinearCoupling(spec.coupling.q))
    return ProductStripMeasure(theta, jumps=build_law(spec.jumps))


def build_policy(spec, measure: StripMeasure, horizon: float) -> RatePolicy:
    """Build the rate policy; hyperbolic rates use Q's θ-marginal as η."""
    registry = get_registry()
    if isinstance(spec, HyperbolicRateSpec):
        return registry.create(
            RateKind.HYPERBOLIC_DDE,
            a=spec.a,
            b=spec.b,
            eta=measure.theta_marginal(),
            history=LinearHistory(spec.history.intercept, spec.history.slope),
            horizon=horizon,
            step=spec.dde_step,
        )
    if isinstance(spec, SeparableRateSpec):
        return registry.create(
            RateKind.SEPARABLE,
            base=ExponentialRate(spec.scale, spec.rate),
            amplitude=spec.amplitude,
            decay=spec.decay,
        )
    return registry.create(RateKind.CONSTANT_ONE)


def build_initial(scenario: Scenario) -> InitialCondition:
    spec = scenario.initial
    return InitialCondition(build_law(spec.law), HistoryMode(spec.mode), spec.cells)


def build_lattice_initial(scenario: Scenario) -> LatticeInitial:
    """Lattice initial law; needs an atomic initial law held constant on [-1, 0]."""
    spec = scenario.initial
    if not isinstance(spec.law, AtomicLaw):
        raise ConfigurationError("The lattice oracle needs an atomic initial law")
    return LatticeInitial.from_points([a.z for a in spec.law.atoms], [a.weight for a in spec.law.atoms])


@dataclass
class Runtime:
    """Runtime objects of one scenario."""
    scenario: Scenario
    measure: StripMeasure
    policy: RatePolicy
    initial: InitialCondition
    sampler: JumpTimeSampler
    digest: str

    @property
    def run(self):
        return self.scenario.run

    def metadata(self) -> Dict[str, Any]:
        """Identity block embedded in every output."""
        return {
            "scenario": self.scenario.name,
            "scenario_hash": self.digest,
            "seed": self.scenario.run.seed,
            "version": __version__,
            "policy": self.policy.describe(),
        }


def build_runtime(scenario: Scenario, horizon: Optional[float] = None) -> Runtime:
    """
    Build measure, policy and initial condition.

    Args:
        scenario: Validated scenario
        horizon: Horizon the policy must cover; defaults to the run horizon
    """
    measure = build_measure(scenario.measure)
    horizon = scenario.run.horizon if horizon is None else horizon
    policy = build_policy(scenario.rate, measure, horizon)
    runtime = Runtime(
        scenario=scenario,
        measure=measure,
        policy=policy,
        initial=build_initial(scenario),
        sampler=JumpTimeSampler(scenario.run.sampler),
        digest=scenario_hash(scenario),
    )
    logger.info(f"Scenario '{scenario.name}' ready (hash {runtime.digest[:12]})")
    return runtime
