"""
Trajectories of the piecewise-constant memory process X.

Jump times come from the nonhomogeneous Poisson process with intensity
λ(t), simulated by thinning on unit-width windows (or, for hyperbolic
rates, by inverting Λ((s, t]) = log(y(t)/y(s))). At a jump time T a pair
(Θ, Z) is drawn from α(T, θ)Q(dθ, dz)/λ(T) and the new state is
X(T⁻ + Θ) + Z.

Ensembles give trajectory i its own random substream derived from
(master_seed, i), so results do not depend on the worker count.
"""

import logging
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from enum import Enum
from multiprocessing import Pool
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from delaywalk import settings
from delaywalk.exceptions import ConfigurationError, EnvelopeError, NumericalError
from delaywalk.measures import JumpMarginal, SamplingStats, StripMeasure
from delaywalk.rates import HyperbolicDDE, RatePolicy
from delaywalk.streams import check_seed, substream

logger = logging.getLogger(__name__)


class JumpTimeSampler(Enum):
    """How jump times are produced."""
    THINNING = "thinning"
    INVERSION = "inversion"


class HistoryMode(Enum):
    """Joint law of the initial history U(θ) across θ."""
    CONSTANT = "constant"    # one draw held on [-1, 0]
    PER_THETA = "per_theta"  # independent draws on equal cells


class InitialHistory:
    """
    One realisation of U on [-1, 0], piecewise constant on equal cells.

    Cells are right-continuous; θ = 0 belongs to the last cell.
    """

    def __init__(self, values: np.ndarray):
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        self.cells = self.values.shape[0]

    @classmethod
    def constant(cls, value: Sequence[float]) -> "InitialHistory":
        return cls(np.atleast_1d(np.asarray(value, dtype=float))[None, :])

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __call__(self, theta: float) -> np.ndarray:
        if theta < -1.0 - 1e-12 or theta > 0.0:
            raise ConfigurationError(f"Initial history is defined on [-1, 0], got θ={theta:g}")
        if self.cells == 1:
            return self.values[0]
        k = min(int(math.floor((theta + 1.0) * self.cells)), self.cells - 1)
        return self.values[max(k, 0)]


class InitialCondition:
    """Law u⁰ of the initial history, drawn once per trajectory."""

    def __init__(
        self,
        law: JumpMarginal,
        mode: HistoryMode = HistoryMode.CONSTANT,
        cells: int = settings.HISTORY_CELLS,
    ):
        if cells < 1:
            raise ConfigurationError(f"History cell count must be positive, got {cells}")
        self.law = law
        self.mode = mode
        self.cells = cells if mode is HistoryMode.PER_THETA else 1

    @property
    def dimension(self) -> int:
        return self.law.dimension

    def draw(self, rng: np.random.Generator) -> InitialHistory:
        return InitialHistory(np.array([self.law.sample(rng) for _ in range(self.cells)]))


class Trajectory:
    """
    Càdlàg path: the initial history on [-1, 0) followed by a time-sorted
    event log kept as two parallel lists.
    """

    def __init__(self, history: InitialHistory, horizon: float):
        self.history = history
        self.horizon = float(horizon)
        self.times: List[float] = []
        self.values: List[np.ndarray] = []

    @property
    def jump_count(self) -> int:
        return len(self.times)

    def append(self, t: float, value: np.ndarray) -> None:
        if self.times and t <= self.times[-1]:
            raise NumericalError(f"Jump time {t!r} does not follow {self.times[-1]!r}")
        self.times.append(t)
        self.values.append(value)

    def _check(self, t: float) -> None:
        if t < -1.0 - 1e-12 or t > self.horizon + 1e-12:
            raise ConfigurationError(f"t={t:g} outside the trajectory range [-1, {self.horizon:g}]")

    def evaluate(self, t: float) -> np.ndarray:
        """X(t): the last event with T ≤ t, else U(min(t, 0))."""
        self._check(t)
        k = bisect_right(self.times, t)
        if k == 0:
            return self.history(min(t, 0.0))
        return self.values[k - 1]

    def left_limit(self, t: float) -> np.ndarray:
        """X(t⁻) for t > 0: the last event with T < t, else U(0)."""
        self._check(t)
        k = bisect_left(self.times, t)
        if k == 0:
            return self.history(min(t, 0.0))
        return self.values[k - 1]


# ==================== JUMP TIMES ====================

def thinning_times(
    measure: StripMeasure,
    policy: RatePolicy,
    horizon: float,
    rng: np.random.Generator,
) -> List[float]:
    """
    Poisson jump times on (0, horizon] with intensity λ(t), by thinning.

    Candidates arrive at the envelope rate of each unit window and are kept
    with probability λ(t)/λ̄.

    Raises:
        EnvelopeError: If λ(t) exceeds the window envelope at a candidate
    """
    times: List[float] = []
    start = 0.0
    while start < horizon:
        end = min(start + 1.0, horizon)
        bound = policy.envelope(measure, start, end)
        logger.debug(f"Window [{start:g}, {end:g}]: envelope {bound:.12g}")
        t = start
        while True:
            t += rng.exponential(1.0 / bound)
            if t > end:
                break
            lam = policy.lambda_t(measure, t)
            if lam > bound * (1.0 + 1e-12):
                raise EnvelopeError(f"λ({t:.6g})={lam:.12g} exceeds envelope {bound:.12g}")
            if lam >= bound or rng.random() * bound < lam:
                times.append(t)
        start = end
    return times


def inversion_times_hyperbolic(
    policy: HyperbolicDDE,
    horizon: float,
    rng: np.random.Generator,
) -> List[float]:
    """
    Jump times by solving log y(T_{n+1}) = log y(T_n) + E_n, E_n ~ Exp(1).

    Valid when Q's θ-marginal is the policy's η.
    """
    if not isinstance(policy, HyperbolicDDE):
        raise ConfigurationError("Inversion sampling needs a hyperbolic rate policy")
    if horizon < 0:
        raise ConfigurationError(f"Horizon must be nonnegative, got {horizon}")
    if not policy.covers(horizon):
        raise ConfigurationError(
            f"Horizon {horizon:g} exceeds the solved range {policy.horizon:g}"
        )
    times: List[float] = []
    if horizon == 0:
        return times
    final = float(policy.log_y(horizon))
    level = float(policy.log_y(0.0))
    t = 0.0
    while True:
        level += rng.exponential(1.0)
        if level > final:
            return times
        target = level
        try:
            t = brentq(lambda s: float(policy.log_y(s)) - target, t, horizon, xtol=1e-12)
        except (RuntimeError, ValueError) as e:
            raise NumericalError(f"Inverting log y at level {target:.12g} failed: {e}") from e
        times.append(t)


# ==================== TRAJECTORIES ====================

def simulate(
    measure: StripMeasure,
    policy: RatePolicy,
    history: InitialHistory,
    horizon: float,
    rng: np.random.Generator,
    sampler: JumpTimeSampler = JumpTimeSampler.THINNING,
    stats: Optional[SamplingStats] = None,
    force_rejection: bool = False,
) -> Trajectory:
    """
    Simulate one trajectory of X on [0, horizon].

    Args:
        measure: Strip measure Q
        policy: Rate policy α
        history: Initial history U
        horizon: Final time
        rng: Random generator owned by this trajectory
        sampler: Jump-time sampler
        stats: Optional tilted-sampling counters
        force_rejection: Use rejection even when exact reweighting exists

    Returns:
        Trajectory with every jump up to the horizon

    Raises:
        ConfigurationError: Bad horizon or dimension mismatch
        EnvelopeError: Envelope violated by λ or the tilt
    """
    if horizon < 0:
        raise ConfigurationError(f"Horizon must be nonnegative, got {horizon}")
    if not policy.covers(horizon):
        raise ConfigurationError(f"Rate policy does not cover horizon {horizon:g}")
    if history.dimension != measure.dimension:
        raise ConfigurationError(
            f"Initial history has dimension {history.dimension}, Q has {measure.dimension}"
        )

    if sampler is JumpTimeSampler.INVERSION:
        jump_times = inversion_times_hyperbolic(policy, horizon, rng)
    else:
        jump_times = thinning_times(measure, policy, horizon, rng)

    trajectory = Trajectory(history, horizon)
    for t in jump_times:
        if policy.theta_uniform and not force_rejection:
            theta, z = measure.sample(rng)
            if stats is not None:
                stats.proposals += 1
                stats.acceptances += 1
        else:
            theta, z = measure.sample_tilted(
                lambda th, t=t: policy.evaluate(t, th),
                policy.sup_theta(t, measure),
                rng,
                stats,
                force_rejection,
            )
        lookup = t + theta
        if not t - 1.0 - 1e-12 <= lookup <= t:
            raise NumericalError(f"Memory lookup at {lookup:g} outside [{t - 1:g}, {t:g}]")
        base = trajectory.left_limit(t) if theta == 0.0 else trajectory.evaluate(lookup)
        trajectory.append(t, base + z)
    return trajectory


# ==================== ENSEMBLES ====================

@dataclass(frozen=True)
class EnsembleResult:
    """
    Terminal values of n trajectories at the probe times.

    Attributes:
        probes: Probe times, increasing
        values: Array of shape (n, len(probes), N)
        counts: Jump counts on [0, horizon] per trajectory
        master_seed: Seed the substreams derive from
        n: Trajectory count
        horizon: Simulated horizon
    """
    probes: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    master_seed: int
    n: int
    horizon: float

    @property
    def dimension(self) -> int:
        return self.values.shape[2]

    def at(self, probe: float) -> np.ndarray:
        """Samples X(probe) of shape (n, N)."""
        matches = np.flatnonzero(np.isclose(self.probes, probe, rtol=0.0, atol=1e-12))
        if len(matches) == 0:
            raise ConfigurationError(f"No probe at t={probe:g}; probes are {self.probes.tolist()}")
        return self.values[:, matches[0], :]


@dataclass(frozen=True)
class EnsembleTask:
    """Everything a worker needs to run trajectories by index."""
    measure: StripMeasure
    policy: RatePolicy
    initial: InitialCondition
    horizon: float
    probes: Tuple[float, ...]
    master_seed: int
    sampler: JumpTimeSampler


def trace_trajectory(task: EnsembleTask, index: int) -> Trajectory:
    """Full path of trajectory `index`, drawn from substream (master_seed, index)."""
    rng = substream(task.master_seed, index)
    history = task.initial.draw(rng)
    return simulate(task.measure, task.policy, history, task.horizon, rng, task.sampler)


def run_trajectory(task: EnsembleTask, index: int) -> Tuple[np.ndarray, int]:
    """Probe values and jump count of trajectory `index`."""
    trajectory = trace_trajectory(task, index)
    values = np.array([trajectory.evaluate(p) for p in task.probes])
    return values, trajectory.jump_count


def replay_trajectories(
    measure: StripMeasure,
    policy: RatePolicy,
    initial: InitialCondition,
    horizon: float,
    master_seed: int,
    count: int,
    sampler: JumpTimeSampler = JumpTimeSampler.THINNING,
) -> List[Trajectory]:
    """
    Re-run the first `count` trajectories of an ensemble with full event
    logs. The paths coincide with the ensemble built from the same seed.
    """
    if count < 1:
        raise ConfigurationError(f"Trajectory count must be at least 1, got {count}")
    task = EnsembleTask(
        measure=measure,
        policy=policy,
        initial=initial,
        horizon=float(horizon),
        probes=(),
        master_seed=check_seed(master_seed),
        sampler=sampler,
    )
    return [trace_trajectory(task, i) for i in range(count)]


_worker_task: Optional[EnsembleTask] = None


def _init_worker(task: EnsembleTask) -> None:
    global _worker_task
    _worker_task = task


def _run_chunk(indices: Sequence[int]) -> List[Tuple[np.ndarray, int]]:
    return [run_trajectory(_worker_task, i) for i in indices]


def simulate_ensemble(
    measure: StripMeasure,
    policy: RatePolicy,
    initial: InitialCondition,
    horizon: float,
    probes: Sequence[float],
    n: int,
    master_seed: int,
    workers: int = 1,
    sampler: JumpTimeSampler = JumpTimeSampler.THINNING,
) -> EnsembleResult:
    """
    Run n independent trajectories and record X at each probe.

    Trajectory i always uses substream (master_seed, i); chunks are
    reassembled in index order, so any worker count gives the same result.
    With workers > 1 every argument must be picklable.
    """
    if n < 1:
        raise ConfigurationError(f"Ensemble size must be at least 1, got {n}")
    if workers < 1:
        raise ConfigurationError(f"Worker count must be at least 1, got {workers}")
    probes = tuple(float(p) for p in probes)
    if not probes:
        raise ConfigurationError("At least one probe time is required")
    if any(b <= a for a, b in zip(probes, probes[1:])):
        raise ConfigurationError(f"Probe times must be strictly increasing, got {list(probes)}")
    if probes[0] < 0 or probes[-1] > horizon:
        raise ConfigurationError(f"Probe times must lie in [0, {horizon:g}]")

    task = EnsembleTask(
        measure=measure,
        policy=policy,
        initial=initial,
        horizon=float(horizon),
        probes=probes,
        master_seed=check_seed(master_seed),
        sampler=sampler,
    )
    logger.info(f"Ensemble: n={n}, horizon={horizon:g}, workers={workers}, seed={master_seed}")

    if workers == 1:
        results = [run_trajectory(task, i) for i in range(n)]
    else:
        chunks = [chunk.tolist() for chunk in np.array_split(np.arange(n), workers * 4) if len(chunk)]
        with Pool(processes=workers, initializer=_init_worker, initargs=(task,)) as pool:
            results = [item for chunk in pool.map(_run_chunk, chunks) for item in chunk]

    values = np.array([r[0] for r in results]).reshape(n, len(probes), measure.dimension)
    counts = np.array([r[1] for r in results], dtype=np.int64)
    logger.info(f"Ensemble finished: mean jump count {counts.mean():.6g}")
    return EnsembleResult(
        probes=np.array(probes),
        values=values,
        counts=counts,
        master_seed=task.master_seed,
        n=n,
        horizon=float(horizon),
    )
