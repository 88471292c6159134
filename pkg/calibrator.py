"""
Parameter estimation for the lake model

Differential evolution (DE/rand/1/bin) over a bounded hypercube, minimizing a
variance-normalized mean squared error between observations and simulated
trajectories. Candidates whose simulation fails receive a finite penalty so
the search always continues.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from data_loader import ObservationSet, check_coverage
from errors import ParameterValidationError
from lake_model import STATE_FIELDS, LakeState, ModelParams, classify_trophic
from simulator import SimulationSettings, Trajectory, simulate
from worker_pool import WorkerPool

logger = logging.getLogger(__name__)

INITIAL_PREFIX = 'initial.'
DEFAULT_PENALTY = 1e12

__all__ = [
    'ParameterBound', 'ParameterBounds', 'FitSettings', 'FitResult',
    'CalibrationDataset', 'CandidateEvaluator', 'Calibrator',
    'mse_objective', 'differential_evolution', 'evaluate_candidate',
    'apply_candidate', 'screen_identifiable', 'classify_trophic',
]


@dataclass(frozen=True)
class ParameterBound:
    name: str
    lower: float
    upper: float


@dataclass(frozen=True)
class ParameterBounds:
    """Search box; names are dotted ModelParams names or ``initial.<state field>``"""
    entries: Tuple[ParameterBound, ...]

    @classmethod
    def from_list(cls, items: Sequence) -> 'ParameterBounds':
        entries = []
        for item in items:
            if isinstance(item, ParameterBound):
                entries.append(item)
            elif isinstance(item, dict):
                entries.append(ParameterBound(item['name'], float(item['lower']), float(item['upper'])))
            else:
                name, lower, upper = item
                entries.append(ParameterBound(name, float(lower), float(upper)))
        return cls(tuple(entries))

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    @property
    def lower(self) -> np.ndarray:
        return np.array([e.lower for e in self.entries])

    @property
    def upper(self) -> np.ndarray:
        return np.array([e.upper for e in self.entries])

    @property
    def dim(self) -> int:
        return len(self.entries)

    def contains(self, vector) -> bool:
        vector = np.asarray(vector)
        return bool(np.all(vector >= self.lower) and np.all(vector <= self.upper))

    def validate(self, base_params: Optional[ModelParams] = None) -> bool:
        errors = []
        if not self.entries:
            errors.append("at least one parameter bound is required")
        seen = set()
        for e in self.entries:
            if e.name in seen:
                errors.append(f"{e.name}: duplicated bound")
            seen.add(e.name)
            if not (math.isfinite(e.lower) and math.isfinite(e.upper) and e.lower < e.upper):
                errors.append(f"{e.name}: require finite lower < upper, got [{e.lower}, {e.upper}]")
            if e.name.startswith(INITIAL_PREFIX):
                if e.name[len(INITIAL_PREFIX):] not in STATE_FIELDS:
                    errors.append(f"{e.name}: unknown initial-state component")
            elif base_params is not None:
                try:
                    base_params.get_value(e.name)
                except ParameterValidationError:
                    errors.append(f"{e.name}: unknown parameter")
        if errors:
            raise ParameterValidationError(
                "Bounds errors:\n" + "\n".join(f"  - {error}" for error in errors)
            )
        return True


@dataclass(frozen=True)
class FitSettings:
    population_size: Optional[int] = None  # defaults to 15 x dimension
    max_generations: int = 200
    mutation: float = 0.7
    crossover: float = 0.9
    seed: int = 42
    penalty: float = DEFAULT_PENALTY
    tolerance: float = 1e-12
    patience: int = 50
    normalize: bool = True

    def population_for(self, dim: int) -> int:
        return int(self.population_size) if self.population_size else max(4, 15 * dim)

    def validate(self) -> bool:
        errors = []
        if self.population_size is not None and self.population_size < 4:
            errors.append("population_size must be at least 4")
        if self.max_generations < 0:
            errors.append("max_generations must be non-negative")
        if not 0 < self.mutation <= 2:
            errors.append("mutation factor F must lie in (0, 2]")
        if not 0 <= self.crossover <= 1:
            errors.append("crossover rate CR must lie in [0, 1]")
        if not (math.isfinite(self.penalty) and self.penalty > 0):
            errors.append("penalty must be a finite positive number")
        if self.tolerance < 0 or self.patience < 1:
            errors.append("tolerance must be >= 0 and patience >= 1")
        if errors:
            raise ParameterValidationError(
                "Fit settings errors:\n" + "\n".join(f"  - {error}" for error in errors)
            )
        return True


@dataclass
class FitResult:
    names: List[str]
    best_vector: np.ndarray
    best_objective: float
    history: List[float]
    evaluations: int
    failures: int
    seed: int
    settings: FitSettings
    generations: int
    stopped_early: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def best_parameters(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.best_vector)}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'best_parameters': self.best_parameters,
            'best_objective': self.best_objective,
            'history': list(self.history),
            'evaluations': self.evaluations,
            'failures': self.failures,
            'generations': self.generations,
            'stopped_early': self.stopped_early,
            'seed': self.seed,
            'settings': asdict(self.settings),
            **self.metadata,
        }


@dataclass(frozen=True, eq=False)
class CalibrationDataset:
    forcing: Any  # data_loader.ForcingSeries
    initial_state: LakeState
    observations: ObservationSet
    simulation: SimulationSettings


# --- objective ---------------------------------------------------------------------

def mse_objective(trajectory: Trajectory, observations: ObservationSet,
                  normalize: bool = True) -> float:
    """Weighted mean squared error, each variable scaled by its observation variance.

    Variables with zero observed variance are left unscaled. Records are
    summed in a canonical order so the result does not depend on the order of
    the observation file.
    """
    if len(observations) == 0:
        return 0.0
    check_coverage(observations, float(trajectory.times[0]), float(trajectory.times[-1]))

    total = 0.0
    for variable in sorted(set(observations.variables)):
        mask = observations.mask(variable)
        times = observations.times[mask]
        values = observations.values[mask]
        weights = observations.weights[mask]
        order = np.lexsort((weights, values, times))
        times, values, weights = times[order], values[order], weights[order]

        predicted = trajectory.interpolate(variable, times)
        scale = float(np.var(values)) if normalize else 1.0
        if not scale > 0:
            scale = 1.0
        total += float(np.sum(weights * (predicted - values) ** 2)) / scale
    weight_sum = float(np.sum(np.sort(observations.weights)))
    return total / weight_sum


def apply_candidate(vector, names: Sequence[str], base_params: ModelParams,
                    initial_state: LakeState) -> Tuple[ModelParams, LakeState]:
    """Patch parameters and initial state with a candidate vector"""
    param_overrides = {}
    state_overrides = {}
    for name, value in zip(names, vector):
        if name.startswith(INITIAL_PREFIX):
            state_overrides[name[len(INITIAL_PREFIX):]] = float(value)
        else:
            param_overrides[name] = float(value)
    params = base_params.with_overrides(param_overrides) if param_overrides else base_params
    state = initial_state.with_values(**state_overrides) if state_overrides else initial_state
    return params, state


def evaluate_candidate(vector, dataset: CalibrationDataset, base_params: ModelParams,
                       settings: FitSettings, bounds: ParameterBounds) -> float:
    """Objective of one candidate; any failure returns settings.penalty instead of raising"""
    try:
        params, state = apply_candidate(vector, bounds.names, base_params, dataset.initial_state)
        trajectory = simulate(params, dataset.forcing, state, dataset.simulation)
        value = mse_objective(trajectory, dataset.observations, normalize=settings.normalize)
    except Exception as e:
        logger.debug(f"Candidate {np.asarray(vector).tolist()} failed: {e}")
        return settings.penalty
    if not math.isfinite(value):
        return settings.penalty
    return min(value, settings.penalty)


class CandidateEvaluator:
    """Picklable objective for the DE population"""

    def __init__(self, dataset: CalibrationDataset, base_params: ModelParams,
                 bounds: ParameterBounds, settings: FitSettings):
        self.dataset = dataset
        self.base_params = base_params
        self.bounds = bounds
        self.settings = settings
        self.evaluations = 0
        self.failures = 0

    def __call__(self, vector) -> float:
        value = evaluate_candidate(vector, self.dataset, self.base_params, self.settings, self.bounds)
        self.evaluations += 1
        if value >= self.settings.penalty:
            self.failures += 1
        return value


# --- differential evolution ---------------------------------------------------------------

def reflect_into_bounds(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Fold coordinates back into [lower, upper] by mirror reflection"""
    width = upper - lower
    y = np.mod(x - lower, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return np.clip(lower + y, lower, upper)


def differential_evolution(objective: Callable[[np.ndarray], float], bounds: ParameterBounds,
                           settings: FitSettings, workers: int = 1,
                           progress: Optional[Callable[[int, float], None]] = None) -> FitResult:
    """Minimize objective over the bounds box with DE/rand/1/bin.

    Random draws come from one generator seeded with settings.seed and are
    taken in fixed candidate order. Every generation is evaluated through
    one order-preserving worker pool opened for the whole run, so the result
    does not depend on workers.

    Args:
        objective: Function of a parameter vector, never raising
        bounds: Search box
        settings: DE settings
        workers: Worker processes for evaluating a generation
        progress: Optional callback(generation, best_objective)

    Returns:
        FitResult with the best-ever candidate
    """
    bounds.validate()
    settings.validate()
    rng = np.random.default_rng(settings.seed)
    lower, upper = bounds.lower, bounds.upper
    dim = bounds.dim
    size = settings.population_for(dim)

    def evaluate(vectors: np.ndarray) -> np.ndarray:
        values = np.array(pool.map(objective, list(vectors)), dtype=float)
        return np.where(np.isfinite(values), values, settings.penalty)

    with WorkerPool(min(workers, size)) as pool:
        population = lower + rng.random((size, dim)) * (upper - lower)
        fitness = evaluate(population)
        evaluations = size
        failures = int(np.sum(fitness >= settings.penalty))

        best = int(np.argmin(fitness))
        best_vector, best_value = population[best].copy(), float(fitness[best])
        history = [best_value]
        stale = 0
        stopped_early = False
        generation = 0

        logger.info(f"DE start: dim={dim}, population={size}, best={best_value:.6g}")
        for generation in range(1, settings.max_generations + 1):
            trials = np.empty_like(population)
            for i in range(size):
                candidates = np.delete(np.arange(size), i)
                r1, r2, r3 = rng.choice(candidates, 3, replace=False)
                mutant = population[r1] + settings.mutation * (population[r2] - population[r3])
                cross = rng.random(dim) < settings.crossover
                cross[rng.integers(dim)] = True
                trials[i] = reflect_into_bounds(np.where(cross, mutant, population[i]), lower, upper)

            trial_fitness = evaluate(trials)
            evaluations += size
            failures += int(np.sum(trial_fitness >= settings.penalty))

            improved = trial_fitness <= fitness
            population[improved] = trials[improved]
            fitness[improved] = trial_fitness[improved]

            best = int(np.argmin(fitness))
            previous = best_value
            if fitness[best] < best_value:
                best_vector, best_value = population[best].copy(), float(fitness[best])
            history.append(best_value)

            if progress:
                progress(generation, best_value)
            logger.debug(f"DE generation {generation}: best={best_value:.6g}")

            if previous - best_value > settings.tolerance * max(abs(previous), 1e-300):
                stale = 0
            else:
                stale += 1
                if stale >= settings.patience:
                    stopped_early = True
                    logger.info(f"DE stopped after {generation} generations without improvement")
                    break

    return FitResult(
        names=bounds.names,
        best_vector=best_vector,
        best_objective=best_value,
        history=history,
        evaluations=evaluations,
        failures=failures,
        seed=settings.seed,
        settings=settings,
        generations=generation,
        stopped_early=stopped_early,
    )


# --- identifiability screen and orchestration -----------------------------------------------

def screen_identifiable(objective: Callable[[np.ndarray], float], bounds: ParameterBounds,
                        center, rel_step: float = 0.1, threshold: float = 1e-2
                        ) -> Tuple[List[str], Dict[str, float]]:
    """One-at-a-time curvature scan of the objective around center.

    Steps are rel_step times each box width, so curvatures are comparable
    across parameters. A parameter counts as identifiable when its curvature
    reaches threshold times the largest one.

    Returns:
        (identifiable names, curvature per name)
    """
    center = np.asarray(center, dtype=float)
    lower, upper = bounds.lower, bounds.upper
    f0 = objective(center)
    curvatures = {}
    for i, name in enumerate(bounds.names):
        h = rel_step * (upper[i] - lower[i])
        plus, minus = center.copy(), center.copy()
        plus[i] = min(upper[i], center[i] + h)
        minus[i] = max(lower[i], center[i] - h)
        h_plus, h_minus = plus[i] - center[i], center[i] - minus[i]
        f_plus, f_minus = objective(plus), objective(minus)
        # second difference on a possibly uneven stencil, in box-width units
        denominator = 0.5 * h_plus * h_minus * (h_plus + h_minus)
        if denominator <= 0:
            curvatures[name] = 0.0
            continue
        second = (h_minus * f_plus + h_plus * f_minus - (h_plus + h_minus) * f0) / denominator
        curvatures[name] = float(second * (upper[i] - lower[i]) ** 2)
    largest = max(curvatures.values(), default=0.0)
    identifiable = [name for name, c in curvatures.items() if largest > 0 and c >= threshold * largest]
    return identifiable, curvatures


class Calibrator:
    """Fits model parameters to observations"""

    def __init__(self, base_params: ModelParams, dataset: CalibrationDataset,
                 bounds: ParameterBounds, settings: Optional[FitSettings] = None,
                 workers: int = 1):
        self.base_params = base_params
        self.dataset = dataset
        self.bounds = bounds
        self.settings = settings or FitSettings()
        self.workers = workers

    def validate(self) -> bool:
        self.base_params.validate()
        self.bounds.validate(self.base_params)
        self.settings.validate()
        self.dataset.simulation.validate()
        check_coverage(self.dataset.observations, self.dataset.simulation.t0, self.dataset.simulation.t1)
        return True

    def fit(self, progress: Optional[Callable[[int, float], None]] = None) -> FitResult:
        """Run DE and return the best candidate with the fitted-run summary"""
        self.validate()
        evaluator = CandidateEvaluator(self.dataset, self.base_params, self.bounds, self.settings)
        result = differential_evolution(evaluator, self.bounds, self.settings,
                                        workers=self.workers, progress=progress)
        if result.failures:
            logger.warning(f"{result.failures} of {result.evaluations} candidate simulations failed")

        params, state = self.best_inputs(result)
        result.metadata['observed_variables'] = self.dataset.observations.variable_names
        result.metadata['observation_count'] = len(self.dataset.observations)
        try:
            trajectory = simulate(params, self.dataset.forcing, state, self.dataset.simulation)
            total_p = float(np.mean(trajectory.total_phosphorus())) * 1000.0
            result.metadata['mean_total_p_ug_L'] = total_p
            result.metadata['trophic_state'] = classify_trophic(total_p)
        except Exception as e:
            logger.warning(f"Best-fit simulation failed: {e}")
        return result

    def best_inputs(self, result: FitResult) -> Tuple[ModelParams, LakeState]:
        return apply_candidate(result.best_vector, result.names, self.base_params,
                               self.dataset.initial_state)


def create_calibrator(base_params: ModelParams, dataset: CalibrationDataset,
                      bounds: ParameterBounds, settings: Optional[FitSettings] = None,
                      workers: int = 1) -> Calibrator:
    """Factory function to create a Calibrator"""
    return Calibrator(base_params, dataset, bounds, settings, workers)
