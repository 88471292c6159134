"""
Climate and nutrient scenarios

Declarative scenario transforms (warming, depth, exchange, phosphorus),
independent scenario sweeps, and vulnerability-index grids comparing peak
MC-LR under warming with the unwarmed case.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ParameterValidationError
from lake_model import LakeState, ModelParams
from simulator import (
    SeasonalMetrics,
    SimulationSettings,
    Trajectory,
    seasonal_metrics,
    simulate,
    warm_season_mask,
)
from worker_pool import parallel_map

logger = logging.getLogger(__name__)

EPS_MCLR = 1e-6  # µg/L
DEFAULT_EXCHANGE_RATES = (0.02, 0.04, 0.06, 0.08, 0.10, 0.12)
DEFAULT_DEPTH_OFFSETS = (0.0, 0.9, 1.8, 2.7)
DEFAULT_WARMING_LEVELS = (0.5, 1.5, 3.5)
METRICS = ('max', 'warm_mean')
WARMING_MODES = ('warm_season', 'uniform')


@dataclass(frozen=True)
class ScenarioSpec:
    label: str = 'base'
    warm_season_offset: Optional[float] = None
    temperature_offset: Optional[float] = None
    initial_phosphorus: Optional[float] = None
    p_in: Optional[float] = None
    exchange_rate: Optional[float] = None
    depth_offset: Optional[float] = None

    def validate(self) -> bool:
        errors = []
        for name in ('initial_phosphorus', 'p_in', 'exchange_rate'):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value >= 0):
                errors.append(f"{name} must be a non-negative number, got {value}")
        for name in ('warm_season_offset', 'temperature_offset', 'depth_offset'):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                errors.append(f"{name} must be finite")
        if errors:
            raise ParameterValidationError(
                f"Scenario '{self.label}' errors:\n" + "\n".join(f"  - {e}" for e in errors)
            )
        return True

    def is_identity(self) -> bool:
        return all(getattr(self, name) is None for name in (
            'warm_season_offset', 'temperature_offset', 'initial_phosphorus',
            'p_in', 'exchange_rate', 'depth_offset'))


@dataclass(frozen=True, eq=False)
class BaseCase:
    """Inputs shared by every scenario of a sweep or grid"""
    params: ModelParams
    forcing: Any  # data_loader.ForcingSeries
    initial_state: LakeState
    simulation: SimulationSettings

    def fingerprint(self) -> str:
        """Stable hash of the base inputs"""
        payload = {
            'params': self.params.to_dict(),
            'initial_state': asdict(self.initial_state),
            'simulation': asdict(self.simulation),
            'forcing': self.forcing.to_frame().to_dict(orient='list'),
            'warm_season_offset': self.forcing.warm_season_offset,
        }
        text = json.dumps(payload, sort_keys=True, default=float)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()


def apply_scenario(base_params: ModelParams, base_forcing, base_state: LakeState,
                   spec: ScenarioSpec) -> Tuple[ModelParams, Any, LakeState]:
    """Apply a scenario to copies of the inputs; the inputs are never modified"""
    spec.validate()
    params, forcing, state = base_params, base_forcing, base_state
    columns: Dict[str, Any] = {}

    if spec.warm_season_offset:
        columns['warm_season_offset'] = forcing.warm_season_offset + spec.warm_season_offset
    if spec.temperature_offset:
        columns['temperature'] = forcing.temperature + spec.temperature_offset

    if spec.depth_offset:
        depth = forcing.epilimnion_depth + spec.depth_offset
        if np.any(depth <= 0):
            raise ParameterValidationError(
                f"Scenario '{spec.label}': depth offset {spec.depth_offset} makes the epilimnion depth non-positive"
            )
        columns['epilimnion_depth'] = depth

    overrides: Dict[str, float] = {}
    if spec.p_in is not None:
        overrides['p_in'] = spec.p_in
        if forcing.p_in is not None:
            columns['p_in'] = np.full_like(forcing.p_in, spec.p_in)
    if spec.exchange_rate is not None:
        overrides['exchange_rate'] = spec.exchange_rate

    if columns:
        forcing = forcing.with_columns(**columns)
    if overrides:
        params = params.with_overrides(overrides)
    if spec.initial_phosphorus is not None:
        state = state.with_values(phosphorus=spec.initial_phosphorus)
    return params, forcing, state


def run_scenario(base: BaseCase, spec: ScenarioSpec) -> Trajectory:
    params, forcing, state = apply_scenario(base.params, base.forcing, base.initial_state, spec)
    return simulate(params, forcing, state, base.simulation)


def mclr_metric(trajectory: Trajectory, metric: str = 'max') -> float:
    """Seasonal MC-LR summary: maximum, or warm-season mean"""
    if len(trajectory) == 0:
        raise ValueError("trajectory is empty")
    mclr = trajectory.series('mclr')
    if metric == 'max':
        return float(np.max(mclr))
    if metric == 'warm_mean':
        warm = warm_season_mask(trajectory.times)
        if not warm.any():
            raise ValueError("trajectory has no warm-season samples")
        return float(np.mean(mclr[warm]))
    raise ValueError(f"unknown metric '{metric}'")


def _ratio(base_value: float, scenario_value: float) -> float:
    if not base_value >= EPS_MCLR:
        return float('nan')
    return scenario_value / base_value


def vulnerability_index(base_trajectory: Trajectory, scenario_trajectory: Trajectory,
                        metric: str = 'max') -> float:
    """Scenario MC-LR peak over base MC-LR peak; NaN when the base peak is below EPS_MCLR"""
    return _ratio(mclr_metric(base_trajectory, metric), mclr_metric(scenario_trajectory, metric))


class _MetricEvaluator:
    def __init__(self, base: BaseCase, metric: str):
        self.base = base
        self.metric = metric

    def __call__(self, spec: ScenarioSpec) -> Optional[float]:
        try:
            return mclr_metric(run_scenario(self.base, spec), self.metric)
        except Exception as e:
            logger.warning(f"Scenario '{spec.label}' failed: {e}")
            return None


@dataclass
class VulnerabilityGrid:
    exchange_rates: List[float]
    depth_offsets: List[float]
    warming_levels: List[float]
    values: np.ndarray  # (warming, depth, exchange)
    status: np.ndarray  # 'ok' | 'failed' | 'undefined'
    metadata: Dict[str, Any] = field(default_factory=dict)

    def matrix(self, warming: float) -> np.ndarray:
        return self.values[self.warming_levels.index(warming)]

    def to_frame(self) -> pd.DataFrame:
        records = []
        for wi, warming in enumerate(self.warming_levels):
            for di, depth in enumerate(self.depth_offsets):
                for ei, exchange in enumerate(self.exchange_rates):
                    records.append({
                        'exchange_rate': exchange,
                        'depth_offset': depth,
                        'warming': warming,
                        'index': float(self.values[wi, di, ei]),
                        'status': str(self.status[wi, di, ei]),
                    })
        return pd.DataFrame(records, columns=['exchange_rate', 'depth_offset', 'warming', 'index', 'status'])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'exchange_rates': list(self.exchange_rates),
            'depth_offsets': list(self.depth_offsets),
            'warming_levels': list(self.warming_levels),
            'matrices': [
                [[None if not math.isfinite(v) else float(v) for v in row] for row in matrix]
                for matrix in self.values
            ],
            'status': self.status.tolist(),
            **self.metadata,
        }


def _warming_spec(label: str, exchange: float, depth: float, warming: float,
                  warming_mode: str) -> ScenarioSpec:
    spec = ScenarioSpec(label=label, exchange_rate=exchange, depth_offset=depth)
    if not warming:
        return spec
    if warming_mode == 'uniform':
        return replace(spec, temperature_offset=warming)
    return replace(spec, warm_season_offset=warming)


def vulnerability_grid(base: BaseCase,
                       exchange_rates: Sequence[float] = DEFAULT_EXCHANGE_RATES,
                       depth_offsets: Sequence[float] = DEFAULT_DEPTH_OFFSETS,
                       warming_levels: Sequence[float] = DEFAULT_WARMING_LEVELS,
                       metric: str = 'max', warming_mode: str = 'warm_season',
                       base_at_defaults: bool = False, workers: int = 1,
                       progress: Optional[Callable[[str], None]] = None) -> VulnerabilityGrid:
    """Vulnerability index for every (warming, depth offset, exchange rate) cell.

    Each cell compares a run with the cell's exchange rate, depth offset and
    warming to the run with the same exchange rate and depth offset and no
    warming. With base_at_defaults the comparison run is the unmodified lake
    instead. Failed runs mark their cells 'failed'; the grid still completes.
    """
    exchange_rates = [float(v) for v in exchange_rates]
    depth_offsets = [float(v) for v in depth_offsets]
    warming_levels = [float(v) for v in warming_levels]
    if not (exchange_rates and depth_offsets and warming_levels):
        raise ParameterValidationError("vulnerability grid axes must not be empty")
    if metric not in METRICS:
        raise ParameterValidationError(f"unknown grid metric '{metric}' (use one of {METRICS})")
    if warming_mode not in WARMING_MODES:
        raise ParameterValidationError(f"unknown warming mode '{warming_mode}' (use one of {WARMING_MODES})")

    specs: List[ScenarioSpec] = []
    keys: List[Tuple] = []
    if base_at_defaults:
        specs.append(ScenarioSpec(label='base'))
        keys.append(('base',))
    for di, depth in enumerate(depth_offsets):
        for ei, exchange in enumerate(exchange_rates):
            if not base_at_defaults:
                specs.append(_warming_spec(f"nu={exchange:g},dz={depth:g},dT=0", exchange, depth, 0.0, warming_mode))
                keys.append(('base', di, ei))
            for wi, warming in enumerate(warming_levels):
                if warming == 0 and not base_at_defaults:
                    continue
                specs.append(_warming_spec(f"nu={exchange:g},dz={depth:g},dT={warming:g}",
                                           exchange, depth, warming, warming_mode))
                keys.append(('cell', wi, di, ei))

    logger.info(f"Vulnerability grid: {len(specs)} simulations")
    if progress:
        progress(f"{len(specs)} simulations")
    results = dict(zip(keys, parallel_map(_MetricEvaluator(base, metric), specs, workers)))

    shape = (len(warming_levels), len(depth_offsets), len(exchange_rates))
    values = np.full(shape, np.nan)
    status = np.full(shape, 'ok', dtype=object)
    for wi, warming in enumerate(warming_levels):
        for di in range(len(depth_offsets)):
            for ei in range(len(exchange_rates)):
                base_value = results[('base',)] if base_at_defaults else results[('base', di, ei)]
                if warming == 0 and not base_at_defaults:
                    scenario_value = base_value
                else:
                    scenario_value = results[('cell', wi, di, ei)]
                if base_value is None or scenario_value is None:
                    status[wi, di, ei] = 'failed'
                    continue
                index = _ratio(base_value, scenario_value)
                values[wi, di, ei] = index
                if not math.isfinite(index):
                    status[wi, di, ei] = 'undefined'

    return VulnerabilityGrid(
        exchange_rates=exchange_rates,
        depth_offsets=depth_offsets,
        warming_levels=warming_levels,
        values=values,
        status=status,
        metadata={
            'base_hash': base.fingerprint(),
            'metric': metric,
            'warming_mode': warming_mode,
            'base_at_defaults': base_at_defaults,
            'eps_mclr': EPS_MCLR,
        },
    )


# --- sweeps ------------------------------------------------------------------------

@dataclass
class SweepItem:
    spec: ScenarioSpec
    trajectory: Optional[Trajectory]
    metrics: Optional[SeasonalMetrics]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class _SweepEvaluator:
    def __init__(self, base: BaseCase):
        self.base = base

    def __call__(self, spec: ScenarioSpec) -> SweepItem:
        try:
            trajectory = run_scenario(self.base, spec)
            return SweepItem(spec, trajectory, seasonal_metrics(trajectory))
        except Exception as e:
            logger.warning(f"Scenario '{spec.label}' failed: {e}")
            return SweepItem(spec, None, None, str(e))


def sweep(base: BaseCase, specs: Sequence[ScenarioSpec], workers: int = 1) -> List[SweepItem]:
    """Run each scenario independently; results keep the order of specs"""
    labels = [spec.label for spec in specs]
    if len(set(labels)) != len(labels):
        raise ParameterValidationError("scenario labels must be unique")
    return parallel_map(_SweepEvaluator(base), list(specs), workers)


def temperature_sweep(offsets: Sequence[float]) -> List[ScenarioSpec]:
    """Warm-season warming scenarios, one per offset"""
    return [ScenarioSpec(label=f"dT=+{v:g}", warm_season_offset=float(v) or None) for v in offsets]


def phosphorus_sweep(levels: Sequence[float]) -> List[ScenarioSpec]:
    """Initial dissolved phosphorus scenarios, one per level (mgP/L)"""
    return [ScenarioSpec(label=f"P0={v:g}", initial_phosphorus=float(v)) for v in levels]
