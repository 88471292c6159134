"""
Fixed-step lake simulation

Integrates the lake model with the classical fourth-order Runge-Kutta scheme,
stores the trajectory with its cumulative phosphorus/toxin ledger, and derives
seasonal bloom metrics.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from errors import (
    CoverageError,
    DivergenceError,
    LakeModelError,
    ParameterValidationError,
    StiffnessError,
)
from lake_model import (
    BURDEN_DISPLAY_FACTOR,
    INTERNAL_NAMES,
    LEDGER_FIELDS,
    STATE_FIELDS,
    STATE_INDEX,
    ForcingAt,
    LakeState,
    ModelParams,
    body_burden,
    classify_trophic,
    from_internal,
    in_warm_season,
    internal_derivatives,
    surface_light,
    to_internal,
)

logger = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-8
MAX_HALVINGS = 3  # up to 8 sub-steps per step
BURDEN_SERIES = {
    'burden_daphnia': ('tox_daphnia', 'daphnia'),
    'burden_perch': ('tox_perch', 'perch'),
    'burden_walleye': ('tox_walleye', 'walleye'),
}
FORCING_COLUMNS = ('temperature', 'epilimnion_depth', 'surface_light', 'p_in')

_N_STATE = len(STATE_FIELDS)


@dataclass(frozen=True)
class SimulationSettings:
    t0: float
    t1: float
    dt: float = 1.0 / 3.0
    clamp_negative: bool = True
    store_stride: int = 1

    def validate(self) -> bool:
        errors = []
        if not (math.isfinite(self.t0) and math.isfinite(self.t1)):
            errors.append("t0 and t1 must be finite")
        elif self.t1 < self.t0:
            errors.append(f"t1 ({self.t1}) must not precede t0 ({self.t0})")
        if not self.dt > 0:
            errors.append(f"dt must be positive, got {self.dt}")
        if int(self.store_stride) != self.store_stride or self.store_stride < 1:
            errors.append(f"store_stride must be an integer >= 1, got {self.store_stride}")
        if errors:
            raise ParameterValidationError(
                "Simulation settings errors:\n" + "\n".join(f"  - {e}" for e in errors)
            )
        return True

    @property
    def n_steps(self) -> int:
        span = (self.t1 - self.t0) / self.dt
        nearest = round(span)
        if abs(span - nearest) < 1e-9 * max(1.0, span):
            return int(nearest)
        return int(math.ceil(span))

    @property
    def dt_effective(self) -> float:
        """Step actually taken, so that n_steps steps land exactly on t1"""
        n = self.n_steps
        return (self.t1 - self.t0) / n if n else self.dt


@dataclass
class Trajectory:
    """Stored states of one simulation run.

    ``values`` holds the LakeState components (quota form) one row per stored
    time, ``ledger`` the cumulative diagnostics of LEDGER_FIELDS and
    ``forcing`` the forcing in effect at each stored time.
    """
    times: np.ndarray
    values: np.ndarray
    ledger: np.ndarray
    forcing: np.ndarray
    params: ModelParams
    warnings: List[str] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def states(self) -> List[LakeState]:
        return [LakeState.from_array(row) for row in self.values]

    def state(self, index: int) -> LakeState:
        return LakeState.from_array(self.values[index])

    @property
    def final_state(self) -> LakeState:
        return self.state(-1)

    def series(self, name: str) -> np.ndarray:
        """Time series of a state variable, ledger term, forcing column or derived quantity"""
        if name in STATE_INDEX:
            return self.values[:, STATE_INDEX[name]]
        if name in LEDGER_FIELDS:
            return self.ledger[:, LEDGER_FIELDS.index(name)]
        if name in FORCING_COLUMNS:
            return self.forcing[:, FORCING_COLUMNS.index(name)]
        if name in BURDEN_SERIES:
            tox_name, biomass_name = BURDEN_SERIES[name]
            return np.array([
                body_burden(tox, biomass)
                for tox, biomass in zip(self.series(tox_name), self.series(biomass_name))
            ])
        if name == 'total_phosphorus':
            return self.total_phosphorus()
        if name == 'total_toxin':
            return self.total_toxin()
        raise KeyError(f"Unknown trajectory series: {name}")

    def interpolate(self, name: str, t) -> np.ndarray:
        """Linear interpolation of a series at the given times"""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tolerance = 1e-9 * max(1.0, abs(self.times[-1]))
        if np.any(t < self.times[0] - tolerance) or np.any(t > self.times[-1] + tolerance):
            raise CoverageError(
                f"times outside trajectory range [{self.times[0]}, {self.times[-1]}]"
            )
        return np.interp(t, self.times, self.series(name))

    def total_phosphorus(self) -> np.ndarray:
        p = self.params
        return (self.series('phosphorus')
                + self.series('cyano_quota') * self.series('cyano')
                + self.series('algae_quota') * self.series('algae')
                + p.daphnia.theta * self.series('daphnia')
                + p.perch.theta * self.series('perch')
                + p.walleye.theta * self.series('walleye'))

    def total_toxin(self) -> np.ndarray:
        return (self.series('mclr') + self.series('tox_daphnia')
                + self.series('tox_perch') + self.series('tox_walleye'))

    def toxin_ledger_error(self) -> float:
        """Largest relative mismatch between toxin holdings and the cumulative ledger"""
        held = self.total_toxin() - self.total_toxin()[0]
        booked = (self.series('toxin_produced') - self.series('toxin_sediment')
                  - self.series('toxin_decayed') - self.series('toxin_outflow'))
        scale = max(float(np.max(np.abs(self.total_toxin()))),
                    float(np.max(self.series('toxin_produced'))), 1e-300)
        return float(np.max(np.abs(held - booked)) / scale)

    def phosphorus_ledger_error(self) -> float:
        """Largest relative mismatch between total phosphorus and inflow/outflow/sinking"""
        total = self.total_phosphorus()
        booked = self.series('p_inflow') - self.series('p_outflow') - self.series('p_sunk')
        return float(np.max(np.abs(total - total[0] - booked)) / max(abs(total[0]), 1e-300))

    def to_frame(self) -> pd.DataFrame:
        """Wide table: time, every state variable, derived body burdens (µg/mgC)"""
        frame = pd.DataFrame(self.values, columns=list(STATE_FIELDS))
        frame.insert(0, 'time', self.times)
        for name in BURDEN_SERIES:
            frame[name] = self.series(name)
        return frame

    def ledger_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.ledger, columns=list(LEDGER_FIELDS))
        frame.insert(0, 'time', self.times)
        return frame


def rk4_step(derivative: Callable[[float, np.ndarray], np.ndarray],
             t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step for dy/dt = derivative(t, y)"""
    k1 = derivative(t, y)
    k2 = derivative(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = derivative(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = derivative(t + dt, y + dt * k3)
    return y + dt * (k1 + 2.0 * (k2 + k3) + k4) / 6.0


def _repair(y: np.ndarray, t: float, params: ModelParams, clamp_negative: bool) -> np.ndarray:
    """Check a freshly stepped vector and clamp roundoff negatives and quotas"""
    bad = ~np.isfinite(y)
    if bad.any():
        name = INTERNAL_NAMES[int(np.argmax(bad))]
        raise DivergenceError(f"non-finite value for '{name}' after step", t)

    if clamp_negative:
        state = y[:_N_STATE]
        negative = state < 0
        if negative.any():
            worst = int(np.argmin(state))
            if state[worst] <= -CLAMP_TOLERANCE:
                raise StiffnessError(INTERNAL_NAMES[worst], float(state[worst]), t)
            state[negative] = 0.0

    # Quota repair keeps total phosphorus: surplus cell P is released to the
    # dissolved pool, a deficit shrinks the biomass to cell P / q_min.
    p_index = STATE_INDEX['phosphorus']
    for biomass_name, quota_name, phyto in (('cyano', 'cyano_quota', params.cyano),
                                            ('algae', 'algae_quota', params.algae)):
        b = STATE_INDEX[biomass_name]
        i = STATE_INDEX[quota_name]
        cell_p = y[i]
        if cell_p > phyto.q_max * y[b]:
            y[i] = phyto.q_max * y[b]
            y[p_index] += cell_p - y[i]
        elif cell_p < phyto.q_min * y[b]:
            y[b] = cell_p / phyto.q_min
    return y


def _advance(y: np.ndarray, t: float, dt: float, params: ModelParams, forcing,
             clamp_negative: bool, halvings: int = 0) -> np.ndarray:
    def derivative(tt, yy):
        return internal_derivatives(tt, yy, params, forcing.at(tt))

    try:
        return _repair(rk4_step(derivative, t, y, dt), t + dt, params, clamp_negative)
    except StiffnessError:
        if halvings >= MAX_HALVINGS:
            raise
        half = 0.5 * dt
        logger.debug(f"Halving step at t={t:.4f} (dt={half:.5f})")
        y_mid = _advance(y, t, half, params, forcing, clamp_negative, halvings + 1)
        return _advance(y_mid, t + half, half, params, forcing, clamp_negative, halvings + 1)


class _FixedForcing:
    def __init__(self, forcing: ForcingAt):
        self.forcing = forcing

    def at(self, t: float) -> ForcingAt:
        return self.forcing


def step_rk4(state: LakeState, t: float, dt: float, params: ModelParams,
             forcing_provider, clamp_negative: bool = True) -> LakeState:
    """Advance a state by one RK4 step.

    Args:
        state: Current state
        t: Current time (day)
        dt: Step (day)
        params: Model parameters
        forcing_provider: Object with ``at(t) -> ForcingAt``, or a ForcingAt held fixed
        clamp_negative: Clamp roundoff negatives to zero

    Returns:
        The state at t + dt
    """
    if isinstance(forcing_provider, ForcingAt):
        forcing_provider = _FixedForcing(forcing_provider)
    y = _advance(to_internal(state), t, dt, params, forcing_provider, clamp_negative)
    return from_internal(y, params)


def _forcing_row(fx: ForcingAt, params: ModelParams, t: float) -> List[float]:
    light = fx.surface_light if fx.surface_light is not None else surface_light(t, params.light)
    p_in = fx.p_in if fx.p_in is not None else params.p_in
    return [fx.temperature, fx.epilimnion_depth, light, p_in]


def simulate(params: ModelParams, forcing_series, initial_state: LakeState,
             settings: SimulationSettings) -> Trajectory:
    """Integrate the lake model from settings.t0 to settings.t1.

    Args:
        params: Model parameters
        forcing_series: Forcing with ``covers(t0, t1)`` and ``at(t)``
        initial_state: State at t0
        settings: Integration settings

    Returns:
        Trajectory with every store_stride-th state plus the final one

    Raises:
        CoverageError: If the forcing does not span [t0, t1]
        LakeModelError: If integration fails, with the failing time attached
    """
    settings.validate()
    params.validate()
    initial_state.validate(params)
    if not forcing_series.covers(settings.t0, settings.t1):
        raise CoverageError(
            f"forcing does not cover the simulation window [{settings.t0}, {settings.t1}]"
        )

    n_steps = settings.n_steps
    dt = settings.dt_effective
    stride = int(settings.store_stride)
    warnings: List[str] = []

    y = to_internal(initial_state)
    times, rows, ledgers, forcings = [], [], [], []

    def record(t: float, vector: np.ndarray) -> None:
        fx = forcing_series.at(t)
        if fx.clamped:
            warnings.append(f"forcing clamped at t={t:.4f}")
        times.append(t)
        rows.append(from_internal(vector, params).to_array())
        ledgers.append(vector[_N_STATE:].copy())
        forcings.append(_forcing_row(fx, params, t))

    record(settings.t0, y)
    logger.debug(f"Simulating {n_steps} steps of {dt:.5f} d from t={settings.t0}")
    for k in range(n_steps):
        t = settings.t0 + k * dt
        try:
            y = _advance(y, t, dt, params, forcing_series, settings.clamp_negative)
        except LakeModelError as e:
            logger.debug(f"Integration failed at t={t:.4f}: {e}")
            raise
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            t_next = settings.t1 if k + 1 == n_steps else settings.t0 + (k + 1) * dt
            record(t_next, y)

    return Trajectory(
        times=np.array(times),
        values=np.array(rows),
        ledger=np.array(ledgers),
        forcing=np.array(forcings),
        params=params,
        warnings=warnings,
        metadata={
            'integrator': 'rk4',
            'dt': settings.dt,
            'dt_effective': dt,
            'n_steps': n_steps,
            'store_stride': stride,
            'clamp_negative': settings.clamp_negative,
            'clamp_tolerance': CLAMP_TOLERANCE,
            'max_substeps': 2 ** MAX_HALVINGS,
        },
    )


# --- seasonal metrics -------------------------------------------------------------

@dataclass(frozen=True)
class VariableMetrics:
    peak: float
    peak_day: float
    warm_mean: float


@dataclass
class SeasonalMetrics:
    variables: Dict[str, VariableMetrics]
    min_oxygen: float
    min_oxygen_day: float
    warm_season_total_p: float  # µg/L
    trophic_state: Optional[str]

    def peak(self, name: str) -> float:
        return self.variables[name].peak

    def peak_day(self, name: str) -> float:
        return self.variables[name].peak_day

    def warm_mean(self, name: str) -> float:
        return self.variables[name].warm_mean

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            name: {'peak': m.peak, 'peak_day': m.peak_day, 'warm_season_mean': m.warm_mean}
            for name, m in self.variables.items()
        }
        for name in BURDEN_SERIES:
            result[name]['peak_mg_per_mgC'] = self.variables[name].peak * BURDEN_DISPLAY_FACTOR
        return {
            'variables': result,
            'min_oxygen': self.min_oxygen,
            'min_oxygen_day': self.min_oxygen_day,
            'warm_season_total_p_ug_L': self.warm_season_total_p,
            'trophic_state': self.trophic_state,
        }


def warm_season_mask(times: np.ndarray) -> np.ndarray:
    return np.array([in_warm_season(t) for t in times], dtype=bool)


def seasonal_metrics(trajectory: Trajectory) -> SeasonalMetrics:
    """Peak, peak day and warm-season mean for every state variable and body burden"""
    if len(trajectory) == 0:
        raise ValueError("seasonal metrics need a non-empty trajectory")

    times = trajectory.times
    warm = warm_season_mask(times)
    variables = {}
    for name in list(STATE_FIELDS) + list(BURDEN_SERIES):
        values = trajectory.series(name)
        i = int(np.argmax(values))  # first index on ties
        warm_mean = float(np.mean(values[warm])) if warm.any() else float('nan')
        variables[name] = VariableMetrics(float(values[i]), float(times[i]), warm_mean)

    oxygen = trajectory.series('oxygen')
    i_min = int(np.argmin(oxygen))

    if warm.any():
        total_p = float(np.mean(trajectory.total_phosphorus()[warm])) * 1000.0
        trophic = classify_trophic(total_p)
    else:
        total_p, trophic = float('nan'), None

    return SeasonalMetrics(
        variables=variables,
        min_oxygen=float(oxygen[i_min]),
        min_oxygen_day=float(times[i_min]),
        warm_season_total_p=total_p,
        trophic_state=trophic,
    )
