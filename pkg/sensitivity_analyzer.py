"""
Time-dependent Sobol sensitivity analysis

Saltelli sampling of the physicochemical factors (epilimnion depth, water
exchange, turbidity, phosphorus input, temperature), one simulation per
design row, and first/total-order indices of cyanobacterial biomass at each
output time with bootstrap confidence half-widths.
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import qmc

from errors import CoverageError, ParameterValidationError, SensitivityAbortError
from lake_model import LakeState, ModelParams
from simulator import SimulationSettings, simulate
from worker_pool import parallel_map

logger = logging.getLogger(__name__)

TRANSFORMS = ('offset', 'scale', 'value', 'none')
FORCING_TARGETS = ('temperature', 'epilimnion_depth', 'surface_light', 'p_in')
# first day of May through October on the 365-day calendar
MONTH_STARTS = (121.0, 152.0, 182.0, 213.0, 244.0, 274.0)
DEGENERATE_VARIANCE = 1e-12


@dataclass(frozen=True)
class SobolFactor:
    name: str
    lower: float
    upper: float
    transform: str = 'scale'
    target: Optional[str] = None

    @property
    def target_name(self) -> str:
        return self.target or self.name


def default_factors() -> List[SobolFactor]:
    return [
        SobolFactor('epilimnion_depth', 0.0, 2.7, 'offset', 'epilimnion_depth'),
        SobolFactor('exchange_rate', 0.02, 0.12, 'value', 'exchange_rate'),
        SobolFactor('turbidity', 0.7, 1.3, 'scale', 'k_bg'),
        SobolFactor('phosphorus_input', 0.7, 1.3, 'scale', 'p_in'),
        SobolFactor('temperature', 0.0, 3.5, 'offset', 'temperature'),
    ]


@dataclass(frozen=True)
class SobolDesign:
    factors: Tuple[SobolFactor, ...] = field(default_factory=lambda: tuple(default_factors()))
    n_base: int = 128
    seed: int = 42
    output_times: Tuple[float, ...] = MONTH_STARTS
    output_variable: str = 'cyano'
    sampler: str = 'sobol'
    bootstrap: int = 200
    confidence: float = 0.95
    failure_budget: float = 0.01

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.factors]

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def evaluations(self) -> int:
        return self.n_base * (self.k + 2)

    def validate(self, base_params: Optional[ModelParams] = None) -> bool:
        errors = []
        n = self.n_base
        if n < 64 or n & (n - 1):
            errors.append(f"n_base must be a power of two >= 64, got {n}")
        if not self.factors:
            errors.append("at least one factor is required")
        if len(set(self.names)) != len(self.names):
            errors.append("factor names must be unique")
        for f in self.factors:
            if not (math.isfinite(f.lower) and math.isfinite(f.upper) and f.lower <= f.upper):
                errors.append(f"{f.name}: require finite lower <= upper")
            if f.transform not in TRANSFORMS:
                errors.append(f"{f.name}: unknown transform '{f.transform}'")
            elif f.transform != 'none' and f.target_name not in FORCING_TARGETS and base_params is not None:
                try:
                    base_params.get_value(f.target_name)
                except ParameterValidationError:
                    errors.append(f"{f.name}: unknown target '{f.target_name}'")
        if self.sampler not in ('sobol', 'uniform'):
            errors.append(f"unknown sampler '{self.sampler}'")
        if not self.output_times:
            errors.append("output_times must not be empty")
        if self.bootstrap < 0:
            errors.append("bootstrap must be >= 0")
        if not 0 < self.confidence < 1:
            errors.append("confidence must lie in (0, 1)")
        if not 0 <= self.failure_budget < 1:
            errors.append("failure_budget must lie in [0, 1)")
        if errors:
            raise ParameterValidationError(
                "Sobol design errors:\n" + "\n".join(f"  - {error}" for error in errors)
            )
        return True


@dataclass
class SaltelliSample:
    """Matrices A, B (N x k) and the k radial matrices A_B^(i) (k x N x k)"""
    A: np.ndarray
    B: np.ndarray
    AB: np.ndarray

    def rows(self) -> np.ndarray:
        """All N(k+2) evaluation points: A, then B, then each A_B^(i)"""
        return np.vstack([self.A, self.B] + [page for page in self.AB])


def saltelli_sample(design: SobolDesign) -> SaltelliSample:
    """Build the Saltelli design from one 2k-dimensional sequence.

    The first k columns form A and the last k form B. The sobol sampler uses
    a scrambled Sobol' sequence, the uniform sampler plain seeded draws.
    """
    k, n = design.k, design.n_base
    if design.sampler == 'sobol':
        engine = qmc.Sobol(d=2 * k, scramble=True, seed=design.seed)
        unit = engine.random_base2(int(round(math.log2(n))))
    else:
        unit = np.random.default_rng(design.seed).random((n, 2 * k))

    lower = np.array([f.lower for f in design.factors])
    upper = np.array([f.upper for f in design.factors])
    A = lower + unit[:, :k] * (upper - lower)
    B = lower + unit[:, k:] * (upper - lower)

    AB = np.tile(A, (k, 1, 1))
    for i in range(k):
        AB[i, :, i] = B[:, i]
    return SaltelliSample(A, B, AB)


@dataclass
class SobolIndices:
    first_order: np.ndarray
    total_order: np.ndarray
    variance: np.ndarray
    degenerate: np.ndarray


def sobol_indices(f_A, f_B, f_AB) -> SobolIndices:
    """First-order (Saltelli 2010) and total-order (Jansen) indices.

    Args:
        f_A, f_B: Outputs at A and B, shape (..., N)
        f_AB: Outputs at the radial matrices, shape (k, ..., N)

    Returns:
        SobolIndices with arrays of shape (k, ...). Where the pooled A/B
        variance vanishes the indices are NaN and ``degenerate`` is True.
    """
    f_A = np.asarray(f_A, dtype=float)
    f_B = np.asarray(f_B, dtype=float)
    f_AB = np.asarray(f_AB, dtype=float)

    pooled = np.concatenate([f_A, f_B], axis=-1)
    variance = np.var(pooled, axis=-1)
    scale = np.maximum(np.mean(pooled ** 2, axis=-1), 1e-300)
    degenerate = variance <= DEGENERATE_VARIANCE * scale
    safe = np.where(degenerate, 1.0, variance)

    v_first = np.mean(f_B * (f_AB - f_A), axis=-1)
    v_total = 0.5 * np.mean((f_A - f_AB) ** 2, axis=-1)
    first = np.where(degenerate, np.nan, v_first / safe)
    total = np.where(degenerate, np.nan, v_total / safe)
    return SobolIndices(first, total, variance, np.asarray(degenerate))


def bootstrap_half_widths(f_A, f_B, f_AB, replicates: int, confidence: float,
                          seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Percentile bootstrap half-widths of S1 and ST, resampling design rows"""
    f_A = np.asarray(f_A)
    f_B = np.asarray(f_B)
    f_AB = np.asarray(f_AB)
    n = f_A.shape[-1]
    shape = (f_AB.shape[0],) + f_A.shape[:-1]
    if replicates <= 0:
        return np.zeros(shape), np.zeros(shape)

    rng = np.random.default_rng(seed)
    first = np.empty((replicates,) + shape)
    total = np.empty((replicates,) + shape)
    for b in range(replicates):
        idx = rng.integers(0, n, n)
        resampled = sobol_indices(f_A[..., idx], f_B[..., idx], f_AB[..., idx])
        first[b] = resampled.first_order
        total[b] = resampled.total_order

    alpha = 100.0 * (1.0 - confidence) / 2.0
    with warnings.catch_warnings():
        # all-NaN slices where the output is degenerate
        warnings.simplefilter("ignore", RuntimeWarning)
        lo_1, hi_1 = np.nanpercentile(first, [alpha, 100.0 - alpha], axis=0)
        lo_t, hi_t = np.nanpercentile(total, [alpha, 100.0 - alpha], axis=0)
    return 0.5 * (hi_1 - lo_1), 0.5 * (hi_t - lo_t)


# --- model evaluation ----------------------------------------------------------------

def apply_factors(params: ModelParams, forcing, factors: Sequence[SobolFactor], row
                  ) -> Tuple[ModelParams, Any]:
    """Apply one design row to parameters and forcing"""
    overrides: Dict[str, float] = {}
    columns: Dict[str, np.ndarray] = {}
    for factor, value in zip(factors, row):
        if factor.transform == 'none':
            continue
        target = factor.target_name
        is_param = target not in ('temperature', 'epilimnion_depth', 'surface_light')
        if is_param:
            current = overrides.get(target, params.get_value(target))
            overrides[target] = _transform(factor.transform, current, value)
        if target in FORCING_TARGETS:
            column = columns.get(target, getattr(forcing, target))
            if column is not None:
                columns[target] = _transform(factor.transform, column, value)
            elif not is_param:
                raise ParameterValidationError(f"forcing has no '{target}' column for factor {factor.name}")
    if overrides:
        params = params.with_overrides(overrides)
    if columns:
        forcing = forcing.with_columns(**columns)
    return params, forcing


def _transform(kind: str, current, value: float):
    if kind == 'offset':
        return current + value
    if kind == 'scale':
        return current * value
    if kind == 'value':
        return np.full_like(current, value, dtype=float) if isinstance(current, np.ndarray) else value
    return current


class SobolRowEvaluator:
    """Simulates one design row and samples the output variable; None on failure"""

    def __init__(self, base_params: ModelParams, base_forcing, initial_state: LakeState,
                 simulation: SimulationSettings, factors: Sequence[SobolFactor],
                 output_variable: str, output_times: Sequence[float]):
        self.base_params = base_params
        self.base_forcing = base_forcing
        self.initial_state = initial_state
        self.simulation = simulation
        self.factors = tuple(factors)
        self.output_variable = output_variable
        self.output_times = np.asarray(output_times, dtype=float)

    def __call__(self, row) -> Optional[np.ndarray]:
        try:
            params, forcing = apply_factors(self.base_params, self.base_forcing, self.factors, row)
            trajectory = simulate(params, forcing, self.initial_state, self.simulation)
            values = trajectory.interpolate(self.output_variable, self.output_times)
        except Exception as e:
            logger.debug(f"Design row {list(row)} failed: {e}")
            return None
        if not np.all(np.isfinite(values)):
            return None
        return values


@dataclass
class SobolResult:
    factor_names: List[str]
    times: np.ndarray
    first_order: np.ndarray  # (times, factors)
    total_order: np.ndarray
    first_order_ci: np.ndarray
    total_order_ci: np.ndarray
    evaluations: int
    n_effective: int
    failed_rows: List[int]
    degenerate: np.ndarray  # (times,)
    design: SobolDesign

    def to_frame(self) -> pd.DataFrame:
        records = []
        for ti, t in enumerate(self.times):
            for fi, name in enumerate(self.factor_names):
                records.append({
                    'time': float(t),
                    'factor': name,
                    's1': float(self.first_order[ti, fi]),
                    'st': float(self.total_order[ti, fi]),
                    's1_ci': float(self.first_order_ci[ti, fi]),
                    'st_ci': float(self.total_order_ci[ti, fi]),
                })
        return pd.DataFrame(records, columns=['time', 'factor', 's1', 'st', 's1_ci', 'st_ci'])

    def to_dict(self) -> Dict[str, Any]:
        design = asdict(self.design)
        design['factors'] = [asdict(f) for f in self.design.factors]
        return {
            'design': design,
            'evaluations': self.evaluations,
            'n_effective': self.n_effective,
            'failed_rows': list(self.failed_rows),
            'degenerate_times': [float(t) for t, d in zip(self.times, self.degenerate) if d],
            'estimators': {'first_order': 'saltelli2010', 'total_order': 'jansen'},
        }


def time_dependent_sobol(base_params: ModelParams, base_forcing, design: SobolDesign,
                         initial_state: LakeState, simulation: SimulationSettings,
                         workers: int = 1,
                         progress: Optional[Callable[[str], None]] = None) -> SobolResult:
    """Sobol indices of the output variable at every output time.

    Every design row is simulated once over the whole window. Up to
    failure_budget of the rows may fail; each failure removes its base
    index j from A, B and all radial matrices.

    Raises:
        SensitivityAbortError: If more rows fail than the budget allows
    """
    design.validate(base_params)
    simulation.validate()
    times = np.asarray(design.output_times, dtype=float)
    tolerance = 1e-9 * max(1.0, abs(simulation.t1))
    if np.any(times < simulation.t0 - tolerance) or np.any(times > simulation.t1 + tolerance):
        raise CoverageError(
            f"output times must lie within the simulated window [{simulation.t0}, {simulation.t1}]"
        )

    sample = saltelli_sample(design)
    rows = sample.rows()
    n, k = design.n_base, design.k
    logger.info(f"Sobol: {len(rows)} simulations ({k} factors, N={n}, workers={workers})")
    if progress:
        progress(f"{len(rows)} simulations")

    evaluator = SobolRowEvaluator(base_params, base_forcing, initial_state, simulation,
                                  design.factors, design.output_variable, times)
    outputs = parallel_map(evaluator, list(rows), workers)

    failed = [i for i, out in enumerate(outputs) if out is None]
    budget = int(math.floor(design.failure_budget * len(rows)))
    if len(failed) > budget:
        raise SensitivityAbortError(failed, budget)

    keep = np.ones(n, dtype=bool)
    for i in failed:
        keep[i % n] = False
    if failed:
        logger.warning(f"{len(failed)} design rows failed; N reduced from {n} to {int(keep.sum())}")

    Y = np.array([out if out is not None else np.full(len(times), np.nan) for out in outputs])
    f_A = Y[:n][keep].T
    f_B = Y[n:2 * n][keep].T
    f_AB = np.stack([Y[(2 + i) * n:(3 + i) * n][keep].T for i in range(k)])

    indices = sobol_indices(f_A, f_B, f_AB)
    ci_first, ci_total = bootstrap_half_widths(
        f_A, f_B, f_AB, design.bootstrap, design.confidence, design.seed + 1)
    if np.any(indices.degenerate):
        logger.warning("Output variance vanishes at some output times; indices undefined there")

    return SobolResult(
        factor_names=design.names,
        times=times,
        first_order=indices.first_order.T,
        total_order=indices.total_order.T,
        first_order_ci=ci_first.T,
        total_order_ci=ci_total.T,
        evaluations=len(rows),
        n_effective=int(keep.sum()),
        failed_rows=failed,
        degenerate=indices.degenerate,
        design=design,
    )
