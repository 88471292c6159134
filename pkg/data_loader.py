"""
Forcing and observation data

Reads forcing and observation CSV files into validated in-memory series,
interpolates forcing in time, and writes both back losslessly.

Forcing schema:      date,temperature_c,epilimnion_m[,light_umol_m2_s][,p_in_mgP_L]
Observation schema:  date,variable,value,unit[,weight]

A numeric ``day`` column (absolute day index, Jan 1 = 1) may replace
``date``. ISO dates are converted to a 365-day calendar counted from Jan 1 of
the first year in the file; Feb 29 maps to day 59.5.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import CoverageError, DataParseError, UnitError
from lake_model import DAYS_PER_YEAR, ForcingAt, in_warm_season

logger = logging.getLogger(__name__)

FORCING_REQUIRED = ('temperature_c', 'epilimnion_m')
FORCING_OPTIONAL = ('light_umol_m2_s', 'p_in_mgP_L')
OBSERVATION_REQUIRED = ('variable', 'value', 'unit')
OBSERVATION_OPTIONAL = ('weight',)
FLOAT_FORMAT = '%.17g'

# canonical unit first; factor converts the listed unit into the canonical one
_MCLR_UNITS = {'ug/L': 1.0, 'µg/L': 1.0, 'ppb': 1.0, 'ng/mL': 1.0, 'ng/L': 1e-3}
_CARBON_UNITS = {'mgC/L': 1.0, 'mg/L': 1.0, 'ugC/L': 1e-3, 'µgC/L': 1e-3}
_PHOSPHORUS_UNITS = {'mgP/L': 1.0, 'mg/L': 1.0, 'ugP/L': 1e-3, 'µgP/L': 1e-3,
                     'ug/L': 1e-3, 'µg/L': 1e-3}
_BURDEN_UNITS = {'ug/mgC': 1.0, 'µg/mgC': 1.0, 'mg/mgC': 1000.0}

UNIT_TABLE: Dict[str, Dict[str, float]] = {
    'mclr': _MCLR_UNITS,
    'tox_daphnia': _MCLR_UNITS,
    'tox_perch': _MCLR_UNITS,
    'tox_walleye': _MCLR_UNITS,
    'oxygen': {'mg/L': 1.0, 'ppm': 1.0, 'mgO2/L': 1.0},
    'phosphorus': _PHOSPHORUS_UNITS,
    'total_phosphorus': _PHOSPHORUS_UNITS,
    'cyano': _CARBON_UNITS,
    'algae': _CARBON_UNITS,
    'daphnia': _CARBON_UNITS,
    'perch': _CARBON_UNITS,
    'walleye': _CARBON_UNITS,
    'burden_daphnia': _BURDEN_UNITS,
    'burden_perch': _BURDEN_UNITS,
    'burden_walleye': _BURDEN_UNITS,
}
OBSERVABLES = tuple(UNIT_TABLE)


def unit_factor(variable: str, unit: str) -> float:
    """Factor converting a value in ``unit`` to the canonical unit of ``variable``"""
    if variable not in UNIT_TABLE:
        raise UnitError(f"variable '{variable}' is not observable (known: {', '.join(OBSERVABLES)})")
    units = UNIT_TABLE[variable]
    if unit not in units:
        raise UnitError(f"unknown unit '{unit}' for {variable} (accepted: {', '.join(units)})")
    return units[unit]


def date_to_day(date: pd.Timestamp, base_year: int) -> float:
    """Absolute day index on the 365-day calendar (Jan 1 of base_year = 1)"""
    doy = float(date.dayofyear)
    if date.is_leap_year:
        if date.month == 2 and date.day == 29:
            doy = 59.5
        elif date.month > 2:
            doy -= 1.0
    return (date.year - base_year) * DAYS_PER_YEAR + doy


# --- forcing -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ForcingSeries:
    """Sorted forcing samples with piecewise-linear interpolation.

    ``warm_season_offset`` is added to the interpolated temperature whenever
    the evaluation time falls in the warm season, independent of where the
    samples lie.
    """
    times: np.ndarray
    temperature: np.ndarray
    epilimnion_depth: np.ndarray
    surface_light: Optional[np.ndarray] = None
    p_in: Optional[np.ndarray] = None
    mode: str = 'linear'
    base_year: Optional[int] = None
    warm_season_offset: float = 0.0
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ('times', 'temperature', 'epilimnion_depth', 'surface_light', 'p_in'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        self.validate()

    def validate(self) -> bool:
        errors = []
        n = len(self.times)
        if n < 2:
            errors.append(f"at least 2 samples required, got {n}")
        for name in ('temperature', 'epilimnion_depth', 'surface_light', 'p_in'):
            column = getattr(self, name)
            if column is None:
                continue
            if len(column) != n:
                errors.append(f"{name} has {len(column)} samples, expected {n}")
            elif not np.all(np.isfinite(column)):
                errors.append(f"{name} contains non-finite values")
        if not np.all(np.isfinite(self.times)):
            errors.append("times contain non-finite values")
        elif n >= 2 and not np.all(np.diff(self.times) > 0):
            errors.append("times must be strictly increasing")
        if len(self.epilimnion_depth) == n and np.any(self.epilimnion_depth <= 0):
            errors.append("epilimnion depth must be positive")
        if self.surface_light is not None and np.any(self.surface_light < 0):
            errors.append("surface light must be non-negative")
        if self.p_in is not None and np.any(self.p_in < 0):
            errors.append("p_in must be non-negative")
        if self.mode != 'linear':
            errors.append(f"unsupported interpolation mode '{self.mode}'")
        if not math.isfinite(self.warm_season_offset):
            errors.append("warm_season_offset must be finite")
        if errors:
            raise DataParseError("invalid forcing series: " + "; ".join(errors), self.source)
        return True

    @classmethod
    def constant(cls, t0: float, t1: float, temperature: float, epilimnion_depth: float,
                 surface_light: Optional[float] = None, p_in: Optional[float] = None
                 ) -> 'ForcingSeries':
        """Two-sample series holding every column constant over [t0, t1]"""
        if not t1 > t0:
            t1 = t0 + 1.0
        return cls(
            times=np.array([t0, t1]),
            temperature=np.full(2, float(temperature)),
            epilimnion_depth=np.full(2, float(epilimnion_depth)),
            surface_light=None if surface_light is None else np.full(2, float(surface_light)),
            p_in=None if p_in is None else np.full(2, float(p_in)),
        )

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def covers(self, t0: float, t1: float) -> bool:
        tolerance = 1e-9 * max(1.0, abs(self.end))
        return self.start - tolerance <= t0 and t1 <= self.end + tolerance

    def at(self, t: float) -> ForcingAt:
        return interpolate_forcing(self, t)

    def with_columns(self, **columns) -> 'ForcingSeries':
        return replace(self, **columns)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            'day': self.times,
            'temperature_c': self.temperature,
            'epilimnion_m': self.epilimnion_depth,
        })
        if self.surface_light is not None:
            frame['light_umol_m2_s'] = self.surface_light
        if self.p_in is not None:
            frame['p_in_mgP_L'] = self.p_in
        return frame


def interpolate_forcing(series: ForcingSeries, t: float) -> ForcingAt:
    """Forcing at time t, linear between samples and clamped outside the series"""
    times = series.times
    clamped = False
    if t <= times[0] or t >= times[-1]:
        i = 0 if t <= times[0] else len(times) - 1
        tolerance = 1e-9 * max(1.0, abs(times[-1]))
        clamped = t < times[0] - tolerance or t > times[-1] + tolerance
        if clamped:
            logger.warning(f"Forcing requested at t={t:.4f} outside [{times[0]}, {times[-1]}]; clamped")

        def value(column):
            return None if column is None else float(column[i])
    else:
        i = int(np.searchsorted(times, t, side='right')) - 1
        w = (t - times[i]) / (times[i + 1] - times[i])

        def value(column):
            if column is None:
                return None
            return float(column[i] + w * (column[i + 1] - column[i]))

    temperature = value(series.temperature)
    if series.warm_season_offset and in_warm_season(t):
        temperature += series.warm_season_offset

    return ForcingAt(
        temperature=temperature,
        epilimnion_depth=value(series.epilimnion_depth),
        surface_light=value(series.surface_light),
        p_in=value(series.p_in),
        clamped=clamped,
    )


def _read_table(path: str, required: Sequence[str], optional: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise DataParseError("file not found", path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataParseError(f"cannot parse CSV: {e}", path)

    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    if 'date' not in columns and 'day' not in columns:
        raise DataParseError("missing column 'date' (or 'day')", path, 1)
    for name in required:
        if name not in columns:
            raise DataParseError(f"missing column '{name}'", path, 1)
    known = {'date', 'day', *required, *optional}
    unknown = [c for c in columns if c not in known]
    if unknown:
        raise DataParseError(f"unknown column(s): {', '.join(unknown)}", path, 1)
    return frame


def _line(row_position: int) -> int:
    # header is line 1
    return row_position + 2


def _parse_times(frame: pd.DataFrame, path: str,
                 base_year: Optional[int] = None) -> Tuple[np.ndarray, Optional[int]]:
    if 'day' in frame.columns:
        return _parse_numbers(frame, 'day', path), base_year

    dates = pd.to_datetime(frame['date'].str.strip(), format='%Y-%m-%d', errors='coerce')
    bad = np.flatnonzero(dates.isna().to_numpy())
    if len(bad):
        pos = int(bad[0])
        raise DataParseError(f"unparsable date '{frame['date'].iloc[pos]}'", path, _line(pos))
    if base_year is None:
        base_year = int(dates.iloc[0].year)
    days = np.array([date_to_day(d, base_year) for d in dates])
    return days, base_year


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _parse_numbers(frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
    # float() round-trips %.17g text exactly
    raw = frame[column].str.strip()
    values = np.array([_to_float(text) for text in raw], dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if len(bad):
        pos = int(bad[0])
        raise DataParseError(f"unparsable {column} value '{raw.iloc[pos]}'", path, _line(pos))
    return values


def load_forcing(path: str) -> ForcingSeries:
    """Load a forcing CSV.

    Args:
        path: CSV file path

    Returns:
        Validated ForcingSeries

    Raises:
        DataParseError: Missing column, bad value, non-increasing dates (with line number)
    """
    frame = _read_table(path, FORCING_REQUIRED, FORCING_OPTIONAL)
    times, base_year = _parse_times(frame, path)

    steps = np.diff(times)
    bad = np.flatnonzero(steps <= 0)
    if len(bad):
        pos = int(bad[0]) + 1
        kind = "duplicated" if steps[bad[0]] == 0 else "non-increasing"
        raise DataParseError(f"{kind} time", path, _line(pos))

    columns = {name: _parse_numbers(frame, name, path)
               for name in FORCING_REQUIRED + FORCING_OPTIONAL if name in frame.columns}

    depth = columns['epilimnion_m']
    bad = np.flatnonzero(depth <= 0)
    if len(bad):
        raise DataParseError("epilimnion depth must be positive", path, _line(int(bad[0])))
    for name in FORCING_OPTIONAL:
        if name in columns:
            bad = np.flatnonzero(columns[name] < 0)
            if len(bad):
                raise DataParseError(f"{name} must be non-negative", path, _line(int(bad[0])))

    series = ForcingSeries(
        times=times,
        temperature=columns['temperature_c'],
        epilimnion_depth=depth,
        surface_light=columns.get('light_umol_m2_s'),
        p_in=columns.get('p_in_mgP_L'),
        base_year=base_year,
        source=str(path),
    )
    logger.info(f"Loaded {len(times)} forcing samples from {path} (days {series.start:g}-{series.end:g})")
    return series


def write_forcing(series: ForcingSeries, path: str) -> str:
    series.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return str(path)


# --- observations --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed values in canonical units, one record per row"""
    times: np.ndarray
    variables: Tuple[str, ...]
    values: np.ndarray
    weights: np.ndarray
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'times', np.asarray(self.times, dtype=float))
        object.__setattr__(self, 'values', np.asarray(self.values, dtype=float))
        object.__setattr__(self, 'weights', np.asarray(self.weights, dtype=float))
        object.__setattr__(self, 'variables', tuple(self.variables))
        self.validate()

    @classmethod
    def from_records(cls, records: Sequence[Tuple]) -> 'ObservationSet':
        """Build from (time, variable, value[, weight]) tuples"""
        times, variables, values, weights = [], [], [], []
        for record in records:
            times.append(record[0])
            variables.append(record[1])
            values.append(record[2])
            weights.append(record[3] if len(record) > 3 else 1.0)
        return cls(np.array(times, dtype=float), tuple(variables),
                   np.array(values, dtype=float), np.array(weights, dtype=float))

    def validate(self) -> bool:
        n = len(self.times)
        errors = []
        if not (len(self.variables) == len(self.values) == len(self.weights) == n):
            errors.append("record columns differ in length")
        elif n:
            if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.values)):
                errors.append("times and values must be finite")
            if not np.all(self.weights > 0):
                errors.append("weights must be positive")
            unknown = sorted(set(self.variables) - set(OBSERVABLES))
            if unknown:
                errors.append(f"unobservable variable(s): {', '.join(unknown)}")
        if errors:
            raise DataParseError("invalid observations: " + "; ".join(errors), self.source)
        return True

    def __len__(self) -> int:
        return len(self.times)

    @property
    def variable_names(self) -> List[str]:
        """Distinct variables in first-appearance order"""
        return list(dict.fromkeys(self.variables))

    def mask(self, variable: str) -> np.ndarray:
        return np.array([v == variable for v in self.variables], dtype=bool)

    def time_range(self) -> Tuple[float, float]:
        return float(np.min(self.times)), float(np.max(self.times))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'day': self.times,
            'variable': list(self.variables),
            'value': self.values,
            'unit': [next(iter(UNIT_TABLE[v])) for v in self.variables],
            'weight': self.weights,
        })


def load_observations(path: str, base_year: Optional[int] = None) -> ObservationSet:
    """Load an observation CSV, converting every value into canonical units.

    Dates count from Jan 1 of ``base_year``; pass the forcing's base year so
    both files share one day axis. Without it the year of the first row is used.
    """
    frame = _read_table(path, OBSERVATION_REQUIRED, OBSERVATION_OPTIONAL)
    times, _ = _parse_times(frame, path, base_year)
    values = _parse_numbers(frame, 'value', path)
    weights = (_parse_numbers(frame, 'weight', path) if 'weight' in frame.columns
               else np.ones(len(frame)))

    variables = []
    for pos, (variable, unit) in enumerate(zip(frame['variable'].str.strip(), frame['unit'].str.strip())):
        try:
            factor = unit_factor(variable, unit)
        except UnitError as e:
            raise UnitError(str(e), path, _line(pos))
        values[pos] *= factor
        if not weights[pos] > 0:
            raise DataParseError("weight must be positive", path, _line(pos))
        variables.append(variable)

    observations = ObservationSet(times, tuple(variables), values, weights, source=str(path))
    logger.info(f"Loaded {len(observations)} observations of "
                f"{', '.join(observations.variable_names)} from {path}")
    return observations


def write_observations(observations: ObservationSet, path: str) -> str:
    observations.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return str(path)


def check_coverage(observations: ObservationSet, t0: float, t1: float) -> None:
    if len(observations) == 0:
        return
    first, last = observations.time_range()
    tolerance = 1e-9 * max(1.0, abs(t1))
    if first < t0 - tolerance or last > t1 + tolerance:
        raise CoverageError(
            f"observations span [{first:g}, {last:g}] outside simulated window [{t0:g}, {t1:g}]"
        )
