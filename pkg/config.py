import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from calibrator import FitSettings, ParameterBounds
from data_loader import ForcingSeries, ObservationSet, UNIT_TABLE, load_forcing, load_observations, unit_factor
from errors import ConfigValidationError, ParameterValidationError, UnitError
from lake_model import STATE_FIELDS, LakeState, ModelParams, default_initial_state
from scenario_runner import (
    DEFAULT_DEPTH_OFFSETS,
    DEFAULT_EXCHANGE_RATES,
    DEFAULT_WARMING_LEVELS,
    METRICS,
    WARMING_MODES,
    ScenarioSpec,
    phosphorus_sweep,
    temperature_sweep,
)
from sensitivity_analyzer import SobolDesign, SobolFactor
from simulator import SimulationSettings

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
QUOTA_UNITS = ('mgP/mgC',)


class Config:
    """Environment configuration management class"""

    def __init__(self):
        # Load environment variables from .env file
        load_dotenv()

        # Parallelism
        self.workers_raw = os.getenv('LAKE_WORKERS')
        self.cpu_count = os.cpu_count() or 1

        # Logging
        self.log_level = os.getenv('LAKE_LOG_LEVEL', 'WARNING').upper()

        # Directory Configuration
        self.output_dir = os.getenv('LAKE_OUTPUT_DIR', './output')

        # Reproducibility
        self.default_seed = DEFAULT_SEED

    @property
    def workers(self) -> int:
        """Default worker count: LAKE_WORKERS when it parses, otherwise the CPU count"""
        try:
            return max(1, int(self.workers_raw)) if self.workers_raw else self.cpu_count
        except ValueError:
            return self.cpu_count

    def validate(self):
        """Validate configuration settings"""
        errors = []

        if self.workers_raw:
            try:
                if int(self.workers_raw) < 1:
                    errors.append("LAKE_WORKERS must be a positive integer")
            except ValueError:
                errors.append(f"LAKE_WORKERS is not an integer: {self.workers_raw!r}")

        if self.log_level not in LOG_LEVELS:
            errors.append(f"LAKE_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {self.log_level!r}")

        if not self.output_dir:
            errors.append("LAKE_OUTPUT_DIR must not be empty")

        if errors:
            raise ValueError("Configuration errors:\n" + "\n".join(f"  - {error}" for error in errors))

        return True

    def get_configuration_summary(self) -> dict:
        """Get a summary of current configuration"""
        return {
            'parallelism': {
                'workers': self.workers,
                'from_environment': bool(self.workers_raw),
                'cpu_count': self.cpu_count,
            },
            'logging': {
                'level': self.log_level,
            },
            'directories': {
                'output_dir': self.output_dir,
                'output_exists': os.path.isdir(self.output_dir),
            },
            'reproducibility': {
                'default_seed': self.default_seed,
            },
        }

    def load_config_from_dict(self, config_dict: dict):
        """Load configuration from dictionary"""
        for section, settings in config_dict.items():
            if section == 'parallelism':
                workers = settings.get('workers')
                if workers is not None:
                    self.workers_raw = str(workers)
            elif section == 'logging':
                self.log_level = str(settings.get('level', self.log_level)).upper()
            elif section == 'directories':
                self.output_dir = settings.get('output_dir', self.output_dir)
            elif section == 'reproducibility':
                self.default_seed = int(settings.get('default_seed', self.default_seed))

    def reset_to_defaults(self):
        """Reset configuration to default values"""
        self.__init__()


def create_config() -> Config:
    """Factory function to create Config instance"""
    return Config()


# --- run configuration -----------------------------------------------------------

TOP_LEVEL_KEYS = ('lake', 'seed', 'forcing', 'observations', 'parameters', 'initial_state',
                  'simulation', 'fit', 'sobol', 'scenarios', 'vulnerability')
FORCING_CONSTANT_KEYS = ('temperature', 'epilimnion_depth', 'surface_light', 'p_in')
FIT_KEYS = ('bounds', 'settings')
BOUND_KEYS = ('name', 'lower', 'upper')
SOBOL_KEYS = ('factors', 'n_base', 'output_times', 'output_variable', 'sampler',
              'bootstrap', 'confidence', 'failure_budget')
FACTOR_KEYS = ('name', 'lower', 'upper', 'transform', 'target')
SCENARIO_KEYS = ('label', 'warm_season_offset', 'temperature_offset', 'initial_phosphorus',
                 'p_in', 'exchange_rate', 'depth_offset')
SCENARIO_SET_KEYS = ('specs', 'warm_season_offsets', 'initial_phosphorus')
VULNERABILITY_KEYS = ('exchange_rates', 'depth_offsets', 'warming_levels', 'metric',
                      'warming_mode', 'base_at_defaults')


@dataclass(frozen=True)
class VulnerabilitySettings:
    exchange_rates: Tuple[float, ...] = DEFAULT_EXCHANGE_RATES
    depth_offsets: Tuple[float, ...] = DEFAULT_DEPTH_OFFSETS
    warming_levels: Tuple[float, ...] = DEFAULT_WARMING_LEVELS
    metric: str = 'max'
    warming_mode: str = 'warm_season'
    base_at_defaults: bool = False


@dataclass
class RunConfig:
    """Parsed and validated run configuration file"""
    lake: str
    params: ModelParams
    initial_state: LakeState
    simulation: SimulationSettings
    seed: Optional[int] = None
    forcing_path: Optional[str] = None
    forcing_constant: Optional[Dict[str, float]] = None
    observations_path: Optional[str] = None
    bounds: Optional[ParameterBounds] = None
    fit_settings: FitSettings = field(default_factory=FitSettings)
    sobol_design: SobolDesign = field(default_factory=SobolDesign)
    scenarios: List[ScenarioSpec] = field(default_factory=list)
    vulnerability: VulnerabilitySettings = field(default_factory=VulnerabilitySettings)
    source: Optional[str] = None
    config_hash: str = ''

    def resolve_seed(self, cli_seed: Optional[int] = None) -> int:
        """CLI seed first, then the config seed, then the fixed default"""
        if cli_seed is not None:
            return int(cli_seed)
        if self.seed is not None:
            return int(self.seed)
        return DEFAULT_SEED

    def load_forcing(self) -> ForcingSeries:
        if self.forcing_path is not None:
            return load_forcing(self.forcing_path)
        constant = self.forcing_constant or {}
        return ForcingSeries.constant(self.simulation.t0, self.simulation.t1, **constant)

    def load_observations(self, base_year: Optional[int] = None) -> ObservationSet:
        if self.observations_path is None:
            raise ConfigValidationError("an observation file is required for fitting", 'observations')
        return load_observations(self.observations_path, base_year)


def _strict_pairs(pairs):
    result = {}
    for key, value in pairs:
        if key in result:
            raise ConfigValidationError(f"duplicate key '{key}'")
        result[key] = value
    return result


def _reject_constant(token: str):
    raise ConfigValidationError(f"non-standard JSON number {token}")


def _check_keys(section: Any, allowed: Tuple[str, ...], where: str) -> Dict[str, Any]:
    if not isinstance(section, dict):
        raise ConfigValidationError("must be a JSON object", where or None)
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigValidationError(
            f"unknown key (allowed: {', '.join(allowed)})", prefix + unknown[0])
    return section


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"expected a number, got {value!r}", key)
    return float(value)


def _number_list(value: Any, key: str) -> Tuple[float, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigValidationError("expected a non-empty list of numbers", key)
    return tuple(_number(v, f"{key}[{i}]") for i, v in enumerate(value))


def _resolve_path(value: Any, key: str, base_dir: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigValidationError("expected a file path", key)
    path = value if os.path.isabs(value) else os.path.join(base_dir, value)
    if not os.path.isfile(path):
        raise ConfigValidationError(f"file not found: {path}", key)
    return path


def _parse_parameters(section: Any, base: ModelParams) -> ModelParams:
    if not isinstance(section, dict):
        raise ConfigValidationError("must be a JSON object", 'parameters')
    overrides: Dict[str, Any] = {}
    for name, raw in section.items():
        key = f"parameters.{name}"
        try:
            expected_unit = base.unit_of(name)
        except ParameterValidationError:
            raise ConfigValidationError("unknown parameter", key)
        if expected_unit == 'bool':
            if not isinstance(raw, bool):
                raise ConfigValidationError("expected true or false", key)
            overrides[name] = raw
            continue
        if isinstance(raw, dict):
            _check_keys(raw, ('value', 'unit'), key)
            if 'value' not in raw:
                raise ConfigValidationError("missing 'value'", key)
            unit = raw.get('unit', expected_unit)
            if unit != expected_unit:
                raise ConfigValidationError(f"unit '{unit}' does not match expected '{expected_unit}'", key)
            overrides[name] = _number(raw['value'], key)
        else:
            overrides[name] = _number(raw, key)
    params = base.with_overrides(overrides)
    params.validate()
    return params


def _parse_initial_state(section: Any, params: ModelParams) -> LakeState:
    state = default_initial_state(params)
    if section is None:
        return state
    _check_keys(section, STATE_FIELDS, 'initial_state')
    changes: Dict[str, float] = {}
    for name, raw in section.items():
        key = f"initial_state.{name}"
        if isinstance(raw, dict):
            _check_keys(raw, ('value', 'unit'), key)
            value = _number(raw.get('value'), key)
            unit = raw.get('unit')
            if name in UNIT_TABLE:
                try:
                    value *= unit_factor(name, unit)
                except UnitError as e:
                    raise ConfigValidationError(str(e), key)
            elif unit not in QUOTA_UNITS:
                raise ConfigValidationError(f"unit '{unit}' does not match expected 'mgP/mgC'", key)
            changes[name] = value
        else:
            changes[name] = _number(raw, key)
    state = state.with_values(**changes)
    state.validate(params)
    return state


def _parse_simulation(section: Any) -> SimulationSettings:
    _check_keys(section, tuple(f.name for f in fields(SimulationSettings)), 'simulation')
    for required in ('t0', 't1'):
        if required not in section:
            raise ConfigValidationError("required key is missing", f"simulation.{required}")
    kwargs: Dict[str, Any] = {}
    for name, raw in section.items():
        if name == 'clamp_negative':
            if not isinstance(raw, bool):
                raise ConfigValidationError("expected true or false", 'simulation.clamp_negative')
            kwargs[name] = raw
        elif name == 'store_stride':
            kwargs[name] = int(_number(raw, 'simulation.store_stride'))
        else:
            kwargs[name] = _number(raw, f"simulation.{name}")
    settings = SimulationSettings(**kwargs)
    try:
        settings.validate()
    except ValueError as e:
        raise ConfigValidationError(str(e), 'simulation')
    return settings


def _parse_forcing(section: Any, base_dir: str) -> Tuple[Optional[str], Optional[Dict[str, float]]]:
    if section is None:
        raise ConfigValidationError("required key is missing", 'forcing')
    if isinstance(section, str):
        return _resolve_path(section, 'forcing', base_dir), None
    _check_keys(section, ('path', 'constant'), 'forcing')
    if 'path' in section:
        return _resolve_path(section['path'], 'forcing.path', base_dir), None
    constant = _check_keys(section.get('constant'), FORCING_CONSTANT_KEYS, 'forcing.constant')
    for required in ('temperature', 'epilimnion_depth'):
        if required not in constant:
            raise ConfigValidationError("required key is missing", f"forcing.constant.{required}")
    return None, {k: _number(v, f"forcing.constant.{k}") for k, v in constant.items()}


def _parse_fit(section: Any, params: ModelParams) -> Tuple[Optional[ParameterBounds], FitSettings]:
    if section is None:
        return None, FitSettings()
    _check_keys(section, FIT_KEYS, 'fit')
    bounds = None
    if 'bounds' in section:
        raw_bounds = section['bounds']
        if not isinstance(raw_bounds, list):
            raise ConfigValidationError("expected a list of {name, lower, upper}", 'fit.bounds')
        items = []
        for i, entry in enumerate(raw_bounds):
            where = f"fit.bounds[{i}]"
            _check_keys(entry, BOUND_KEYS, where)
            if not isinstance(entry.get('name'), str):
                raise ConfigValidationError("expected a parameter name", f"{where}.name")
            items.append((entry['name'], _number(entry.get('lower'), f"{where}.lower"),
                          _number(entry.get('upper'), f"{where}.upper")))
        bounds = ParameterBounds.from_list(items)
        try:
            bounds.validate(params)
        except ValueError as e:
            raise ConfigValidationError(str(e), 'fit.bounds')

    settings_section = section.get('settings', {})
    allowed = tuple(f.name for f in fields(FitSettings) if f.name != 'seed')
    _check_keys(settings_section, allowed, 'fit.settings')
    kwargs: Dict[str, Any] = {}
    for name, raw in settings_section.items():
        key = f"fit.settings.{name}"
        if name == 'normalize':
            if not isinstance(raw, bool):
                raise ConfigValidationError("expected true or false", key)
            kwargs[name] = raw
        elif name in ('population_size', 'max_generations', 'patience'):
            kwargs[name] = None if raw is None and name == 'population_size' else int(_number(raw, key))
        else:
            kwargs[name] = _number(raw, key)
    settings = FitSettings(**kwargs)
    try:
        settings.validate()
    except ValueError as e:
        raise ConfigValidationError(str(e), 'fit.settings')
    return bounds, settings


def _parse_sobol(section: Any, params: ModelParams) -> SobolDesign:
    if section is None:
        return SobolDesign()
    _check_keys(section, SOBOL_KEYS, 'sobol')
    kwargs: Dict[str, Any] = {}
    for name, raw in section.items():
        key = f"sobol.{name}"
        if name == 'factors':
            if not isinstance(raw, list) or not raw:
                raise ConfigValidationError("expected a non-empty list of factors", key)
            factors = []
            for i, entry in enumerate(raw):
                where = f"{key}[{i}]"
                _check_keys(entry, FACTOR_KEYS, where)
                factors.append(SobolFactor(
                    name=str(entry.get('name', '')),
                    lower=_number(entry.get('lower'), f"{where}.lower"),
                    upper=_number(entry.get('upper'), f"{where}.upper"),
                    transform=str(entry.get('transform', 'scale')),
                    target=entry.get('target'),
                ))
            kwargs['factors'] = tuple(factors)
        elif name == 'output_times':
            kwargs[name] = _number_list(raw, key)
        elif name in ('output_variable', 'sampler'):
            kwargs[name] = str(raw)
        elif name in ('n_base', 'bootstrap'):
            kwargs[name] = int(_number(raw, key))
        else:
            kwargs[name] = _number(raw, key)
    design = SobolDesign(**kwargs)
    try:
        design.validate(params)
    except ValueError as e:
        raise ConfigValidationError(str(e), 'sobol')
    return design


def _parse_scenario(entry: Any, where: str) -> ScenarioSpec:
    _check_keys(entry, SCENARIO_KEYS, where)
    if not isinstance(entry.get('label'), str) or not entry['label']:
        raise ConfigValidationError("every scenario needs a label", f"{where}.label")
    kwargs = {k: _number(v, f"{where}.{k}") for k, v in entry.items() if k != 'label'}
    spec = ScenarioSpec(label=entry['label'], **kwargs)
    try:
        spec.validate()
    except ValueError as e:
        raise ConfigValidationError(str(e), where)
    return spec


def _parse_scenarios(section: Any) -> List[ScenarioSpec]:
    if section is None:
        return []
    if isinstance(section, list):
        return [_parse_scenario(entry, f"scenarios[{i}]") for i, entry in enumerate(section)]
    _check_keys(section, SCENARIO_SET_KEYS, 'scenarios')
    specs: List[ScenarioSpec] = []
    if 'warm_season_offsets' in section:
        specs.extend(temperature_sweep(_number_list(section['warm_season_offsets'],
                                                    'scenarios.warm_season_offsets')))
    if 'initial_phosphorus' in section:
        specs.extend(phosphorus_sweep(_number_list(section['initial_phosphorus'],
                                                   'scenarios.initial_phosphorus')))
    for i, entry in enumerate(section.get('specs', [])):
        specs.append(_parse_scenario(entry, f"scenarios.specs[{i}]"))
    labels = [spec.label for spec in specs]
    duplicates = sorted({label for label in labels if labels.count(label) > 1})
    if duplicates:
        raise ConfigValidationError(f"duplicate scenario label '{duplicates[0]}'", 'scenarios')
    return specs


def _parse_vulnerability(section: Any) -> VulnerabilitySettings:
    if section is None:
        return VulnerabilitySettings()
    _check_keys(section, VULNERABILITY_KEYS, 'vulnerability')
    kwargs: Dict[str, Any] = {}
    for name in ('exchange_rates', 'depth_offsets', 'warming_levels'):
        if name in section:
            kwargs[name] = _number_list(section[name], f"vulnerability.{name}")
    if 'metric' in section:
        if section['metric'] not in METRICS:
            raise ConfigValidationError(f"must be one of {', '.join(METRICS)}", 'vulnerability.metric')
        kwargs['metric'] = section['metric']
    if 'warming_mode' in section:
        if section['warming_mode'] not in WARMING_MODES:
            raise ConfigValidationError(f"must be one of {', '.join(WARMING_MODES)}",
                                        'vulnerability.warming_mode')
        kwargs['warming_mode'] = section['warming_mode']
    if 'base_at_defaults' in section:
        if not isinstance(section['base_at_defaults'], bool):
            raise ConfigValidationError("expected true or false", 'vulnerability.base_at_defaults')
        kwargs['base_at_defaults'] = section['base_at_defaults']
    return VulnerabilitySettings(**kwargs)


def parse_run_config(data: Dict[str, Any], base_dir: str = '.', source: Optional[str] = None,
                     config_hash: str = '') -> RunConfig:
    """Build a RunConfig from an already-decoded JSON object"""
    _check_keys(data, TOP_LEVEL_KEYS, '')
    if 'simulation' not in data:
        raise ConfigValidationError("required key is missing", 'simulation')

    lake = data.get('lake', 'lake')
    if not isinstance(lake, str):
        raise ConfigValidationError("expected a string", 'lake')
    seed = data.get('seed')
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigValidationError("expected a non-negative integer", 'seed')

    try:
        params = _parse_parameters(data.get('parameters', {}), ModelParams())
    except ParameterValidationError as e:
        raise ConfigValidationError(str(e), 'parameters')
    try:
        initial_state = _parse_initial_state(data.get('initial_state'), params)
    except ConfigValidationError:
        raise
    except ValueError as e:
        raise ConfigValidationError(str(e), 'initial_state')

    simulation = _parse_simulation(data['simulation'])
    forcing_path, forcing_constant = _parse_forcing(data.get('forcing'), base_dir)
    observations_path = None
    if data.get('observations') is not None:
        observations_path = _resolve_path(data['observations'], 'observations', base_dir)
    bounds, fit_settings = _parse_fit(data.get('fit'), params)

    return RunConfig(
        lake=lake,
        params=params,
        initial_state=initial_state,
        simulation=simulation,
        seed=seed,
        forcing_path=forcing_path,
        forcing_constant=forcing_constant,
        observations_path=observations_path,
        bounds=bounds,
        fit_settings=fit_settings,
        sobol_design=_parse_sobol(data.get('sobol'), params),
        scenarios=_parse_scenarios(data.get('scenarios')),
        vulnerability=_parse_vulnerability(data.get('vulnerability')),
        source=source,
        config_hash=config_hash,
    )


def load_run_config(path: str) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises:
        ConfigValidationError: On malformed JSON, unknown keys, unit mismatches
            or unresolvable file references; the message names the key
    """
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise ConfigValidationError(f"cannot read config file {path}: {e}")
    try:
        data = json.loads(raw.decode('utf-8'), object_pairs_hook=_strict_pairs,
                          parse_constant=_reject_constant)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigValidationError(f"invalid JSON in {path}: {e}")
    base_dir = os.path.dirname(os.path.abspath(path))
    config = parse_run_config(data, base_dir, source=path,
                              config_hash=hashlib.sha256(raw).hexdigest())
    logger.info(f"Loaded run configuration '{config.lake}' from {path}")
    return config
