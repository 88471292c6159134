"""
Stoichiometric lake food-web model

State and parameter types plus the right-hand side of the epilimnion ODE
system: Droop phosphorus kinetics, Monod light limitation under Lambert-Beer
attenuation, cardinal temperature responses, a daphnia / yellow perch /
walleye consumer-resource chain, MC-LR production and bioaccumulation, and a
dissolved oxygen budget.

Units: carbon in mgC/L, phosphorus in mgP/L, toxin in µg MC-LR/L, oxygen in
mg/L, time in days. Body burdens are µg/mgC (multiply by 1e-3 for mg/mgC).
"""

import logging
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from errors import (
    DomainError,
    NonFiniteDerivativeError,
    ParameterValidationError,
    StateValidationError,
)

logger = logging.getLogger(__name__)

STATE_FIELDS: Tuple[str, ...] = (
    'cyano', 'cyano_quota', 'algae', 'algae_quota', 'phosphorus',
    'daphnia', 'perch', 'walleye', 'mclr',
    'tox_daphnia', 'tox_perch', 'tox_walleye', 'oxygen',
)
STATE_INDEX = {name: i for i, name in enumerate(STATE_FIELDS)}

# Cumulative diagnostics integrated alongside the state
LEDGER_FIELDS: Tuple[str, ...] = (
    'toxin_produced', 'toxin_sediment', 'toxin_decayed', 'toxin_outflow',
    'p_inflow', 'p_outflow', 'p_sunk',
)

EPS_BIOMASS = 1e-9  # mgC/L
LIGHT_ATTENUATION_FLOOR = 1e-12
DAYS_PER_YEAR = 365.0
BURDEN_DISPLAY_FACTOR = 1e-3  # µg/mgC -> mg/mgC
WARM_SEASON = (121.0, 273.0)  # May 1 - Sep 30, days of the 365-day calendar


def _p(default: float, unit: str):
    return field(default=default, metadata={'unit': unit})


@dataclass(frozen=True)
class PhytoplanktonParams:
    mu_max: float = _p(1.0, '1/day')
    q_min: float = _p(0.005, 'mgP/mgC')
    q_max: float = _p(0.05, 'mgP/mgC')
    rho_max: float = _p(0.02, 'mgP/mgC/day')
    k_p: float = _p(0.025, 'mgP/L')
    h_light: float = _p(60.0, 'umol/m2/s')
    k_shade: float = _p(0.2, 'L/mgC/m')
    m: float = _p(0.08, '1/day')
    t_min: float = _p(0.0, 'degC')
    t_opt: float = _p(16.0, 'degC')
    t_max: float = _p(28.0, 'degC')
    alpha_resp: float = _p(0.1, 'mgO2/mgC/day')
    sink_rate: float = _p(0.0, 'm/day')
    gamma_inhib: float = _p(0.0, 'L/ug')


@dataclass(frozen=True)
class AnimalParams:
    p_max: float = _p(0.5, '1/day')
    h: float = _p(0.3, 'mgC/L')
    e: float = _p(0.6, '1')
    theta: float = _p(0.03, 'mgP/mgC')
    m: float = _p(0.05, '1/day')
    t_min: float = _p(4.0, 'degC')
    t_opt: float = _p(20.0, 'degC')
    t_max: float = _p(30.0, 'degC')
    m_hyp: float = _p(0.3, '1/day')
    o_crit: float = _p(2.0, 'mg/L')
    hill_n: float = _p(4.0, '1')
    d_tox: float = _p(0.005, 'mgC/ug/day')
    a_aq: float = _p(0.005, 'L/mgC/day')
    beta: float = _p(0.5, '1')
    k_dep: float = _p(0.3, '1/day')
    alpha_resp: float = _p(0.1, 'mgO2/mgC/day')
    pref_c: float = _p(1.0, '1')
    pref_a: float = _p(1.0, '1')


@dataclass(frozen=True)
class ToxinParams:
    q_tox: float = _p(3.0, 'ug/mgC')
    leak: float = _p(0.02, '1/day')
    delta_m: float = _p(0.08, '1/day')


@dataclass(frozen=True)
class OxygenParams:
    alpha_photo: float = _p(2.0, 'mgO2/mgC')
    alpha_bod: float = _p(2.67, 'mgO2/mgC')
    k_re: float = _p(0.8, 'm/day')
    k_o2: float = _p(0.5, 'mg/L')


@dataclass(frozen=True)
class LightParams:
    light_mean: float = _p(250.0, 'umol/m2/s')
    light_amplitude: float = _p(150.0, 'umol/m2/s')
    light_phase_day: float = _p(172.0, 'day')


def default_cyano() -> PhytoplanktonParams:
    return PhytoplanktonParams(
        mu_max=0.9, q_min=0.004, q_max=0.04, rho_max=0.02, k_p=0.02,
        h_light=40.0, k_shade=0.3, m=0.08, t_min=8.0, t_opt=28.0, t_max=38.0,
        alpha_resp=0.1,
    )


def default_algae() -> PhytoplanktonParams:
    return PhytoplanktonParams(
        mu_max=1.0, q_min=0.005, q_max=0.05, rho_max=0.02, k_p=0.025,
        h_light=60.0, k_shade=0.2, m=0.08, t_min=0.0, t_opt=16.0, t_max=28.0,
        alpha_resp=0.1, sink_rate=0.15, gamma_inhib=0.02,
    )


def default_daphnia() -> AnimalParams:
    return AnimalParams(
        p_max=0.5, h=0.3, e=0.6, theta=0.03, m=0.05,
        t_min=4.0, t_opt=20.0, t_max=30.0, m_hyp=0.4, o_crit=1.5, hill_n=4.0,
        d_tox=0.01, a_aq=0.005, beta=0.6, k_dep=0.3, alpha_resp=0.15,
    )


def default_perch() -> AnimalParams:
    return AnimalParams(
        p_max=0.06, h=0.2, e=0.5, theta=0.05, m=0.003,
        t_min=4.0, t_opt=23.0, t_max=31.0, m_hyp=0.3, o_crit=3.0, hill_n=4.0,
        d_tox=0.002, a_aq=0.005, beta=0.5, k_dep=1.0, alpha_resp=0.03,
    )


def default_walleye() -> AnimalParams:
    # Walleye keep everything they take up: no depuration.
    return AnimalParams(
        p_max=0.03, h=0.1, e=0.5, theta=0.05, m=0.002,
        t_min=5.0, t_opt=22.0, t_max=30.0, m_hyp=0.3, o_crit=3.0, hill_n=4.0,
        d_tox=0.0005, a_aq=0.005, beta=0.6, k_dep=0.0, alpha_resp=0.02,
    )


@dataclass(frozen=True)
class ModelParams:
    """All rate constants of the lake model.

    The shipped defaults are assembled from literature ranges for
    north-temperate lakes; they are not fitted values.
    """
    cyano: PhytoplanktonParams = field(default_factory=default_cyano)
    algae: PhytoplanktonParams = field(default_factory=default_algae)
    daphnia: AnimalParams = field(default_factory=default_daphnia)
    perch: AnimalParams = field(default_factory=default_perch)
    walleye: AnimalParams = field(default_factory=default_walleye)
    toxin: ToxinParams = field(default_factory=ToxinParams)
    oxygen: OxygenParams = field(default_factory=OxygenParams)
    light: LightParams = field(default_factory=LightParams)
    k_bg: float = _p(0.5, '1/m')
    exchange_rate: float = _p(0.05, 'm/day')
    p_in: float = _p(0.02, 'mgP/L')
    o_in: float = _p(9.0, 'mg/L')
    uptake_temperature: bool = field(default=False, metadata={'unit': 'bool'})

    # --- dotted-name access -------------------------------------------------

    def parameter_names(self) -> List[str]:
        """List every numeric parameter as a dotted name"""
        names = []
        for f in fields(self):
            value = getattr(self, f.name)
            if is_dataclass(value):
                names.extend(f"{f.name}.{sub.name}" for sub in fields(value))
            elif not isinstance(value, bool):
                names.append(f.name)
        return names

    def _resolve(self, name: str) -> Tuple[Any, str, Any]:
        parts = name.split('.')
        if len(parts) == 1:
            group, attr = self, parts[0]
        elif len(parts) == 2:
            group = getattr(self, parts[0], None)
            attr = parts[1]
            if not is_dataclass(group):
                raise ParameterValidationError(f"Unknown parameter: {name}")
        else:
            raise ParameterValidationError(f"Unknown parameter: {name}")
        field_map = {f.name: f for f in fields(group)}
        if attr not in field_map or is_dataclass(getattr(group, attr)):
            raise ParameterValidationError(f"Unknown parameter: {name}")
        return group, attr, field_map[attr]

    def get_value(self, name: str) -> float:
        group, attr, _ = self._resolve(name)
        return getattr(group, attr)

    def unit_of(self, name: str) -> str:
        _, _, f = self._resolve(name)
        return f.metadata.get('unit', '1')

    def with_overrides(self, overrides: Mapping[str, float]) -> 'ModelParams':
        """Return a copy with dotted-name parameters replaced"""
        top_level: Dict[str, Any] = {}
        grouped: Dict[str, Dict[str, Any]] = {}
        for name, value in overrides.items():
            self._resolve(name)
            parts = name.split('.')
            if len(parts) == 1:
                top_level[parts[0]] = value
            else:
                grouped.setdefault(parts[0], {})[parts[1]] = float(value)
        for group_name, changes in grouped.items():
            top_level[group_name] = replace(getattr(self, group_name), **changes)
        for key in ('k_bg', 'exchange_rate', 'p_in', 'o_in'):
            if key in top_level:
                top_level[key] = float(top_level[key])
        return replace(self, **top_level)

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if is_dataclass(value):
                result[f.name] = {sub.name: getattr(value, sub.name) for sub in fields(value)}
            else:
                result[f.name] = value
        return result

    # --- validation ----------------------------------------------------------

    def validate(self) -> bool:
        """Validate parameter invariants, raising one error that lists every problem"""
        errors = []

        for name in ('cyano', 'algae'):
            phyto = getattr(self, name)
            errors.extend(_cardinal_errors(name, phyto.t_min, phyto.t_opt, phyto.t_max))
            if not 0 < phyto.q_min < phyto.q_max:
                errors.append(f"{name}: require 0 < q_min < q_max")
            if phyto.k_p <= 0 or phyto.h_light <= 0:
                errors.append(f"{name}: k_p and h_light must be positive")

        for name in ('daphnia', 'perch', 'walleye'):
            animal = getattr(self, name)
            errors.extend(_cardinal_errors(name, animal.t_min, animal.t_opt, animal.t_max))
            for attr in ('e', 'beta', 'pref_c', 'pref_a'):
                if not 0.0 <= getattr(animal, attr) <= 1.0:
                    errors.append(f"{name}.{attr} must lie in [0, 1]")
            if animal.h <= 0:
                errors.append(f"{name}.h must be positive")
            if animal.theta <= 0:
                errors.append(f"{name}.theta must be positive")

        if self.walleye.k_dep != 0.0:
            errors.append("walleye.k_dep must be 0 (walleye do not depurate)")

        for name in self.parameter_names():
            if name.endswith(('t_min', 't_opt', 't_max')):
                continue
            value = self.get_value(name)
            if not math.isfinite(value):
                errors.append(f"{name} must be finite")
            elif value < 0:
                errors.append(f"{name} must be non-negative")

        if errors:
            raise ParameterValidationError(
                "Parameter errors:\n" + "\n".join(f"  - {error}" for error in errors)
            )
        return True


def _cardinal_errors(name: str, t_min: float, t_opt: float, t_max: float) -> List[str]:
    if not t_min < t_opt < t_max:
        return [f"{name}: require t_min < t_opt < t_max"]
    if t_opt < 0.5 * (t_min + t_max):
        return [f"{name}: t_opt must not lie below the midpoint of t_min and t_max"]
    return []


@dataclass(frozen=True)
class LakeState:
    """Instantaneous state of the epilimnion ecosystem"""
    cyano: float = 0.0
    cyano_quota: float = 0.0
    algae: float = 0.0
    algae_quota: float = 0.0
    phosphorus: float = 0.0
    daphnia: float = 0.0
    perch: float = 0.0
    walleye: float = 0.0
    mclr: float = 0.0
    tox_daphnia: float = 0.0
    tox_perch: float = 0.0
    tox_walleye: float = 0.0
    oxygen: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, values) -> 'LakeState':
        return cls(*(float(v) for v in values[:len(STATE_FIELDS)]))

    def with_values(self, **changes: float) -> 'LakeState':
        return replace(self, **{k: float(v) for k, v in changes.items()})

    def validate(self, params: Optional[ModelParams] = None) -> bool:
        errors = []
        for name in STATE_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value):
                errors.append(f"{name} is not finite")
            elif value < 0:
                errors.append(f"{name} is negative ({value})")
        if params is not None:
            for biomass, quota, phyto in (('cyano', 'cyano_quota', params.cyano),
                                          ('algae', 'algae_quota', params.algae)):
                q = getattr(self, quota)
                if getattr(self, biomass) > 0 and not phyto.q_min <= q <= phyto.q_max:
                    errors.append(f"{quota}={q} outside [{phyto.q_min}, {phyto.q_max}]")
        if errors:
            raise StateValidationError(
                "State errors:\n" + "\n".join(f"  - {error}" for error in errors)
            )
        return True


def default_initial_state(params: Optional[ModelParams] = None) -> LakeState:
    """Early-spring state of a eutrophic lake (0.05 mgP/L dissolved phosphorus)"""
    params = params or ModelParams()
    return LakeState(
        cyano=0.02, cyano_quota=0.5 * (params.cyano.q_min + params.cyano.q_max),
        algae=0.1, algae_quota=0.5 * (params.algae.q_min + params.algae.q_max),
        phosphorus=0.05, daphnia=0.05, perch=0.05, walleye=0.01,
        mclr=0.01, tox_daphnia=0.0, tox_perch=0.0, tox_walleye=0.0,
        oxygen=11.0,
    )


@dataclass(frozen=True)
class ForcingAt:
    """Physical forcing at one instant"""
    temperature: float
    epilimnion_depth: float
    surface_light: Optional[float] = None
    p_in: Optional[float] = None
    clamped: bool = False

    def __post_init__(self):
        if not self.epilimnion_depth > 0:
            raise DomainError(f"epilimnion depth must be positive, got {self.epilimnion_depth}")
        if self.surface_light is not None and self.surface_light < 0:
            raise DomainError(f"surface light must be non-negative, got {self.surface_light}")


# --- functional responses ------------------------------------------------------

def day_of_year(t: float) -> float:
    """Map an absolute day index (Jan 1 = 1) onto the 365-day calendar"""
    return ((t - 1.0) % DAYS_PER_YEAR) + 1.0


def in_warm_season(t: float) -> bool:
    return WARM_SEASON[0] <= day_of_year(t) <= WARM_SEASON[1]


def cardinal_temperature(t: float, t_min: float, t_opt: float, t_max: float) -> float:
    """Cardinal temperature model with inflexion (CTMI), in [0, 1].

    t_opt must not lie below the midpoint of t_min and t_max; for such
    triples the denominator has a root inside (t_min, t_opt).
    """
    errors = _cardinal_errors('cardinal temperatures', t_min, t_opt, t_max)
    if errors:
        raise ParameterValidationError(f"{errors[0]}, got ({t_min}, {t_opt}, {t_max})")
    if t <= t_min or t >= t_max:
        return 0.0
    if t == t_opt:
        return 1.0
    numerator = (t - t_max) * (t - t_min) ** 2
    denominator = (t_opt - t_min) * (
        (t_opt - t_min) * (t - t_opt) - (t_opt - t_max) * (t_opt + t_min - 2.0 * t)
    )
    return min(1.0, max(0.0, numerator / denominator))


def depth_averaged_light_factor(i_in: float, h_light: float, k_total: float, z: float) -> float:
    """Depth average of the Monod light factor under exponential attenuation"""
    if z <= 0 or h_light <= 0 or k_total < 0:
        raise DomainError(
            f"light factor needs z > 0, h_light > 0, k_total >= 0 (z={z}, h={h_light}, k={k_total})"
        )
    if i_in <= 0:
        return 0.0
    kz = k_total * z
    if kz < LIGHT_ATTENUATION_FLOOR:
        return i_in / (h_light + i_in)
    return math.log((h_light + i_in) / (h_light + i_in * math.exp(-kz))) / kz


def phosphorus_uptake(p: float, q: float, phyto: PhytoplanktonParams) -> float:
    """Droop uptake rate per unit carbon, mgP/mgC/day"""
    if p <= 0:
        return 0.0
    fullness = (phyto.q_max - q) / (phyto.q_max - phyto.q_min)
    fullness = min(1.0, max(0.0, fullness))
    return phyto.rho_max * fullness * p / (phyto.k_p + p)


def droop_growth_rate(q: float, light_factor: float, temp_factor: float,
                      phyto: PhytoplanktonParams) -> float:
    """Specific growth rate, 1/day"""
    if q <= phyto.q_min:
        return 0.0
    return phyto.mu_max * temp_factor * (1.0 - phyto.q_min / q) * light_factor


def grazing_rates(cyano: float, algae: float, daphnia: AnimalParams) -> Tuple[float, float]:
    """Per-capita daphnia ingestion of cyanobacteria and algae, 1/day each"""
    weighted_c = daphnia.pref_c * max(cyano, 0.0)
    weighted_a = daphnia.pref_a * max(algae, 0.0)
    denominator = daphnia.h + weighted_c + weighted_a
    return (daphnia.p_max * weighted_c / denominator,
            daphnia.p_max * weighted_a / denominator)


def hypoxia_mortality(o: float, m_hyp: float, o_crit: float, hill_n: float) -> float:
    """Hill-type mortality rising as oxygen falls below o_crit, 1/day"""
    if o <= 0:
        return m_hyp
    if o_crit <= 0:
        return 0.0
    return m_hyp / (1.0 + (o / o_crit) ** hill_n)


def oxygen_saturation(t: float) -> float:
    """Freshwater dissolved oxygen at saturation, mg/L (empirical cubic fit)"""
    if not -1.0 <= t <= 45.0:
        raise DomainError(f"oxygen saturation formula is valid on [-1, 45] degC, got {t}")
    return 14.652 - 0.41022 * t + 0.0079910 * t ** 2 - 0.000077774 * t ** 3


def body_burden(tox_pool: float, biomass: float) -> float:
    """Toxin per unit carbon, µg/mgC"""
    if tox_pool == 0:
        return 0.0
    return tox_pool / max(biomass, EPS_BIOMASS)


def surface_light(t: float, light: LightParams) -> float:
    """Annual sinusoidal surface irradiance, µmol photons/m²/s"""
    phase = 2.0 * math.pi * (day_of_year(t) - light.light_phase_day) / DAYS_PER_YEAR
    return max(0.0, light.light_mean + light.light_amplitude * math.cos(phase))


# --- balance equations -----------------------------------------------------------

def flux_terms(t: float, values, params: ModelParams, forcing: ForcingAt) -> Dict[str, float]:
    """Evaluate every named flux of the model at one state.

    ``values`` is the 13-component state in quota form (order of STATE_FIELDS).
    Carbon fluxes are mgC/L/day, phosphorus mgP/L/day, toxin µg/L/day and
    oxygen mg/L/day.
    """
    c, qc, a, qa, p, d, y, w, mc, bd, by, bw, o = values
    cy, al, da, pe, wa = params.cyano, params.algae, params.daphnia, params.perch, params.walleye
    tox, oxy = params.toxin, params.oxygen

    temp = forcing.temperature
    z = forcing.epilimnion_depth
    i_in = forcing.surface_light if forcing.surface_light is not None else surface_light(t, params.light)
    p_in = forcing.p_in if forcing.p_in is not None else params.p_in
    dilution = params.exchange_rate / z

    phi_c = cardinal_temperature(temp, cy.t_min, cy.t_opt, cy.t_max)
    phi_a = cardinal_temperature(temp, al.t_min, al.t_opt, al.t_max)
    phi_d = cardinal_temperature(temp, da.t_min, da.t_opt, da.t_max)
    phi_y = cardinal_temperature(temp, pe.t_min, pe.t_opt, pe.t_max)
    phi_w = cardinal_temperature(temp, wa.t_min, wa.t_opt, wa.t_max)

    k_total = params.k_bg + cy.k_shade * c + al.k_shade * a
    light_c = depth_averaged_light_factor(i_in, cy.h_light, k_total, z)
    light_a = depth_averaged_light_factor(i_in, al.h_light, k_total, z)

    mu_c = droop_growth_rate(qc, light_c, phi_c, cy) if c > 0 else 0.0
    inhibition = 1.0 / (1.0 + al.gamma_inhib * mc)
    mu_a = droop_growth_rate(qa, light_a, phi_a, al) * inhibition if a > 0 else 0.0

    uptake_c = phosphorus_uptake(p, qc, cy)
    uptake_a = phosphorus_uptake(p, qa, al)
    if params.uptake_temperature:
        uptake_c *= phi_c
        uptake_a *= phi_a

    # daphnia grazing with stoichiometric (Liebig) assimilation
    g_c, g_a = grazing_rates(c, a, da)
    grazed_c = g_c * d
    grazed_a = g_a * d
    ingested = grazed_c + grazed_a
    ingested_p = qc * grazed_c + qa * grazed_a
    q_food = ingested_p / ingested if ingested > 0 else 0.0
    daphnia_assim = da.e * min(1.0, q_food / da.theta) * phi_d * ingested

    u_d = body_burden(bd, d)
    u_y = body_burden(by, y)
    u_w = body_burden(bw, w)
    hyp_d = hypoxia_mortality(o, da.m_hyp, da.o_crit, da.hill_n)
    hyp_y = hypoxia_mortality(o, pe.m_hyp, pe.o_crit, pe.hill_n)
    hyp_w = hypoxia_mortality(o, wa.m_hyp, wa.o_crit, wa.hill_n)
    loss_d = da.m + hyp_d + da.d_tox * u_d
    loss_y = pe.m + hyp_y + pe.d_tox * u_y
    loss_w = wa.m + hyp_w + wa.d_tox * u_w

    perch_pred = pe.p_max * d / (pe.h + d) * y
    perch_assim = pe.e * phi_y * perch_pred
    walleye_pred = wa.p_max * y / (wa.h + y) * w
    walleye_assim = wa.e * phi_w * walleye_pred

    cyano_mort = cy.m * c
    algae_mort = al.m * a
    algae_sunk = al.sink_rate / z * a

    recycling = (
        qc * cyano_mort + qa * algae_mort
        + (ingested_p - da.theta * daphnia_assim)
        + da.theta * loss_d * d
        + (da.theta * perch_pred - pe.theta * perch_assim)
        + pe.theta * loss_y * y
        + (pe.theta * walleye_pred - wa.theta * walleye_assim)
        + wa.theta * loss_w * w
    )

    # toxin pathways
    toxin_release = (tox.leak + cy.m) * tox.q_tox * c
    toxin_grazed = tox.q_tox * grazed_c
    toxin_to_perch = perch_pred * u_d
    toxin_to_walleye = walleye_pred * u_y
    aqueous_d = da.a_aq * mc * d
    aqueous_y = pe.a_aq * mc * y
    aqueous_w = wa.a_aq * mc * w
    depuration_d = da.k_dep * bd
    depuration_y = pe.k_dep * by
    depuration_w = wa.k_dep * bw
    sediment = loss_d * bd + loss_y * by + loss_w * bw

    # oxygen
    o_limit = o / (oxy.k_o2 + o) if oxy.k_o2 > 0 else 1.0
    respiration = o_limit * (
        cy.alpha_resp * c + al.alpha_resp * a
        + da.alpha_resp * d + pe.alpha_resp * y + wa.alpha_resp * w
    )
    bod = o_limit * oxy.alpha_bod * cyano_mort

    return {
        'temperature': temp, 'depth': z, 'surface_light': i_in, 'p_in': p_in,
        'dilution': dilution,
        'mu_c': mu_c, 'mu_a': mu_a, 'uptake_c': uptake_c, 'uptake_a': uptake_a,
        'cyano_growth': mu_c * c, 'cyano_mortality': cyano_mort,
        'cyano_flushing': dilution * c, 'cyano_grazed': grazed_c,
        'algae_growth': mu_a * a, 'algae_mortality': algae_mort,
        'algae_sunk': algae_sunk, 'algae_flushing': dilution * a, 'algae_grazed': grazed_a,
        'p_uptake': uptake_c * c + uptake_a * a,
        'p_recycling': recycling,
        'p_inflow': dilution * p_in, 'p_outflow_dissolved': dilution * p,
        'daphnia_assimilation': daphnia_assim, 'daphnia_loss': loss_d * d,
        'perch_predation': perch_pred, 'perch_assimilation': perch_assim, 'perch_loss': loss_y * y,
        'walleye_predation': walleye_pred, 'walleye_assimilation': walleye_assim,
        'walleye_loss': loss_w * w,
        'loss_rate_daphnia': loss_d, 'loss_rate_perch': loss_y, 'loss_rate_walleye': loss_w,
        'toxin_release': toxin_release, 'toxin_grazed': toxin_grazed,
        'toxin_to_daphnia': da.beta * toxin_grazed,
        'toxin_egested': ((1.0 - da.beta) * toxin_grazed
                          + (1.0 - pe.beta) * toxin_to_perch
                          + (1.0 - wa.beta) * toxin_to_walleye),
        'toxin_to_perch': toxin_to_perch, 'toxin_to_walleye': toxin_to_walleye,
        'toxin_aqueous_daphnia': aqueous_d, 'toxin_aqueous_perch': aqueous_y,
        'toxin_aqueous_walleye': aqueous_w,
        'toxin_depuration_daphnia': depuration_d, 'toxin_depuration_perch': depuration_y,
        'toxin_depuration_walleye': depuration_w,
        'toxin_sediment': sediment,
        'toxin_decay': tox.delta_m * mc, 'toxin_outflow': dilution * mc,
        'photosynthesis': oxy.alpha_photo * (mu_c * c + mu_a * a),
        'respiration': respiration, 'bod': bod,
        'reaeration': oxy.k_re / z * (oxygen_saturation(temp) - o),
        'oxygen_exchange': dilution * (params.o_in - o),
    }


def _derivatives_from_fluxes(values, fx: Dict[str, float], params: ModelParams) -> List[float]:
    c, qc, a, qa, p, d, y, w, mc, bd, by, bw, o = values
    pe, wa = params.perch, params.walleye

    d_c = fx['cyano_growth'] - fx['cyano_mortality'] - fx['cyano_flushing'] - fx['cyano_grazed']
    d_a = (fx['algae_growth'] - fx['algae_mortality'] - fx['algae_sunk']
           - fx['algae_flushing'] - fx['algae_grazed'])
    d_qc = fx['uptake_c'] - fx['mu_c'] * qc if c > 0 else 0.0
    d_qa = fx['uptake_a'] - fx['mu_a'] * qa if a > 0 else 0.0
    d_p = fx['p_inflow'] - fx['p_outflow_dissolved'] - fx['p_uptake'] + fx['p_recycling']
    d_d = fx['daphnia_assimilation'] - fx['daphnia_loss'] - fx['perch_predation']
    d_y = fx['perch_assimilation'] - fx['perch_loss'] - fx['walleye_predation']
    d_w = fx['walleye_assimilation'] - fx['walleye_loss']

    d_m = (fx['toxin_release'] + fx['toxin_egested']
           - fx['toxin_decay'] - fx['toxin_outflow']
           - fx['toxin_aqueous_daphnia'] - fx['toxin_aqueous_perch'] - fx['toxin_aqueous_walleye']
           + fx['toxin_depuration_daphnia'] + fx['toxin_depuration_perch']
           + fx['toxin_depuration_walleye'])
    d_bd = (fx['toxin_to_daphnia'] + fx['toxin_aqueous_daphnia'] - fx['toxin_depuration_daphnia']
            - fx['loss_rate_daphnia'] * bd - fx['toxin_to_perch'])
    d_by = (pe.beta * fx['toxin_to_perch'] + fx['toxin_aqueous_perch']
            - fx['toxin_depuration_perch'] - fx['loss_rate_perch'] * by - fx['toxin_to_walleye'])
    d_bw = (wa.beta * fx['toxin_to_walleye'] + fx['toxin_aqueous_walleye']
            - fx['toxin_depuration_walleye'] - fx['loss_rate_walleye'] * bw)
    d_o = (fx['photosynthesis'] - fx['respiration'] - fx['bod']
           + fx['reaeration'] + fx['oxygen_exchange'])

    return [d_c, d_qc, d_a, d_qa, d_p, d_d, d_y, d_w, d_m, d_bd, d_by, d_bw, d_o]


def _check_finite(derivatives, names, t: float) -> None:
    for name, value in zip(names, derivatives):
        if not math.isfinite(value):
            raise NonFiniteDerivativeError(name, value, t)


def rhs(t: float, state: LakeState, params: ModelParams, forcing: ForcingAt) -> LakeState:
    """Time derivative of the lake state (quota form).

    The result is returned as a LakeState whose fields hold derivatives, so
    negative values are expected and no state invariants apply to it.
    """
    values = [getattr(state, name) for name in STATE_FIELDS]
    fx = flux_terms(t, values, params, forcing)
    derivatives = _derivatives_from_fluxes(values, fx, params)
    _check_finite(derivatives, STATE_FIELDS, t)
    return LakeState(*derivatives)


# --- conserved-variable form used by the integrator ----------------------------------

def to_internal(state: LakeState) -> np.ndarray:
    """Pack a state into the integration vector.

    Quota slots carry cell phosphorus (quota x biomass) so total phosphorus is
    linear in the vector; the ledger accumulators start at zero.
    """
    y = np.zeros(len(STATE_FIELDS) + len(LEDGER_FIELDS))
    y[:len(STATE_FIELDS)] = state.to_array()
    y[STATE_INDEX['cyano_quota']] = state.cyano_quota * state.cyano
    y[STATE_INDEX['algae_quota']] = state.algae_quota * state.algae
    return y


def _quota(cell_p: float, biomass: float, phyto: PhytoplanktonParams) -> float:
    if biomass > 0:
        return cell_p / biomass
    return phyto.q_min


def internal_values(y, params: ModelParams) -> List[float]:
    """Unpack the integration vector into quota-form state values"""
    values = [float(v) for v in y[:len(STATE_FIELDS)]]
    values[1] = _quota(values[1], values[0], params.cyano)
    values[3] = _quota(values[3], values[2], params.algae)
    return values


def from_internal(y, params: ModelParams) -> LakeState:
    values = internal_values(y, params)
    for biomass_i, quota_i, phyto in ((0, 1, params.cyano), (2, 3, params.algae)):
        values[quota_i] = min(phyto.q_max, max(phyto.q_min, values[quota_i]))
        if values[biomass_i] <= 0:
            values[quota_i] = phyto.q_min
    return LakeState(*values)


INTERNAL_NAMES: Tuple[str, ...] = (
    STATE_FIELDS[:1] + ('cyano_cell_p',) + STATE_FIELDS[2:3] + ('algae_cell_p',)
    + STATE_FIELDS[4:] + LEDGER_FIELDS
)


def internal_derivatives(t: float, y, params: ModelParams, forcing: ForcingAt) -> np.ndarray:
    """Derivative of the integration vector including ledger accumulators"""
    values = internal_values(y, params)
    c, qc, a, qa = values[0], values[1], values[2], values[3]
    fx = flux_terms(t, values, params, forcing)
    derivatives = _derivatives_from_fluxes(values, fx, params)

    derivatives[1] = fx['uptake_c'] * c - qc * (
        fx['cyano_mortality'] + fx['cyano_flushing'] + fx['cyano_grazed'])
    derivatives[3] = fx['uptake_a'] * a - qa * (
        fx['algae_mortality'] + fx['algae_sunk'] + fx['algae_flushing'] + fx['algae_grazed'])

    derivatives.extend([
        fx['toxin_release'] + fx['toxin_grazed'],
        fx['toxin_sediment'],
        fx['toxin_decay'],
        fx['toxin_outflow'],
        fx['p_inflow'],
        fx['p_outflow_dissolved'] + qc * fx['cyano_flushing'] + qa * fx['algae_flushing'],
        qa * fx['algae_sunk'],
    ])
    _check_finite(derivatives, INTERNAL_NAMES, t)
    return np.array(derivatives)


def total_phosphorus(state: LakeState, params: ModelParams) -> float:
    """Dissolved plus particulate phosphorus held in all pools, mgP/L"""
    return (state.phosphorus
            + state.cyano_quota * state.cyano + state.algae_quota * state.algae
            + params.daphnia.theta * state.daphnia
            + params.perch.theta * state.perch
            + params.walleye.theta * state.walleye)


def total_toxin(state: LakeState) -> float:
    """Dissolved plus animal-held MC-LR, µg/L"""
    return state.mclr + state.tox_daphnia + state.tox_perch + state.tox_walleye


def create_model_params(overrides: Optional[Mapping[str, float]] = None) -> ModelParams:
    """Factory function returning validated default parameters with optional overrides"""
    params = ModelParams()
    if overrides:
        params = params.with_overrides(overrides)
    params.validate()
    return params


def classify_trophic(total_p: float) -> str:
    """Trophic state from total phosphorus in µg/L"""
    if total_p < 0 or not math.isfinite(total_p):
        raise DomainError(f"total phosphorus must be a non-negative number, got {total_p}")
    if total_p < 10.0:
        return 'oligotrophic'
    if total_p <= 35.0:
        return 'mesotrophic'
    return 'eutrophic'
