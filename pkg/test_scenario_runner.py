import math
import unittest

import numpy as np

from data_loader import ForcingSeries
from errors import ParameterValidationError
from lake_model import ModelParams, default_initial_state
from scenario_runner import (
    EPS_MCLR,
    BaseCase,
    ScenarioSpec,
    _ratio,
    apply_scenario,
    mclr_metric,
    phosphorus_sweep,
    run_scenario,
    sweep,
    temperature_sweep,
    vulnerability_grid,
    vulnerability_index,
)
from simulator import SimulationSettings


def short_base(initial_state=None):
    params = ModelParams()
    return BaseCase(
        params=params,
        forcing=ForcingSeries.constant(150.0, 156.0, 20.0, 5.0),
        initial_state=initial_state or default_initial_state(params),
        simulation=SimulationSettings(t0=150.0, t1=156.0, dt=1.0 / 3.0, store_stride=3),
    )


class TestApplyScenario(unittest.TestCase):
    """Test cases for scenario transforms"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = ModelParams()
        self.state = default_initial_state(self.params)
        self.forcing = ForcingSeries(times=[100.0, 150.0, 280.0], temperature=[10.0, 20.0, 12.0],
                                     epilimnion_depth=[8.0, 5.0, 9.0])

    def test_identity(self):
        """Test the empty scenario returns the inputs unchanged"""
        spec = ScenarioSpec()
        self.assertTrue(spec.is_identity())
        params, forcing, state = apply_scenario(self.params, self.forcing, self.state, spec)
        self.assertIs(params, self.params)
        self.assertIs(forcing, self.forcing)
        self.assertIs(state, self.state)

    def test_warm_season_offset(self):
        """Test warming applies only between May 1 and Sep 30"""
        spec = ScenarioSpec(label='warm', warm_season_offset=2.0)
        _, forcing, _ = apply_scenario(self.params, self.forcing, self.state, spec)
        self.assertEqual([forcing.at(t).temperature for t in (100.0, 150.0, 280.0)], [10.0, 22.0, 12.0])
        self.assertEqual(self.forcing.at(150.0).temperature, 20.0)
        self.assertEqual(self.forcing.warm_season_offset, 0.0)

    def test_warm_season_offset_constant_forcing(self):
        """Test warming reaches mid-season under two-sample constant forcing"""
        constant = ForcingSeries.constant(1.0, 365.0, 20.0, 5.0)
        spec = ScenarioSpec(label='warm', warm_season_offset=3.5)
        _, forcing, _ = apply_scenario(self.params, constant, self.state, spec)
        self.assertEqual(forcing.at(200.0).temperature, 23.5)
        self.assertEqual(forcing.at(121.0).temperature, 23.5)
        self.assertEqual(forcing.at(273.0).temperature, 23.5)
        self.assertEqual(forcing.at(120.5).temperature, 20.0)
        self.assertEqual(forcing.at(300.0).temperature, 20.0)

    def test_warm_season_offset_sparse_forcing(self):
        """Test warming does not leak outside the season between sparse samples"""
        sparse = ForcingSeries(times=[100.0, 200.0], temperature=[20.0, 20.0], epilimnion_depth=[5.0, 5.0])
        spec = ScenarioSpec(label='warm', warm_season_offset=3.5)
        _, forcing, _ = apply_scenario(self.params, sparse, self.state, spec)
        self.assertEqual(forcing.at(110.0).temperature, 20.0)
        self.assertEqual(forcing.at(150.0).temperature, 23.5)

    def test_warm_season_offsets_add(self):
        """Test applying two warm-season scenarios in turn adds the offsets"""
        spec = ScenarioSpec(label='warm', warm_season_offset=1.0)
        _, once, _ = apply_scenario(self.params, self.forcing, self.state, spec)
        _, twice, _ = apply_scenario(self.params, once, self.state, spec)
        self.assertEqual(twice.warm_season_offset, 2.0)
        self.assertEqual(twice.at(150.0).temperature, 22.0)

    def test_uniform_offset_and_depth(self):
        """Test year-round warming and depth changes"""
        spec = ScenarioSpec(label='deep', temperature_offset=1.0, depth_offset=0.9)
        _, forcing, _ = apply_scenario(self.params, self.forcing, self.state, spec)
        self.assertEqual(forcing.temperature.tolist(), [11.0, 21.0, 13.0])
        np.testing.assert_allclose(forcing.epilimnion_depth, [8.9, 5.9, 9.9])

    def test_non_positive_depth_rejected(self):
        """Test a depth offset that empties the epilimnion raises"""
        with self.assertRaises(ParameterValidationError):
            apply_scenario(self.params, self.forcing, self.state, ScenarioSpec(depth_offset=-5.0))

    def test_parameters_and_state(self):
        """Test exchange, inflow phosphorus and initial phosphorus"""
        spec = ScenarioSpec(label='p', exchange_rate=0.08, p_in=0.05, initial_phosphorus=0.2)
        params, forcing, state = apply_scenario(self.params, self.forcing, self.state, spec)
        self.assertEqual(params.exchange_rate, 0.08)
        self.assertEqual(params.p_in, 0.05)
        self.assertIsNone(forcing.p_in)
        self.assertEqual(state.phosphorus, 0.2)
        self.assertNotEqual(self.state.phosphorus, 0.2)

    def test_invalid_spec(self):
        """Test negative concentrations are rejected"""
        with self.assertRaises(ParameterValidationError):
            ScenarioSpec(label='bad', initial_phosphorus=-0.1).validate()
        with self.assertRaises(ParameterValidationError):
            ScenarioSpec(label='bad', warm_season_offset=float('inf')).validate()


class TestVulnerabilityIndex(unittest.TestCase):
    """Test cases for MC-LR metrics and the index"""

    def test_ratio(self):
        """Test the ratio is undefined below the MC-LR floor"""
        self.assertEqual(_ratio(2.0, 3.0), 1.5)
        self.assertTrue(math.isnan(_ratio(0.0, 3.0)))
        self.assertTrue(math.isnan(_ratio(EPS_MCLR / 2.0, 1.0)))
        self.assertEqual(_ratio(EPS_MCLR, EPS_MCLR), 1.0)

    def test_self_comparison(self):
        """Test a trajectory compared with itself gives one"""
        trajectory = run_scenario(short_base(), ScenarioSpec())
        self.assertEqual(vulnerability_index(trajectory, trajectory), 1.0)
        self.assertEqual(mclr_metric(trajectory), float(np.max(trajectory.series('mclr'))))
        self.assertGreater(mclr_metric(trajectory, 'warm_mean'), 0.0)
        with self.assertRaises(ValueError):
            mclr_metric(trajectory, 'median')


class TestVulnerabilityGrid(unittest.TestCase):
    """Test cases for vulnerability grids"""

    def test_default_axes(self):
        """Test the default grid has one cell per warming, depth and exchange value"""
        messages = []
        grid = vulnerability_grid(short_base(), progress=messages.append)
        self.assertEqual(grid.values.shape, (3, 4, 6))
        self.assertEqual(len(grid.to_frame()), 72)
        self.assertEqual(messages, ['96 simulations'])
        self.assertTrue(np.all(grid.status == 'ok'))
        self.assertTrue(np.all(np.isfinite(grid.values)))
        self.assertEqual(grid.matrix(1.5).shape, (4, 6))
        summary = grid.to_dict()
        self.assertEqual(summary['metric'], 'max')
        self.assertEqual(len(summary['base_hash']), 64)

    def test_zero_warming_is_one(self):
        """Test cells without warming have index one"""
        grid = vulnerability_grid(short_base(), exchange_rates=(0.02, 0.12), depth_offsets=(0.0,),
                                  warming_levels=(0.0, 1.5))
        np.testing.assert_array_equal(grid.matrix(0.0), 1.0)

    def test_single_cell_matches_manual_pipeline(self):
        """Test one cell equals composing the scenario runs by hand"""
        base = short_base()
        grid = vulnerability_grid(base, exchange_rates=(0.08,), depth_offsets=(0.9,), warming_levels=(1.5,))
        reference = run_scenario(base, ScenarioSpec(exchange_rate=0.08, depth_offset=0.9))
        warmed = run_scenario(base, ScenarioSpec(exchange_rate=0.08, depth_offset=0.9, warm_season_offset=1.5))
        self.assertEqual(grid.values[0, 0, 0], vulnerability_index(reference, warmed))

    def test_failed_cells(self):
        """Test a failing run marks its cells without aborting the grid"""
        grid = vulnerability_grid(short_base(), exchange_rates=(0.05,), depth_offsets=(0.0, -6.0),
                                  warming_levels=(1.0,))
        self.assertEqual(grid.status[0, 0, 0], 'ok')
        self.assertEqual(grid.status[0, 1, 0], 'failed')
        self.assertTrue(math.isnan(grid.values[0, 1, 0]))
        self.assertIsNone(grid.to_dict()['matrices'][0][1][0])

    def test_undefined_without_toxin(self):
        """Test a toxin-free lake gives undefined cells"""
        params = ModelParams()
        state = default_initial_state(params).with_values(cyano=0.0, mclr=0.0)
        grid = vulnerability_grid(short_base(state), exchange_rates=(0.05,), depth_offsets=(0.0,),
                                  warming_levels=(1.0,))
        self.assertEqual(grid.status[0, 0, 0], 'undefined')

    def test_invalid_arguments(self):
        """Test empty axes and unknown options are rejected"""
        with self.assertRaises(ParameterValidationError):
            vulnerability_grid(short_base(), exchange_rates=())
        with self.assertRaises(ParameterValidationError):
            vulnerability_grid(short_base(), metric='median')
        with self.assertRaises(ParameterValidationError):
            vulnerability_grid(short_base(), warming_mode='winter')


class TestSweep(unittest.TestCase):
    """Test cases for scenario sweeps"""

    def test_builders(self):
        """Test sweep builders label their scenarios"""
        specs = temperature_sweep([0, 1.5])
        self.assertEqual([s.label for s in specs], ['dT=+0', 'dT=+1.5'])
        self.assertIsNone(specs[0].warm_season_offset)
        self.assertEqual(specs[1].warm_season_offset, 1.5)
        self.assertEqual([s.label for s in phosphorus_sweep([0.05, 0.2])], ['P0=0.05', 'P0=0.2'])

    def test_order_and_failures(self):
        """Test results keep input order and failures are reported per scenario"""
        specs = [ScenarioSpec(label='base'), ScenarioSpec(label='shallow', depth_offset=-6.0),
                 ScenarioSpec(label='warm', warm_season_offset=2.0)]
        items = sweep(short_base(), specs)
        self.assertEqual([item.spec.label for item in items], ['base', 'shallow', 'warm'])
        self.assertTrue(items[0].ok)
        self.assertFalse(items[1].ok)
        self.assertIsNone(items[1].trajectory)
        self.assertIn('non-positive', items[1].error)
        self.assertIsNotNone(items[2].metrics)

    def test_empty(self):
        """Test an empty sweep returns no items"""
        self.assertEqual(sweep(short_base(), []), [])

    def test_duplicate_labels(self):
        """Test duplicated labels are rejected"""
        with self.assertRaises(ParameterValidationError):
            sweep(short_base(), [ScenarioSpec(label='a'), ScenarioSpec(label='a', p_in=0.1)])

    def test_fingerprint(self):
        """Test equal base cases hash equally"""
        self.assertEqual(short_base().fingerprint(), short_base().fingerprint())


if __name__ == '__main__':
    unittest.main()
