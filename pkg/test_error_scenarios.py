import json
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

from errors import DivergenceError
from main import CLIInterface


class CLIErrorTestCase(unittest.TestCase):
    """Base class running the CLI against configs in a temporary directory"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()
        self.output_dir = os.path.join(self.test_dir, 'out')
        self.dotenv_patcher = patch('config.load_dotenv')
        self.dotenv_patcher.start()

    def tearDown(self):
        """Clean up test fixtures"""
        self.dotenv_patcher.stop()
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def write(self, name, text):
        path = os.path.join(self.test_dir, name)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        return path

    def write_config(self, **overrides):
        payload = {
            'lake': 'error-lake',
            'forcing': {'constant': {'temperature': 20.0, 'epilimnion_depth': 5.0}},
            'simulation': {'t0': 150, 't1': 156},
        }
        payload.update(overrides)
        return self.write('run.json', json.dumps(payload))

    def run_cli(self, subcommand='simulate', config_path=None, extra=()):
        argv = [subcommand, '--config', config_path or self.write_config(),
                '--out', self.output_dir, '--workers', '1'] + list(extra)
        with patch('builtins.print') as mock_print:
            code = CLIInterface().run(argv)
        printed = ' '.join(str(call) for call in mock_print.call_args_list)
        return code, printed


class TestInputErrorScenarios(CLIErrorTestCase):
    """Configuration and data problems exit with status 1"""

    def test_missing_forcing_file(self):
        """Test a forcing path that does not exist"""
        code, printed = self.run_cli(config_path=self.write_config(forcing='absent.csv'))
        self.assertEqual(code, 1)
        self.assertIn('forcing: file not found', printed)
        self.assertFalse(os.path.exists(self.output_dir))

    def test_malformed_forcing_file(self):
        """Test a forcing file with a bad value names the line"""
        self.write('forcing.csv', "date,temperature_c,epilimnion_m\n"
                                  "2018-05-30,18.0,5.0\n"
                                  "2018-05-31,hot,5.0\n")
        code, printed = self.run_cli(config_path=self.write_config(forcing='forcing.csv'))
        self.assertEqual(code, 1)
        self.assertIn('forcing.csv:3', printed)

    def test_forcing_too_short(self):
        """Test forcing that ends before the simulation window"""
        self.write('forcing.csv', "date,temperature_c,epilimnion_m\n"
                                  "2018-05-30,18.0,5.0\n"
                                  "2018-06-01,18.5,5.0\n")
        code, _ = self.run_cli(config_path=self.write_config(forcing='forcing.csv'))
        self.assertEqual(code, 1)

    def test_unit_mismatch(self):
        """Test a parameter with the wrong unit names its key"""
        code, printed = self.run_cli(config_path=self.write_config(
            parameters={'exchange_rate': {'value': 0.05, 'unit': 'ft/day'}}))
        self.assertEqual(code, 1)
        self.assertIn('parameters.exchange_rate', printed)

    def test_observations_outside_window(self):
        """Test observations after the simulated window"""
        self.write('obs.csv', "date,variable,value,unit\n2018-08-01,oxygen,8.0,mg/L\n")
        config_path = self.write_config(
            observations='obs.csv',
            fit={'bounds': [{'name': 'cyano.mu_max', 'lower': 0.5, 'upper': 1.4}]})
        code, _ = self.run_cli('fit', config_path)
        self.assertEqual(code, 1)

    @patch.dict(os.environ, {'LAKE_WORKERS': 'many'})
    def test_invalid_environment(self):
        """Test a non-integer LAKE_WORKERS"""
        code, printed = self.run_cli()
        self.assertEqual(code, 1)
        self.assertIn('LAKE_WORKERS', printed)


class TestModelErrorScenarios(CLIErrorTestCase):
    """Model, runtime and output failures exit with status 2"""

    @patch('main.simulate')
    def test_divergence(self, mock_simulate):
        """Test a diverging integration"""
        mock_simulate.side_effect = DivergenceError("state became non-finite", time=153.0)
        code, printed = self.run_cli()
        self.assertEqual(code, 2)
        self.assertIn('計算エラー', printed)
        self.assertIn('t=153.0000', printed)

    def test_sobol_failure_budget(self):
        """Test too many failed design rows abort the analysis"""
        config_path = self.write_config(sobol={
            'factors': [{'name': 'q_min', 'lower': 0.001, 'upper': 0.08,
                         'transform': 'value', 'target': 'cyano.q_min'}],
            'n_base': 64, 'output_times': [156], 'bootstrap': 0,
        })
        code, printed = self.run_cli('sobol', config_path)
        self.assertEqual(code, 2)
        self.assertIn('design rows failed', printed)

    def test_output_not_writable(self):
        """Test an output path occupied by a file"""
        self.output_dir = self.write('occupied', 'x')
        code, printed = self.run_cli()
        self.assertEqual(code, 2)
        self.assertIn('failed', printed)

    @patch('main.load_run_config')
    def test_keyboard_interrupt(self, mock_load):
        """Test handling keyboard interrupt"""
        mock_load.side_effect = KeyboardInterrupt()
        code, printed = self.run_cli()
        self.assertEqual(code, 2)
        self.assertIn('処理が中断されました', printed)

    @patch('main.load_run_config')
    def test_unexpected_error(self, mock_load):
        """Test handling an unexpected exception"""
        mock_load.side_effect = KeyError('boom')
        code, printed = self.run_cli()
        self.assertEqual(code, 2)
        self.assertIn('予期しないエラー: KeyError', printed)


class TestPartialFailureScenarios(CLIErrorTestCase):
    """Failures confined to one scenario or cell do not fail the run"""

    def test_failed_scenario_reported(self):
        """Test a failing scenario is recorded and the run succeeds"""
        config_path = self.write_config(scenarios=[
            {'label': 'base'},
            {'label': 'drained', 'depth_offset': -6.0},
        ])
        code, _ = self.run_cli('scenario', config_path)
        self.assertEqual(code, 0)
        with open(os.path.join(self.output_dir, 'sweep_metrics.json'), encoding='utf-8') as f:
            summary = json.load(f)
        self.assertEqual([s['ok'] for s in summary['scenarios']], [True, False])

    def test_failed_grid_cells_marked(self):
        """Test failing grid cells are marked and the grid is still written"""
        config_path = self.write_config(vulnerability={
            'exchange_rates': [0.05], 'depth_offsets': [0.0, -6.0], 'warming_levels': [1.0]})
        code, _ = self.run_cli('vulnerability', config_path)
        self.assertEqual(code, 0)
        with open(os.path.join(self.output_dir, 'vulnerability_grid.json'), encoding='utf-8') as f:
            grid = json.load(f)
        self.assertEqual(grid['status'], [[['ok'], ['failed']]])


if __name__ == '__main__':
    unittest.main()
