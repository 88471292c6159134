import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from data_loader import (
    ForcingSeries,
    ObservationSet,
    check_coverage,
    date_to_day,
    interpolate_forcing,
    load_forcing,
    load_observations,
    unit_factor,
    write_forcing,
    write_observations,
)
from errors import CoverageError, DataParseError, UnitError


class DataFileTestCase(unittest.TestCase):
    """Base class writing CSV fixtures into a temporary directory"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def write(self, name, text):
        path = os.path.join(self.test_dir, name)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        return path


class TestForcingSeries(unittest.TestCase):
    """Test cases for ForcingSeries and interpolation"""

    def setUp(self):
        """Set up test fixtures"""
        self.series = ForcingSeries(
            times=[100.0, 110.0, 120.0],
            temperature=[10.0, 20.0, 16.0],
            epilimnion_depth=[6.0, 5.0, 4.0],
        )

    def test_node_values(self):
        """Test interpolation at a sample returns that sample"""
        fx = interpolate_forcing(self.series, 110.0)
        self.assertEqual(fx.temperature, 20.0)
        self.assertEqual(fx.epilimnion_depth, 5.0)
        self.assertFalse(fx.clamped)
        self.assertIsNone(fx.surface_light)

    def test_linear_between_samples(self):
        """Test interpolation is linear between bracketing samples"""
        fx = self.series.at(105.0)
        self.assertAlmostEqual(fx.temperature, 15.0)
        self.assertAlmostEqual(fx.epilimnion_depth, 5.5)

    def test_clamped_outside(self):
        """Test times outside the series clamp to the end samples with a warning"""
        with self.assertLogs('data_loader', level='WARNING'):
            fx = self.series.at(130.0)
        self.assertTrue(fx.clamped)
        self.assertEqual(fx.temperature, 16.0)
        with self.assertLogs('data_loader', level='WARNING'):
            fx = self.series.at(90.0)
        self.assertEqual(fx.temperature, 10.0)

    def test_covers(self):
        """Test coverage of a simulation window"""
        self.assertTrue(self.series.covers(100.0, 120.0))
        self.assertFalse(self.series.covers(99.0, 120.0))

    def test_invalid_series(self):
        """Test invalid series are rejected"""
        with self.assertRaises(DataParseError):
            ForcingSeries(times=[1.0], temperature=[1.0], epilimnion_depth=[1.0])
        with self.assertRaises(DataParseError):
            ForcingSeries(times=[1.0, 1.0], temperature=[1.0, 2.0], epilimnion_depth=[1.0, 1.0])
        with self.assertRaises(DataParseError):
            ForcingSeries(times=[1.0, 2.0], temperature=[1.0, 2.0], epilimnion_depth=[1.0, 0.0])

    def test_constant(self):
        """Test the constant helper"""
        series = ForcingSeries.constant(0.0, 10.0, 12.0, 3.0, p_in=0.05)
        fx = series.at(4.0)
        self.assertEqual(fx.temperature, 12.0)
        self.assertEqual(fx.p_in, 0.05)


class TestDates(unittest.TestCase):
    """Test cases for calendar conversion"""

    def test_day_index(self):
        """Test dates map onto the 365-day calendar"""
        self.assertEqual(date_to_day(pd.Timestamp('2018-01-01'), 2018), 1.0)
        self.assertEqual(date_to_day(pd.Timestamp('2018-04-01'), 2018), 91.0)
        self.assertEqual(date_to_day(pd.Timestamp('2019-01-01'), 2018), 366.0)

    def test_leap_year(self):
        """Test leap days fall half-way and later dates keep their calendar day"""
        self.assertEqual(date_to_day(pd.Timestamp('2020-02-29'), 2020), 59.5)
        self.assertEqual(date_to_day(pd.Timestamp('2020-03-01'), 2020), 60.0)
        self.assertEqual(date_to_day(pd.Timestamp('2020-12-31'), 2020), 365.0)


class TestLoadForcing(DataFileTestCase):
    """Test cases for load_forcing"""

    def test_valid_file(self):
        """Test a three-line forcing file"""
        path = self.write('forcing.csv',
                          "date,temperature_c,epilimnion_m\n"
                          "2018-06-01,18.5,5.0\n"
                          "2018-06-02,19.0,4.9\n"
                          "2018-06-03,19.5,4.8\n")
        series = load_forcing(path)
        self.assertEqual(len(series.times), 3)
        self.assertEqual(series.times.tolist(), [152.0, 153.0, 154.0])
        self.assertEqual(series.base_year, 2018)
        self.assertEqual(series.temperature.tolist(), [18.5, 19.0, 19.5])

    def test_optional_columns(self):
        """Test light and phosphorus input columns are read"""
        path = self.write('forcing.csv',
                          "date,temperature_c,epilimnion_m,light_umol_m2_s,p_in_mgP_L\n"
                          "2018-06-01,18.5,5.0,400,0.02\n"
                          "2018-06-02,19.0,4.9,420,0.03\n")
        series = load_forcing(path)
        self.assertEqual(series.surface_light.tolist(), [400.0, 420.0])
        self.assertEqual(series.p_in.tolist(), [0.02, 0.03])

    def test_duplicated_date(self):
        """Test a duplicated date names its line"""
        path = self.write('forcing.csv',
                          "date,temperature_c,epilimnion_m\n"
                          "2018-06-01,18.5,5.0\n"
                          "2018-06-01,19.0,4.9\n")
        with self.assertRaises(DataParseError) as context:
            load_forcing(path)
        self.assertEqual(context.exception.line, 3)
        self.assertIn('duplicated', str(context.exception))

    def test_non_increasing_date(self):
        """Test dates going backwards are rejected"""
        path = self.write('forcing.csv',
                          "date,temperature_c,epilimnion_m\n"
                          "2018-06-02,18.5,5.0\n"
                          "2018-06-01,19.0,4.9\n")
        with self.assertRaises(DataParseError) as context:
            load_forcing(path)
        self.assertIn('non-increasing', str(context.exception))

    def test_missing_column(self):
        """Test a missing required column"""
        path = self.write('forcing.csv', "date,temperature_c\n2018-06-01,18.5\n2018-06-02,19.0\n")
        with self.assertRaises(DataParseError) as context:
            load_forcing(path)
        self.assertIn('epilimnion_m', str(context.exception))
        self.assertEqual(context.exception.line, 1)

    def test_unparsable_value(self):
        """Test a bad number names its line"""
        path = self.write('forcing.csv',
                          "date,temperature_c,epilimnion_m\n"
                          "2018-06-01,18.5,5.0\n"
                          "2018-06-02,warm,4.9\n")
        with self.assertRaises(DataParseError) as context:
            load_forcing(path)
        self.assertEqual(context.exception.line, 3)

    def test_unparsable_date(self):
        """Test a bad date names its line"""
        path = self.write('forcing.csv',
                          "date,temperature_c,epilimnion_m\n"
                          "2018-06-01,18.5,5.0\n"
                          "June 2,19.0,4.9\n")
        with self.assertRaises(DataParseError) as context:
            load_forcing(path)
        self.assertEqual(context.exception.line, 3)

    def test_missing_file(self):
        """Test a missing file raises DataParseError"""
        with self.assertRaises(DataParseError):
            load_forcing(os.path.join(self.test_dir, 'absent.csv'))

    def test_write_then_read(self):
        """Test written forcing reads back to the same values"""
        series = ForcingSeries(times=[91.0, 91.5, 92.25], temperature=[8.123456789012345, 8.2, 8.3],
                               epilimnion_depth=[9.3, 9.29, 9.28], p_in=[0.02, 0.021, 0.022])
        path = write_forcing(series, os.path.join(self.test_dir, 'out.csv'))
        restored = load_forcing(path)
        np.testing.assert_array_equal(restored.times, series.times)
        np.testing.assert_array_equal(restored.temperature, series.temperature)
        np.testing.assert_array_equal(restored.p_in, series.p_in)

    def test_write_then_read_random_values(self):
        """Test arbitrary doubles survive a write and read bit for bit"""
        rng = np.random.default_rng(42)
        times = np.cumsum(rng.uniform(0.01, 2.0, 200)) + 90.0
        series = ForcingSeries(times=times, temperature=rng.uniform(0.0, 30.0, 200),
                               epilimnion_depth=rng.uniform(1.0, 12.0, 200),
                               surface_light=rng.uniform(0.0, 2000.0, 200))
        path = write_forcing(series, os.path.join(self.test_dir, 'random.csv'))
        restored = load_forcing(path)
        for name in ('times', 'temperature', 'epilimnion_depth', 'surface_light'):
            self.assertEqual(getattr(restored, name).tobytes(), getattr(series, name).tobytes(), name)


class TestObservations(DataFileTestCase):
    """Test cases for observations and the unit table"""

    def test_unit_aliases(self):
        """Test accepted aliases and conversions"""
        self.assertEqual(unit_factor('mclr', 'ug/L'), 1.0)
        self.assertEqual(unit_factor('mclr', 'ppb'), 1.0)
        self.assertEqual(unit_factor('phosphorus', 'ugP/L'), 1e-3)
        self.assertEqual(unit_factor('burden_walleye', 'mg/mgC'), 1000.0)
        with self.assertRaises(UnitError):
            unit_factor('mclr', 'mol/L')
        with self.assertRaises(UnitError):
            unit_factor('temperature', 'degC')

    def test_load_with_conversion(self):
        """Test values are converted into canonical units"""
        path = self.write('obs.csv',
                          "date,variable,value,unit,weight\n"
                          "2018-07-01,mclr,2.5,ppb,1\n"
                          "2018-07-01,phosphorus,40,ugP/L,2\n"
                          "2018-07-08,oxygen,8.1,mg/L,1\n")
        observations = load_observations(path)
        self.assertEqual(len(observations), 3)
        self.assertEqual(observations.variable_names, ['mclr', 'phosphorus', 'oxygen'])
        self.assertAlmostEqual(observations.values[1], 0.04)
        self.assertEqual(observations.weights.tolist(), [1.0, 2.0, 1.0])
        self.assertEqual(observations.time_range(), (182.0, 189.0))

    def test_unknown_unit(self):
        """Test an unknown unit raises UnitError with the line"""
        path = self.write('obs.csv',
                          "date,variable,value,unit\n"
                          "2018-07-01,mclr,2.5,ug/L\n"
                          "2018-07-02,mclr,2.5,mol/L\n")
        with self.assertRaises(UnitError) as context:
            load_observations(path)
        self.assertEqual(context.exception.line, 3)

    def test_from_records(self):
        """Test building observations in memory"""
        observations = ObservationSet.from_records([(150.0, 'cyano', 0.5), (157.0, 'mclr', 1.0, 2.0)])
        self.assertEqual(observations.mask('mclr').tolist(), [False, True])
        self.assertEqual(observations.weights.tolist(), [1.0, 2.0])
        with self.assertRaises(DataParseError):
            ObservationSet.from_records([(150.0, 'temperature', 20.0)])

    def test_write_then_read(self):
        """Test written observations read back in canonical units"""
        observations = ObservationSet.from_records([(150.0, 'cyano', 0.5), (157.0, 'mclr', 1.25, 2.0)])
        path = write_observations(observations, os.path.join(self.test_dir, 'obs.csv'))
        restored = load_observations(path)
        np.testing.assert_array_equal(restored.times, observations.times)
        np.testing.assert_array_equal(restored.values, observations.values)
        self.assertEqual(restored.variables, observations.variables)

    def test_write_then_read_random_values(self):
        """Test arbitrary observation values and weights survive bit for bit"""
        rng = np.random.default_rng(3)
        records = [(float(t), 'mclr', float(v), float(w))
                   for t, v, w in zip(rng.uniform(120.0, 280.0, 200), rng.lognormal(0.0, 2.0, 200),
                                      rng.uniform(0.1, 5.0, 200))]
        observations = ObservationSet.from_records(records)
        path = write_observations(observations, os.path.join(self.test_dir, 'random_obs.csv'))
        restored = load_observations(path)
        self.assertEqual(restored.times.tobytes(), observations.times.tobytes())
        self.assertEqual(restored.values.tobytes(), observations.values.tobytes())
        self.assertEqual(restored.weights.tobytes(), observations.weights.tobytes())

    def test_base_year_from_forcing(self):
        """Test observation dates count from the forcing's first year"""
        path = self.write('obs.csv',
                          "date,variable,value,unit\n"
                          "2019-01-01,oxygen,11.0,mg/L\n"
                          "2019-07-01,oxygen,8.0,mg/L\n")
        self.assertEqual(load_observations(path).times.tolist(), [1.0, 182.0])
        self.assertEqual(load_observations(path, base_year=2018).times.tolist(), [366.0, 547.0])

    def test_coverage(self):
        """Test observations outside the simulated window raise"""
        observations = ObservationSet.from_records([(150.0, 'cyano', 0.5), (200.0, 'cyano', 0.6)])
        check_coverage(observations, 100.0, 250.0)
        with self.assertRaises(CoverageError):
            check_coverage(observations, 160.0, 250.0)


if __name__ == '__main__':
    unittest.main()
