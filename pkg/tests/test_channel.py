#!/usr/bin/env python

"""Tests for `channel` module."""

import unittest
import numpy as np
from skytwin.channel import *


class TestChannel(unittest.TestCase):
    """Tests for `channel` module."""

    def setUp(self):
        """Set up test fixtures, if any."""
        self.params = ChannelParams.from_config()
        self.rng = np.random.default_rng(0)

    def tearDown(self):
        """Tear down test fixtures, if any."""

    def test_from_config(self):
        self.assertAlmostEqual(self.params.p_b, 10.0)
        self.assertAlmostEqual(self.params.p_u, 0.01)
        self.assertAlmostEqual(self.params.noise_N0, 10.0**-10.5, delta=1e-20)
        with self.assertRaises(ValueError):
            ChannelParams.from_config({"gamma_nlos_db": 0.0})

    def test_free_space_path_loss(self):
        self.assertAlmostEqual(free_space_path_loss_db(100.0, 2.0e9), 78.462, delta=1e-3)
        self.assertAlmostEqual(
            free_space_path_loss_db(200.0, 2.0e9) - free_space_path_loss_db(100.0, 2.0e9),
            20.0 * np.log10(2.0),
        )
        with self.assertRaises(ValueError):
            free_space_path_loss_db(0.0, 2.0e9)

    def test_los_nlos_gap(self):
        los = large_scale_fading_db(150.0, 2.0e9, 1, self.params)
        nlos = large_scale_fading_db(150.0, 2.0e9, 0, self.params)
        self.assertAlmostEqual(nlos - los, 20.9)

    def test_small_scale_calibration(self):
        for los in (1, 0):
            gains = sample_small_scale(los, self.params, self.rng, size=1_000_000)
            self.assertTrue(0.99 <= gains.mean() <= 1.01)
            self.assertTrue(np.all(gains >= 0))

    def test_rician_fluctuates_less(self):
        rician = sample_small_scale(1, self.params, self.rng, size=100_000)
        rayleigh = sample_small_scale(0, self.params, self.rng, size=100_000)
        self.assertLess(rician.var(), rayleigh.var())

    def test_frozen_fading(self):
        frozen = ChannelParams.from_config({"freeze_fading": True})
        self.assertEqual(sample_small_scale(1, frozen, None), 1.0)
        link = build_link(100.0, 0, frozen.p_u, frozen)
        self.assertEqual(link.ssf_mag2, 1.0)

    def test_link_rate(self):
        gain = self.params.noise_N0 / self.params.p_u
        self.assertAlmostEqual(link_rate(self.params.p_u, gain, self.params), 1.0e7)
        self.assertEqual(link_rate(self.params.p_u, 0.0, self.params), 0.0)
        with self.assertRaises(ValueError):
            link_rate(1.0, -1.0, self.params)

    def test_effective_rate_and_slot_data(self):
        self.assertEqual(effective_rate(3.0e7, 2.0e7), 2.0e7)
        self.assertEqual(slot_data(2.0e7, 0.5), 1.0e7)
        with self.assertRaises(ValueError):
            effective_rate(-1.0, 1.0)
        with self.assertRaises(ValueError):
            slot_data(-1.0, 0.5)

    def test_build_link(self):
        link = build_link(100.0, 1, self.params.p_u, self.params, ssf_mag2=1.0)
        self.assertAlmostEqual(link.lsf_db, 78.562, delta=1e-3)
        self.assertAlmostEqual(link.gain_h_mag2, 10.0 ** (-link.lsf_db / 10.0))
        self.assertAlmostEqual(link.rate, link_rate(self.params.p_u, link.gain_h_mag2, self.params))
        with self.assertRaises(ValueError):
            build_link(100.0, 1, self.params.p_u, self.params)

    def test_link_budget_table(self):
        table = link_budget_table([10.0, 100.0, 1000.0], self.params)
        self.assertEqual(len(table), 3)
        self.assertTrue((table["rate_uav_gu_los_bps"] > table["rate_uav_gu_nlos_bps"]).all())
        self.assertTrue(np.all(np.diff(table["rate_bs_uav_bps"]) < 0))
        np.testing.assert_allclose(table["lsf_nlos_db"] - table["lsf_los_db"], 20.9)


if __name__ == "__main__":
    unittest.main()
