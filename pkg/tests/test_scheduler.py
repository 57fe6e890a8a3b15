#!/usr/bin/env python

"""Tests for `scheduler` module."""

import os
import unittest
import numpy as np
from hypothesis import given, settings, strategies as st
from skytwin.scheduler import *


class TestScheduler(unittest.TestCase):
    """Tests for `scheduler` module."""

    def setUp(self):
        """Set up test fixtures, if any."""
        self.start = (0.0, 0.0, 100.0)
        self.params = AnnealParams.from_config()

    def tearDown(self):
        """Tear down test fixtures, if any."""

    def test_params_validation(self):
        with self.assertRaises(ValueError):
            AnnealParams(cooling_Cr=1.0)
        with self.assertRaises(ValueError):
            AnnealParams(T0=0.0)
        self.assertEqual(AnnealParams.from_config({"max_iter": 10}).max_iter, 10)

    def test_tour_length(self):
        users = [(3.0, 4.0, 0.0), (3.0, 0.0, 0.0)]
        self.assertAlmostEqual(tour_length(self.start, [0, 1], users), 9.0)
        self.assertAlmostEqual(tour_length(self.start, [1, 0], users), 7.0)
        with self.assertRaises(IndexError):
            tour_length(self.start, [0, 0], users)
        self.assertEqual(tour_length(self.start, [], np.zeros((0, 3))), 0.0)

    def test_greedy_init(self):
        users = [(10.0, 0.0, 0.0), (0.0, 10.0, 0.0), (30.0, 0.0, 0.0)]
        order, length = greedy_init(self.start, users)
        self.assertEqual(order[0], 0)
        self.assertEqual(order, [0, 1, 2])
        self.assertAlmostEqual(length, tour_length(self.start, order, users))
        with self.assertRaises(ValueError):
            greedy_init(self.start, np.zeros((0, 3)))

    def test_operator_probabilities(self):
        probs = operator_probabilities(0.0, self.params)
        np.testing.assert_allclose(probs, [0.5, 1.0 / 3.0, 1.0 / 6.0])
        hot = operator_probabilities(2000.0, self.params)
        self.assertTrue(np.all(np.isfinite(hot)))
        self.assertAlmostEqual(hot.sum(), 1.0)
        self.assertGreater(hot[2], 0.99)
        with self.assertRaises(ValueError):
            operator_probabilities(-1.0, self.params)

    def test_neighbourhood_operators(self):
        order = [0, 1, 2, 3, 4]
        self.assertEqual(swap(order, 1, 3), [0, 3, 2, 1, 4])
        self.assertEqual(insert_move(order, 0, 3), [1, 2, 3, 0, 4])
        self.assertEqual(reverse_subsequence(order, 1, 4), [0, 3, 2, 1, 4])
        self.assertEqual(order, [0, 1, 2, 3, 4])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 12), st.sampled_from(OPERATORS), st.integers(0, 2**31))
    def test_apply_operator_keeps_permutation(self, k, op, seed):
        rng = np.random.default_rng(seed)
        sched = random_schedule(k, rng)
        result = apply_operator(sched, op, rng)
        self.assertEqual(sorted(result), list(range(k)))
        if k >= 2 and op != INSERT:
            self.assertNotEqual(result, sched)

    def test_anneal_not_worse_than_greedy(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            users = rng.uniform(0.0, 1000.0, size=(8, 3))
            users[:, 2] = 0.0
            _, greedy_length = greedy_init(self.start, users)
            result = anneal(self.start, users, self.params, np.random.default_rng(2), return_result=True)
            self.assertLessEqual(result.length, greedy_length + 1e-9)
            self.assertEqual(len(result.trace), self.params.max_iter)
            self.assertTrue(np.all(np.diff(result.trace) <= 0))

    def test_anneal_near_optimal(self):
        rng = np.random.default_rng(7)
        hits = 0
        for run in range(50):
            users = rng.uniform(0.0, 1000.0, size=(7, 3))
            users[:, 2] = 0.0
            order = anneal(self.start, users, self.params, np.random.default_rng(run))
            _, optimum = exhaustive_optimum(self.start, users)
            hits += tour_length(self.start, order, users) <= 1.02 * optimum
        self.assertGreaterEqual(hits, 45)

    @unittest.skipUnless(os.environ.get("SKYTWIN_SLOW_TESTS"), "set SKYTWIN_SLOW_TESTS=1 to run")
    def test_anneal_beats_classical_on_ten_users(self):
        rng = np.random.default_rng(11)
        wins, runs = 0, 50
        for run in range(runs):
            users = rng.uniform(0.0, 1000.0, size=(10, 3))
            users[:, 2] = 0.0
            proposed = anneal(self.start, users, self.params, np.random.default_rng(run), return_result=True)
            classical = classical_anneal(self.start, users, self.params, np.random.default_rng(run))
            self.assertEqual(len(proposed.trace), len(classical.trace))
            wins += proposed.length <= classical.length + 1e-9
        self.assertGreaterEqual(wins, 0.9 * runs)

    def test_anneal_deterministic(self):
        users = np.random.default_rng(3).uniform(0.0, 500.0, size=(6, 3))
        a = anneal(self.start, users, self.params, np.random.default_rng(4))
        b = anneal(self.start, users, self.params, np.random.default_rng(4))
        self.assertEqual(a, b)

    def test_classical_anneal(self):
        users = np.random.default_rng(5).uniform(0.0, 500.0, size=(6, 3))
        result = classical_anneal(self.start, users, AnnealParams(max_iter=200), np.random.default_rng(0))
        self.assertEqual(sorted(result.order), list(range(6)))
        self.assertEqual(len(result.trace), 200)
        self.assertAlmostEqual(result.length, tour_length(self.start, result.order, users))

    def test_exhaustive_limit(self):
        with self.assertRaises(ValueError):
            exhaustive_optimum(self.start, np.zeros((9, 3)))


if __name__ == "__main__":
    unittest.main()
