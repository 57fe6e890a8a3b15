#!/usr/bin/env python

"""Tests for `mdp` module."""

import json
import math
import os
import shutil
import tempfile
import unittest
import numpy as np
from hypothesis import given, settings, strategies as st
from skytwin.common import Vec3
from skytwin.config import load_config
from skytwin.mdp import *
from skytwin.twin import FlightAction, VirtualEnv
from skytwin.world import Building, EnvironmentMap, GridSpec, GroundUser, path_collides, sense

HOVER = FlightAction(0.0, 0.0, 0.0)


def _desk(**sections):
    return load_config(preset="desk", overrides=sections or None)


class TestReward(unittest.TestCase):
    """Tests for the reward components."""

    def setUp(self):
        self.weights = RewardWeights(mu_top=3.0)

    def test_components(self):
        ctx = RewardContext(t=3, v=5.0, v_max=40.0, delta_d=25.0, delta_S=0)
        total, parts = compute_reward(ctx, self.weights)
        self.assertEqual(parts["r1"], 0.0)
        self.assertEqual(parts["r2"], -3.0)
        self.assertAlmostEqual(parts["r3"], -0.03)
        self.assertEqual(parts["r4"], 0.0)
        self.assertAlmostEqual(parts["r5"], 75.0)
        self.assertEqual(parts["r6"], -0.5)
        self.assertEqual(parts["r7"], 0.0)
        self.assertAlmostEqual(total, math.tanh((-3.0 - 0.03 + 75.0 - 0.5) / 2.0))

    def test_distance_bands(self):
        def r5(dd):
            return compute_reward(RewardContext(t=0, v=40.0, v_max=40.0, delta_d=dd), self.weights)[1]["r5"]

        self.assertAlmostEqual(r5(10.0), 10.0)
        self.assertAlmostEqual(r5(-10.0), 10.0)
        self.assertAlmostEqual(r5(-30.0), -90.0)
        self.assertAlmostEqual(r5(30.0), 90.0)
        ctx = RewardContext(t=0, v=40.0, v_max=40.0, delta_d=None)
        self.assertEqual(compute_reward(ctx, self.weights)[1]["r5"], 0.0)

    def test_safety_service_and_completion(self):
        ctx = RewardContext(t=4, v=0.0, v_max=40.0, vetoed=True, serving=True, rate_bps=2.0e6, delta_S=3)
        _, parts = compute_reward(ctx, self.weights)
        self.assertEqual(parts["r1"], -100.0)
        self.assertAlmostEqual(parts["r4"], 5.0)
        self.assertAlmostEqual(parts["r6"], 1.5)
        ctx = RewardContext(t=7, v=40.0, v_max=40.0, completed=True, t_f=7)
        total, parts = compute_reward(ctx, self.weights)
        self.assertEqual(parts["r7"], 493.0)
        self.assertGreater(total, 492.0)
        ctx = RewardContext(t=8, v=40.0, v_max=40.0, completed=True, t_f=7)
        self.assertEqual(compute_reward(ctx, self.weights)[1]["r7"], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=-30.0, max_value=30.0))
    def test_shaping_bounded_and_odd(self, r):
        self.assertEqual(shaped_reward(0.0), 0.0)
        self.assertLess(abs(shaped_reward(r)), 1.0)
        self.assertAlmostEqual(shaped_reward(-r), -shaped_reward(r))
        self.assertAlmostEqual(shaped_reward(r), 2.0 / (1.0 + math.exp(-r)) - 1.0)

    def test_weights_validation(self):
        with self.assertRaises(ValueError):
            RewardWeights(w51=1.0, w52=2.0)
        with self.assertRaises(ValueError):
            RewardWeights(J_vr=0.0)


class TestState(unittest.TestCase):
    """Tests for the state matrices and target selection."""

    def setUp(self):
        self.grid = GridSpec(100.0, 10, 10)
        self.weights = RewardWeights(mu_top=1.0)

    def test_priorities(self):
        np.testing.assert_array_equal(priorities([2, 0, 1]), [2.0, 1.0, 3.0])

    def test_build_s1(self):
        users = [(55.0, 55.0, 0.0)]
        uav = (5.0, 5.0, 10.0)
        s1 = build_s1(users, [0], [False], uav, self.grid, self.weights, math.pi / 4, 50.0, normalize=False)
        self.assertEqual(s1.shape, (10, 10))
        self.assertAlmostEqual(s1[5, 5], -50.0)
        self.assertEqual(s1[0, 9], 0.0)
        self.assertAlmostEqual(s1[0, 0], 10.0)
        scaled = build_s1(users, [0], [False], uav, self.grid, self.weights, math.pi / 4, 50.0)
        self.assertAlmostEqual(scaled[5, 5], -1.0)
        self.assertAlmostEqual(scaled[0, 0], 0.2)
        served = build_s1(users, [0], [True], uav, self.grid, self.weights, math.pi / 4, 50.0, normalize=False)
        self.assertEqual(served[5, 5], 0.0)

    def test_build_s2(self):
        env = EnvironmentMap(
            side_xy=100.0,
            max_alt=50.0,
            buildings=(Building(40.0, 60.0, 40.0, 60.0, 30.0),),
            users=(),
            bs_position=Vec3(0.0, 0.0, 30.0),
        )
        beta_sen = math.pi / 6
        ve = VirtualEnv.empty(self.grid, 50.0).update(sense(env, (50.0, 50.0, 40.0), beta_sen, self.grid), (50.0, 50.0, 40.0), beta_sen)
        s2 = build_s2(ve, (95.0, 95.0, 20.0), self.grid, beta_sen, 50.0, normalize=False)
        self.assertEqual(s2[4, 4], 30.0)
        self.assertEqual(s2[9, 9], 20.0)
        self.assertEqual(s2[0, 0], 0.0)
        scaled = build_s2(ve, (95.0, 95.0, 20.0), self.grid, beta_sen, 50.0)
        self.assertAlmostEqual(scaled[4, 4], 0.6)

    def test_select_service_target(self):
        users = [(0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (20.0, 0.0, 0.0)]
        uav = (10.0, 0.0, 10.0)
        self.assertEqual(select_service_target([0, 1, 2], users, [False] * 3, uav, 15.0), 0)
        self.assertEqual(select_service_target([0, 1, 2], users, [True, False, False], uav, 15.0), 1)
        self.assertIsNone(select_service_target([0, 1, 2], users, [False] * 3, uav, 5.0))
        self.assertIsNone(select_service_target([0, 1, 2], users, [True] * 3, uav, 50.0))

    def test_select_nearest_with_los_tiebreak(self):
        users = [(100.0, 0.0, 0.0), (0.0, 0.0, 0.0), (20.0, 0.0, 0.0)]
        uav = (10.0, 0.0, 10.0)
        self.assertEqual(select_service_target([0, 1, 2], users, [False] * 3, uav, 20.0), 1)
        los = lambda k: 1 if k == 2 else 0  # noqa: E731
        self.assertEqual(select_service_target([0, 1, 2], users, [False] * 3, uav, 20.0, los=los), 2)

    def test_clip_action(self):
        a = clip_action((50.0, -1.0, 7.0), 40.0)
        self.assertEqual(a, FlightAction(40.0, 0.0, 2.0 * math.pi))


class TestSimulation(unittest.TestCase):
    """Tests for the slot loop."""

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp_dir, ignore_errors=True)

    def _single_user_env(self, demand=1.0):
        return EnvironmentMap(
            side_xy=200.0,
            max_alt=60.0,
            buildings=(Building(100.0, 140.0, 100.0, 140.0, 40.0),),
            users=(GroundUser(0, Vec3(10.0, 10.0, 0.0), demand),),
            bs_position=Vec3(0.0, 0.0, 30.0),
        )

    def test_step_before_reset(self):
        with self.assertRaises(RuntimeError):
            Simulation(_desk()).step(HOVER)

    def test_reset(self):
        sim = Simulation(_desk())
        state = sim.reset(seed=3)
        self.assertEqual(state.s1.shape, (20, 20))
        self.assertEqual(state.stack().shape, (2, 20, 20))
        self.assertEqual(sorted(sim.schedule), [0, 1, 2])
        self.assertEqual(sim.log.t_k, [None, None, None])
        self.assertGreater(sim.log.coverage_cells, 0)
        with self.assertRaises(ValueError):
            sim.reset(mode="fly")

    def test_training_layouts(self):
        sim = Simulation(_desk())
        sim.reset(seed=1, mode=TRAIN)
        layout_1 = sim.env
        sim.reset(seed=2, mode=TRAIN)
        self.assertNotEqual(layout_1, sim.env)
        sim.reset(seed=2, mode=TRAIN, dt_enabled=False)
        self.assertEqual(sim.env, sim.deploy_map)
        sim.reset(seed=5, mode=DEPLOY)
        self.assertEqual(sim.env, sim.deploy_map)

    def test_single_slot_completion(self):
        sim = Simulation(_desk())
        sim.reset(env_map=self._single_user_env())
        state, reward, done, info = sim.step(HOVER)
        self.assertTrue(done)
        self.assertEqual(info["target"], 0)
        self.assertEqual(sim.log.t_f, 1)
        self.assertEqual(sim.log.t_k, [1])
        self.assertAlmostEqual(sim.log.mission_time, 1.2)
        self.assertAlmostEqual(sim.log.objective, 1.2)
        self.assertGreater(reward, 498.0)
        self.assertEqual(info["components"]["r7"], 499.0)
        with self.assertRaises(RuntimeError):
            sim.step(HOVER)

    def test_user_states(self):
        sim = Simulation(_desk())
        sim.reset(env_map=self._single_user_env(demand=1.0e12))
        (before,) = sim.user_states()
        self.assertEqual(before.delivered_bits, 0.0)
        self.assertIsNone(before.first_served_slot)
        sim.step(HOVER)
        (during,) = sim.user_states()
        self.assertGreater(during.delivered_bits, 0.0)
        self.assertFalse(during.served)
        self.assertEqual(sim.env.users[0].delivered_bits, 0.0)
        sim.reset(env_map=self._single_user_env())
        sim.step(HOVER)
        (after,) = sim.user_states()
        self.assertTrue(after.served)
        self.assertEqual(after.first_served_slot, 1)
        self.assertEqual(after.position, sim.env.users[0].position)

    def test_zero_demand_served_immediately(self):
        env = EnvironmentMap(
            side_xy=200.0,
            max_alt=60.0,
            buildings=(),
            users=(
                GroundUser(0, Vec3(190.0, 190.0, 0.0), 0.0),
                GroundUser(1, Vec3(180.0, 190.0, 0.0), 1.0e12),
            ),
            bs_position=Vec3(0.0, 0.0, 30.0),
        )
        sim = Simulation(_desk())
        sim.reset(env_map=env)
        sim.step(HOVER)
        self.assertEqual(sim.log.t_k, [1, None])
        self.assertIsNone(sim.log.t_f)
        self.assertIsNone(sim.log.objective)

    def test_slot_limit(self):
        sim = Simulation(_desk(timing={"max_slots": 5}, world={"demand_bits": 1.0e12}))
        sim.reset(seed=0)
        done = False
        for _ in range(5):
            self.assertFalse(done)
            _, _, done, info = sim.step(HOVER)
            self.assertFalse(info["vetoed"])
        self.assertTrue(done)
        self.assertIsNone(sim.log.t_f)
        self.assertEqual(sim.log.slots, 5)
        self.assertIsNone(sim.log.mission_time)

    def test_hover_keeps_position(self):
        sim = Simulation(_desk())
        sim.reset()
        _, reward, _, info = sim.step(HOVER)
        self.assertEqual(sim.position, sim.start)
        self.assertEqual(info["components"]["r2"], -3.0)
        self.assertLess(abs(reward), 1.0 + 1e-12)

    def test_out_of_bounds_is_vetoed(self):
        sim = Simulation(_desk())
        sim.reset()
        # Straight down from 30 m drops below min_alt = 20 m.
        _, _, _, info = sim.step(FlightAction(10.0, math.pi, 0.0))
        self.assertTrue(info["vetoed"])
        self.assertEqual(info["reason"], "out_of_bounds")
        self.assertEqual(info["components"]["r1"], -100.0)
        self.assertEqual(sim.position, sim.start)
        self.assertEqual(sim.log.vetoes, 1)

    def test_random_flight_never_crosses_buildings(self):
        cfg = _desk(timing={"max_slots": 80}, world={"demand_bits": 1.0e12})
        sim = Simulation(cfg)
        sim.reset(seed=4)
        rng = np.random.default_rng(7)
        done = False
        while not done:
            a = FlightAction(rng.uniform(0, 10.0), rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
            _, _, done, _ = sim.step(a)
        path = sim.log.positions()
        for p0, p1 in zip(path[:-1], path[1:]):
            self.assertFalse(path_collides(sim.env, p0, p1))
            self.assertTrue(sim.bounds.contains(p1))
        self.assertEqual(sim.log.collisions, sum(r.collided for r in sim.log.records))
        self.assertEqual(sim.log.vetoes, sum(r.vetoed for r in sim.log.records))

    def test_deterministic(self):
        def run():
            sim = Simulation(_desk(timing={"max_slots": 20}))
            sim.reset(seed=9, mode=TRAIN)
            rewards = []
            for t in range(20):
                _, r, done, _ = sim.step(FlightAction(8.0, math.pi / 2, 0.3 * t))
                rewards.append(r)
                if done:
                    break
            return rewards, sim.log.positions()

        r1, p1 = run()
        r2, p2 = run()
        self.assertEqual(r1, r2)
        np.testing.assert_array_equal(p1, p2)

    def test_exports(self):
        sim = Simulation(_desk(timing={"max_slots": 3}, world={"demand_bits": 1.0e12}))
        sim.reset()
        for _ in range(3):
            sim.step(FlightAction(10.0, math.pi / 2, math.pi / 4))
        df = sim.log.to_dataframe()
        self.assertEqual(len(df), 3)
        self.assertEqual(list(df.columns)[:4], ["t", "x", "y", "z"])
        self.assertEqual(sim.log.positions().shape, (4, 3))

        doc = sim.log.to_geojson(sim.env)
        path = [f for f in doc["features"] if f["properties"]["kind"] == "path"][0]
        self.assertEqual(len(path["geometry"]["coordinates"]), 4)
        orders = sorted(f["properties"]["order"] for f in doc["features"] if f["properties"]["kind"] == "user")
        self.assertEqual(orders, [1, 2, 3])
        self.assertEqual(doc["side_xy"], 200.0)

        out = sim.log.save_trajectory(os.path.join(self.tmp_dir, "traj", "episode.geojson"), sim.env)
        with open(out) as f:
            self.assertEqual(json.load(f)["type"], "FeatureCollection")


if __name__ == "__main__":
    unittest.main()
