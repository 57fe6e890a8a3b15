#!/usr/bin/env python

"""Tests for `experiments` module."""

import filecmp
import os
import shutil
import tempfile
import unittest
import pandas as pd
from skytwin.common import config_hash, csv_to_df, json_to_dict, read_csv_comments
from skytwin.config import load_config, with_updates
from skytwin.agent import load_agent
from skytwin.experiments import *
from skytwin.twin import CellState
from skytwin.world import load_environment


def _tiny_config():
    return load_config(
        preset="desk",
        overrides={
            "agent": {"batch_size": 4, "buffer_capacity": 50, "max_episodes": 2},
            "timing": {"max_slots": 5},
            "eval": {"n_episodes": 2},
            "anneal": {"max_iter": 200},
            "sweep": {"values": [1.0e6, 2.0e6], "seeds": 1, "variants": ["td3-dt", "ddpg-nodt"]},
        },
    )


class TestExperiments(unittest.TestCase):
    """Tests for `experiments` module."""

    def setUp(self):
        """Set up test fixtures, if any."""
        self.tmp_dir = tempfile.mkdtemp()
        self.cfg = _tiny_config()

    def tearDown(self):
        """Tear down test fixtures, if any."""
        shutil.rmtree(self.tmp_dir, ignore_errors=True)

    def test_gen_env(self):
        path = run_gen_env(self.cfg, os.path.join(self.tmp_dir, "env"))
        env = load_environment(path)
        self.assertEqual(len(env.users), 3)
        self.assertEqual(len(env.buildings), 2)

    def test_train_artifacts_are_reproducible(self):
        first = run_train(self.cfg, os.path.join(self.tmp_dir, "a"))
        second = run_train(self.cfg, os.path.join(self.tmp_dir, "b"))
        for key in ("config", "checkpoint", "log", "timing", "plot"):
            self.assertTrue(os.path.exists(first[key]))
        log = csv_to_df(first["log"])
        self.assertEqual(len(log), 2)
        comments = read_csv_comments(first["log"])
        self.assertEqual(comments["config_hash"], config_hash(self.cfg))
        self.assertEqual(comments["variant"], "td3-dt")
        self.assertTrue(filecmp.cmp(first["log"], second["log"], shallow=False))
        self.assertTrue(filecmp.cmp(first["plot"], second["plot"], shallow=False))
        self.assertTrue(filecmp.cmp(first["config"], second["config"], shallow=False))
        self.assertEqual(load_agent(first["checkpoint"], self.cfg).episodes_done, 2)

    def test_snapshots_every_stride(self):
        cfg = with_updates(self.cfg, {"output": {"snapshot_stride": 1}})
        out_dir = os.path.join(self.tmp_dir, "train")
        run_train(cfg, out_dir)
        snapshots = sorted(name for name in os.listdir(out_dir) if name.startswith("ve_"))
        self.assertEqual(snapshots, ["ve_000.json", "ve_001.json"])
        doc = json_to_dict(os.path.join(out_dir, "ve_001.json"))
        self.assertEqual((doc["m"], doc["n"]), (20, 20))
        self.assertTrue(any(int(CellState.FREE_OBSERVED) in row for row in doc["state"]))

        eval_dir = os.path.join(self.tmp_dir, "eval")
        run_eval(cfg, policy="random", out_dir=eval_dir)
        snapshots = sorted(name for name in os.listdir(eval_dir) if name.startswith("ve_"))
        self.assertEqual(snapshots, ["ve_000.json", "ve_001.json"])
        run_train(self.cfg, os.path.join(self.tmp_dir, "quiet"))
        self.assertFalse(any(name.startswith("ve_") for name in os.listdir(os.path.join(self.tmp_dir, "quiet"))))

    def test_train_resume(self):
        out_dir = os.path.join(self.tmp_dir, "run")
        paths = run_train(self.cfg, out_dir)
        resumed = run_train(self.cfg, out_dir, episodes=1, checkpoint=paths["checkpoint"])
        log = csv_to_df(resumed["log"])
        self.assertEqual(log["episode"].tolist(), [0, 1, 2])
        self.assertEqual(len(csv_to_df(resumed["timing"])), 3)
        self.assertEqual(load_agent(resumed["checkpoint"], self.cfg).episodes_done, 3)
        with self.assertRaises(FileNotFoundError):
            run_train(self.cfg, out_dir, checkpoint=os.path.join(self.tmp_dir, "missing.ckpt"))

    def test_eval_single_episode(self):
        summary, table = run_eval(self.cfg, n_episodes=1)
        self.assertEqual(len(table), 1)
        self.assertEqual(summary["mission_time_std"], 0.0)
        self.assertEqual(summary["n_episodes"], 1)
        self.assertEqual(summary["policy"], "actor")
        self.assertLessEqual(summary["mission_time_mean"], 5 * 1.2 + 1e-9)

    def test_eval_random_policy_with_trajectories(self):
        cfg = with_updates(self.cfg, {"eval": {"save_trajectories": True}})
        out_dir = os.path.join(self.tmp_dir, "eval")
        summary, table = run_eval(cfg, policy="random", out_dir=out_dir)
        self.assertEqual(len(table), 2)
        self.assertEqual(summary["policy"], "random")
        self.assertEqual(summary["collisions_total"], int(table["collisions"].sum()))
        self.assertTrue((table["served_fraction"].between(0.0, 1.0)).all())
        self.assertEqual(len(csv_to_df(os.path.join(out_dir, "eval.csv"))), 2)
        self.assertTrue(os.path.exists(os.path.join(out_dir, "eval_summary.csv")))
        files = sorted(os.listdir(os.path.join(out_dir, "trajectories")))
        self.assertEqual(files, ["episode_000.geojson", "episode_001.geojson"])

    def test_eval_errors(self):
        with self.assertRaises(ValueError):
            run_eval(self.cfg, policy="greedy")
        with self.assertRaises(ValueError):
            run_eval(self.cfg, n_episodes=0)
        with self.assertRaises(FileNotFoundError):
            run_eval(self.cfg, checkpoint=os.path.join(self.tmp_dir, "missing.ckpt"))

    def test_sweep_point_config(self):
        cfg = sweep_point_config(self.cfg, "gu_count", 5.0, 17, "ddpg-nodt")
        self.assertEqual(cfg.world.n_users, 5)
        self.assertIsInstance(cfg.world.n_users, int)
        self.assertEqual(cfg.seed, 17)
        self.assertEqual((cfg.mode.algorithm, cfg.mode.dt_enabled), ("ddpg", False))
        cfg = sweep_point_config(self.cfg, "obstacle_ratio", 0.05, 1, "td3-dt")
        self.assertEqual(cfg.world.obstacle_ratio, 0.05)
        with self.assertRaises(ValueError):
            sweep_point_config(self.cfg, "altitude", 1.0, 1, "td3-dt")

    def test_sweep(self):
        out_dir = os.path.join(self.tmp_dir, "sweep")
        df = run_sweep(self.cfg, out_dir)
        self.assertEqual(len(df), 4)
        self.assertEqual(list(df.columns), SWEEP_COLUMNS)
        self.assertEqual(sorted(df["variant"].unique()), ["ddpg-nodt", "td3-dt"])
        # Common random numbers: both variants fly the same layout at each point.
        by_value = df.groupby("value")["obstacle_ratio"].nunique()
        self.assertTrue((by_value == 1).all())
        for name in ("sweep_data_volume.csv", "sweep_data_volume_summary.csv", "sweep_data_volume.svg"):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)))
        self.assertEqual(read_csv_comments(os.path.join(out_dir, "sweep_data_volume.csv"))["axis"], "data_volume")

    def test_sweep_needs_checkpoints(self):
        cfg = with_updates(self.cfg, {"sweep": {"train_in_place": False}})
        with self.assertRaises(ValueError):
            run_sweep(cfg)

    def test_sweep_summary(self):
        df = pd.DataFrame(
            {
                "variant": ["a", "a", "a", "b", "b"],
                "value": [1.0, 1.0, 2.0, 1.0, 2.0],
                "mission_time": [10.0, 20.0, 30.0, 40.0, 35.0],
            }
        )
        summary = sweep_summary(df)
        a = summary[summary["variant"] == "a"]
        self.assertEqual(a["mission_time_mean"].tolist(), [15.0, 30.0])
        self.assertEqual(a["mission_time_std"].iloc[1], 0.0)
        self.assertTrue(a["monotonic"].all())
        self.assertFalse(summary[summary["variant"] == "b"]["monotonic"].any())

    def test_schedule(self):
        out_dir = os.path.join(self.tmp_dir, "schedule")
        summary, traces = run_schedule(self.cfg, out_dir)
        self.assertEqual(summary["method"].tolist(), ["greedy", "random", "classical", "proposed", "exhaustive"])
        lengths = dict(zip(summary["method"], summary["length"]))
        self.assertLessEqual(lengths["exhaustive"], lengths["proposed"] + 1e-9)
        self.assertLessEqual(lengths["proposed"], lengths["greedy"] + 1e-9)
        self.assertEqual(traces.groupby("method").size().tolist(), [200, 200, 200])
        for name in ("schedule.csv", "schedule_trace.csv", "schedule.svg"):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)))


@unittest.skipUnless(os.environ.get("SKYTWIN_SLOW_TESTS"), "set SKYTWIN_SLOW_TESTS=1 to run")
class TestDeskAcceptance(unittest.TestCase):
    """Directional desk-scale results; each variant trains for the full ``agent.max_episodes``."""

    @classmethod
    def setUpClass(cls):
        cls.tmp_dir = tempfile.mkdtemp()
        cls.cfgs = {variant: load_config(preset="desk", variant=variant) for variant in ("td3-dt", "ddpg-nodt")}
        cls.runs = {variant: run_train(cfg, os.path.join(cls.tmp_dir, variant)) for variant, cfg in cls.cfgs.items()}

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp_dir, ignore_errors=True)

    def test_twin_gate_prevents_collisions(self):
        log = csv_to_df(self.runs["td3-dt"]["log"])
        self.assertEqual(len(log), self.cfgs["td3-dt"].agent.max_episodes)
        self.assertEqual(int(log["collisions"].sum()), 0)

    def test_trained_agent_beats_baselines(self):
        summaries = {
            variant: run_eval(cfg, checkpoint=self.runs[variant]["checkpoint"], n_episodes=10)[0]
            for variant, cfg in self.cfgs.items()
        }
        random_policy, _ = run_eval(self.cfgs["td3-dt"], policy="random", n_episodes=10)
        td3, ddpg = summaries["td3-dt"], summaries["ddpg-nodt"]
        self.assertGreaterEqual(td3["completed"], 8)
        self.assertEqual(td3["collisions_total"], 0)
        self.assertLessEqual(td3["mission_time_mean"], 0.7 * random_policy["mission_time_mean"])
        self.assertLessEqual(td3["mission_time_mean"], ddpg["mission_time_mean"])
        self.assertGreater(td3["reward_mean"], random_policy["reward_mean"])
        self.assertGreater(td3["reward_mean"], ddpg["reward_mean"])

    def test_sweeps_are_monotone(self):
        checkpoints = {variant: run["checkpoint"] for variant, run in self.runs.items()}
        for axis, values in (("data_volume", [1.0e6, 2.0e6, 4.0e6]), ("gu_count", [2, 3, 4])):
            sweep = {"axis": axis, "values": values, "seeds": 10, "variants": list(checkpoints)}
            df = run_sweep(with_updates(self.cfgs["td3-dt"], {"sweep": sweep}), checkpoints=checkpoints)
            self.assertEqual(len(df), 2 * 3 * 10)
            self.assertTrue(sweep_summary(df)["monotonic"].all(), axis)


if __name__ == "__main__":
    unittest.main()
