#!/usr/bin/env python

"""Tests for `neural` module."""

import os
import shutil
import tempfile
import unittest
import numpy as np
from skytwin.neural import *

TINY = NetSpec(branch=(2,), fusion=(2,), fc=(4,), head=(3,), reduction=1)


def _init(net, rng):
    # Non-zero biases keep every ReLU input away from its kink at exactly zero.
    params = net.init_params(rng)
    for key in params:
        if key.endswith(".b"):
            params[key] = rng.uniform(0.05, 0.15, size=params[key].shape)
    return params


class TestNeural(unittest.TestCase):
    """Tests for `neural` module."""

    def setUp(self):
        """Set up test fixtures, if any."""
        self.tmp_dir = tempfile.mkdtemp()
        self.rng = np.random.default_rng(5)
        self.states = self.rng.standard_normal((2, 2, 6, 6))
        self.actions = self.rng.uniform(-1, 1, size=(2, 3))

    def tearDown(self):
        """Tear down test fixtures, if any."""
        shutil.rmtree(self.tmp_dir, ignore_errors=True)

    def test_dense_chain_gradients(self):
        net = Sequential("mlp", [Dense("fc0", 4, 5), Tanh("t0"), Dense("fc1", 5, 2)])
        params = _init(net, self.rng)
        x = self.rng.standard_normal((3, 4))
        self.assertLess(gradient_check(net, params, [x]), 1e-4)

    def test_attention_gradients(self):
        net = Sequential("att", [AttentionBlock("attention", 3, reduction=1)])
        params = _init(net, self.rng)
        x = self.rng.standard_normal((2, 3, 4, 4))
        self.assertLess(gradient_check(net, params, [x]), 1e-4)

    def test_actor_gradients(self):
        net = ActorCriticNet(TINY, ACTOR)
        params = _init(net, self.rng)
        self.assertLess(gradient_check(net, params, [self.states]), 1e-4)

    def test_critic_gradients(self):
        net = ActorCriticNet(TINY, CRITIC)
        params = _init(net, self.rng)
        self.assertLess(gradient_check(net, params, [self.states, self.actions]), 1e-4)

    @unittest.skipUnless(os.environ.get("SKYTWIN_SLOW_TESTS"), "set SKYTWIN_SLOW_TESTS=1 to run")
    def test_desk_preset_gradients(self):
        states = self.rng.standard_normal((1, 2, 8, 8))
        for role, inputs in [(ACTOR, [states]), (CRITIC, [states, self.actions[:1]])]:
            net = ActorCriticNet("desk", role)
            params = _init(net, self.rng)
            self.assertLess(gradient_check(net, params, inputs), 1e-4)

    def test_output_shapes(self):
        actor = ActorCriticNet("desk", ACTOR)
        critic = ActorCriticNet("desk", CRITIC)
        pa, pc = actor.init_params(self.rng), critic.init_params(self.rng)
        states = self.rng.standard_normal((4, 2, 20, 20))
        out, _ = actor.forward(pa, states)
        self.assertEqual(out.shape, (4, 3))
        self.assertTrue(np.all(np.abs(out) < 1.0))
        q, _ = critic.forward(pc, states, self.rng.uniform(-1, 1, size=(4, 3)))
        self.assertEqual(q.shape, (4, 1))
        single, _ = actor.forward(pa, states[0])
        np.testing.assert_allclose(single, out[:1])

    def test_errors(self):
        with self.assertRaises(ValueError):
            NetSpec.preset("huge")
        with self.assertRaises(ValueError):
            ActorCriticNet(TINY, "value")
        critic = ActorCriticNet(TINY, CRITIC)
        params = critic.init_params(self.rng)
        with self.assertRaises(ValueError):
            critic.forward(params, self.states)
        with self.assertRaises(ValueError):
            critic.forward(params, self.rng.standard_normal((2, 3, 6, 6)), self.actions)

    def test_stale_tape(self):
        net = ActorCriticNet(TINY, ACTOR)
        params = net.init_params(self.rng)
        out, tape = net.forward(params, self.states)
        grads, _ = net.backward(params, tape, np.ones_like(out))
        adam_step(params, grads, AdamState.for_params(params, lr=1e-3))
        with self.assertRaises(RuntimeError):
            net.backward(params, tape, np.ones_like(out))
        with self.assertRaises(RuntimeError):
            net.backward(params.copy(), tape, np.ones_like(out))

    def test_adam_step(self):
        params = NetworkParams(w=np.array([1.0, -2.0]))
        state = AdamState.for_params(params, lr=0.1)
        adam_step(params, {"w": 2.0 * params["w"]}, state)
        np.testing.assert_allclose(params["w"], [0.9, -1.9], atol=1e-6)
        self.assertEqual((state.step, params.version), (1, 1))
        for _ in range(500):
            adam_step(params, {"w": 2.0 * params["w"]}, state)
        self.assertLess(np.abs(params["w"]).max(), 0.1)
        with self.assertRaises(ValueError):
            adam_step(params, {"w": np.zeros(3)}, state)

    def test_params_copy(self):
        params = ActorCriticNet(TINY, ACTOR).init_params(self.rng)
        other = params.copy()
        key = next(iter(params))
        other[key] += 1.0
        self.assertFalse(np.allclose(params[key], other[key]))
        self.assertEqual(params.size, other.size)
        self.assertEqual(Conv2d("c", 1, 1).output_size(100), 50)

    def test_save_and_load(self):
        net = ActorCriticNet("desk", CRITIC)
        params = net.init_params(self.rng)
        path = save_params(params, os.path.join(self.tmp_dir, "nets", "critic.ckpt"), {"preset": "desk"})
        loaded, meta = load_params(path, template=params)
        self.assertEqual(meta, {"preset": "desk"})
        self.assertEqual(list(loaded), list(params))
        for key in params:
            np.testing.assert_array_equal(loaded[key], params[key])

        with self.assertRaises(RuntimeError):
            load_params(path, template=ActorCriticNet("desk", ACTOR).init_params(self.rng))
        bad = os.path.join(self.tmp_dir, "bad.ckpt")
        with open(bad, "wb") as f:
            f.write(b"not a checkpoint")
        with self.assertRaises(RuntimeError):
            load_params(bad)
        with self.assertRaises(FileNotFoundError):
            load_params(os.path.join(self.tmp_dir, "missing.ckpt"))


if __name__ == "__main__":
    unittest.main()
