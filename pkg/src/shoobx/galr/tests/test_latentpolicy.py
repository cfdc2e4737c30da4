###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Latent-Action Policy Tests
"""
import dataclasses
import json
import unittest
from unittest import mock

import numpy as np

from shoobx.galr import handspec, latentpolicy, planarenv, selftest
from shoobx.galr.errors import NonFiniteError, ValidationError

TINY_POLICY = latentpolicy.PolicyConfig(
    hidden=16, layers=3, step_dim=8, epochs=5, batch_size=16, steps=4, lr=3e-3
)


def demos(spec, count, region="A", seed=0):
    env = planarenv.PlanarGraspEnv(spec)
    return planarenv.generate_demos(env, spec, count, region, seed)


class ScheduleTests(unittest.TestCase):
    def test_cosine(self):
        schedule = latentpolicy.cosine_schedule(10)
        self.assertEqual(len(schedule), 10)
        self.assertTrue(np.all(schedule.betas >= 1e-4))
        self.assertTrue(np.all(schedule.betas <= 0.9999))
        np.testing.assert_allclose(schedule.alphas, 1 - schedule.betas)
        self.assertTrue(np.all(np.diff(schedule.alpha_bar) < 0))
        self.assertLess(schedule.alpha_bar[-1], 1e-3)

    def test_invalid_steps(self):
        with self.assertRaises(ValidationError):
            latentpolicy.cosine_schedule(0)

    def test_step_embedding(self):
        emb = latentpolicy.step_embedding([0, 3, 7], 8)
        self.assertEqual(emb.shape, (3, 8))
        self.assertEqual(emb[0].tolist(), [0.0] * 4 + [1.0] * 4)
        self.assertFalse(np.array_equal(emb[1], emb[2]))

    def test_normalizer(self):
        data = np.array([[1.0, 5.0], [3.0, 5.0]])
        norm = latentpolicy.Normalizer.fit(data)
        self.assertEqual(norm.std.tolist(), [1.0, 1.0])
        self.assertEqual(norm.apply(data).tolist(), [[-1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(norm.invert(norm.apply(data)), data)


class PolicyConfigTests(unittest.TestCase):
    def test_invalid(self):
        with self.assertRaises(ValidationError):
            latentpolicy.PolicyConfig(variant="shared")
        with self.assertRaises(ValidationError):
            latentpolicy.PolicyConfig(prediction_type="v")
        with self.assertRaises(ValidationError):
            latentpolicy.PolicyConfig(layers=1)
        with self.assertRaises(ValidationError) as ctx:
            latentpolicy.PolicyConfig(noise_scale=0.0)
        self.assertEqual(ctx.exception.path, "noise_scale")
        latentpolicy.PolicyConfig(prediction_type="sample", noise_scale=0.0)

    def test_json(self):
        config = latentpolicy.PolicyConfig.from_json(TINY_POLICY.to_json())
        self.assertEqual(config, TINY_POLICY)
        with self.assertRaises(ValidationError):
            latentpolicy.PolicyConfig.from_json({"depth": 3})


class LiftTests(unittest.TestCase):
    def setUp(self):
        self.model = selftest.tiny_model()
        self.spec = handspec.load_bundled("planar2f")
        env = planarenv.PlanarGraspEnv(self.spec)
        self.traj = planarenv.run_expert(env, 0, object_xy=[-0.2, 0.2])

    def test_lift(self):
        lifted = latentpolicy.lift(self.traj, self.model, self.spec)
        d_latent = self.model.encoder_config.d_latent
        self.assertEqual(len(lifted), len(self.traj))
        self.assertEqual(lifted.observations.shape, (len(self.traj), 5 + d_latent))
        self.assertEqual(lifted.latents.shape, (len(self.traj), d_latent))
        self.assertEqual(lifted.wrist_deltas.shape, (len(self.traj), 3))
        self.assertEqual(lifted.producer, self.model.checkpoint_id)
        self.assertTrue(np.all(np.abs(lifted.joint_actions) <= 1.0))
        # Constant open-hand actions while reaching lift to one latent.
        self.assertTrue(np.array_equal(lifted.latents[0], lifted.latents[1]))

    def test_lift_uses_pose_latents(self):
        lifted = latentpolicy.lift(self.traj, self.model, self.spec)
        step = self.traj.steps[-1]
        expected = self.model.encode(self.model.pyramid(self.spec, step.action)).z
        self.assertTrue(np.array_equal(lifted.latents[-1], expected))
        np.testing.assert_array_equal(lifted.observations[0][:2], step.object_xy)

    def test_wrong_spec(self):
        with self.assertRaises(ValidationError):
            latentpolicy.lift(self.traj, self.model, handspec.load_bundled("toy4f"))

    def test_stage(self):
        with mock.patch.object(
            self.model, "encode", side_effect=NonFiniteError("non-finite latent")
        ):
            with self.assertRaises(NonFiniteError) as ctx:
                latentpolicy.lift(self.traj, self.model, self.spec)
        self.assertEqual(str(ctx.exception), "[lift step 0] non-finite latent")


class TrainPolicyTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.model = selftest.tiny_model()
        cls.spec_a = handspec.load_bundled("planar2f")
        cls.spec_b = handspec.load_bundled("toy4f")
        cls.lifted_a = [
            latentpolicy.lift(t, cls.model, cls.spec_a) for t in demos(cls.spec_a, 3)
        ]
        cls.lifted_b = [
            latentpolicy.lift(t, cls.model, cls.spec_b)
            for t in demos(cls.spec_b, 3, "B")
        ]

    def test_empty(self):
        with self.assertRaises(ValidationError):
            latentpolicy.train_policy([], TINY_POLICY)

    def test_mixed_producers(self):
        foreign = dataclasses.replace(self.lifted_b[0], producer="0123456789abcdef")
        with self.assertRaises(ValidationError):
            latentpolicy.train_policy(self.lifted_a + [foreign], TINY_POLICY)

    def test_deterministic(self):
        first, losses = latentpolicy.train_policy(self.lifted_a, TINY_POLICY)
        second, again = latentpolicy.train_policy(self.lifted_a, TINY_POLICY)
        self.assertEqual(losses, again)
        self.assertEqual(first.params.digest(), second.params.digest())
        self.assertEqual(len(losses), TINY_POLICY.epochs)

    def test_latent_parameters_are_shared(self):
        policy, _ = latentpolicy.train_policy(
            self.lifted_a + self.lifted_b, TINY_POLICY
        )
        for name in policy.params:
            self.assertNotIn("planar2f", name)
            self.assertNotIn("toy4f", name)
        d_latent = self.model.encoder_config.d_latent
        self.assertEqual(policy.params["head.W"].shape, (16, d_latent + 3))
        self.assertEqual(policy.embodiments, [])
        self.assertEqual(policy.producer, self.model.checkpoint_id)

    def test_naive_heads(self):
        config = dataclasses.replace(TINY_POLICY, variant="naive")
        policy, _ = latentpolicy.train_policy(self.lifted_a + self.lifted_b, config)
        self.assertEqual(policy.params["head.planar2f.W"].shape, (16, 2 + 3))
        self.assertEqual(policy.params["in.toy4f.W"].shape, (8 + 3, 16))
        self.assertEqual(policy.embodiments, ["planar2f", "toy4f"])
        self.assertNotIn("head.W", policy.params)

    def test_loss_decreases(self):
        config = dataclasses.replace(TINY_POLICY, epochs=40, hidden=32)
        _, losses = latentpolicy.train_policy(self.lifted_a, config)
        self.assertLess(np.mean(losses[-5:]), losses[0])

    def test_exact_regression(self):
        config = dataclasses.replace(
            TINY_POLICY,
            steps=1,
            prediction_type="sample",
            noise_scale=0.0,
            clip_sample=None,
        )
        policy, _ = latentpolicy.train_policy(self.lifted_a, config)
        observation = self.lifted_a[0].observations[3]
        sampled = policy.sample(observation, "", np.random.default_rng(0))
        dim = len(policy.x_norms[""].mean)
        predicted = policy.x_norms[""].invert(
            policy.predict(policy.obs_norm.apply(observation), np.zeros(dim), 0)
        )
        np.testing.assert_allclose(sampled, predicted, rtol=0, atol=1e-12)

    def test_act(self):
        policy, _ = latentpolicy.train_policy(self.lifted_a, TINY_POLICY)
        observation = self.lifted_a[0].observations[0]
        q, delta, flags = policy.act(
            observation, self.spec_a, self.model, np.random.default_rng(0)
        )
        self.assertEqual(q.embodiment_id, "planar2f")
        self.assertTrue(np.all(q.angles >= self.spec_a.lo))
        self.assertTrue(np.all(q.angles <= self.spec_a.hi))
        self.assertEqual(delta.shape, (3,))
        self.assertEqual(len(flags), self.spec_a.dof)
        # Any hand with the same registry can be driven by the shared policy.
        q_b, _, _ = policy.act(
            observation, self.spec_b, self.model, np.random.default_rng(0)
        )
        self.assertEqual(len(q_b), self.spec_b.dof)

    def test_act_wrong_encoder(self):
        policy, _ = latentpolicy.train_policy(self.lifted_a, TINY_POLICY)
        with self.assertRaises(ValidationError):
            policy.act(
                self.lifted_a[0].observations[0],
                self.spec_a,
                selftest.tiny_model(seed=1),
                np.random.default_rng(0),
            )

    def test_naive_unknown_embodiment(self):
        config = dataclasses.replace(TINY_POLICY, variant="naive")
        policy, _ = latentpolicy.train_policy(self.lifted_a, config)
        with self.assertRaises(ValidationError):
            policy.act(
                self.lifted_a[0].observations[0],
                self.spec_b,
                self.model,
                np.random.default_rng(0),
            )

    def test_save_load(self):
        policy, _ = latentpolicy.train_policy(self.lifted_a, TINY_POLICY)
        data = policy.save()
        loaded = latentpolicy.DenoisingPolicy.load(data)
        self.assertEqual(loaded.config, policy.config)
        self.assertEqual(loaded.producer, policy.producer)
        self.assertEqual(loaded.registry_version, "galr-h24-v1")
        self.assertEqual(sorted(loaded.x_norms), [""])
        self.assertEqual(loaded.save(), data)

    def test_rollout(self):
        policy, _ = latentpolicy.train_policy(self.lifted_a, TINY_POLICY)
        env = planarenv.PlanarGraspEnv(self.spec_a, horizon=4)
        episode = latentpolicy.rollout(policy, env, self.spec_a, self.model, seed=5)
        self.assertLessEqual(len(episode.trajectory), 4)
        self.assertIn(episode.success, (True, False))
        for step in episode.trajectory.steps:
            self.assertTrue(np.all(step.action.angles >= self.spec_a.lo))
            self.assertTrue(np.all(step.action.angles <= self.spec_a.hi))
        again = latentpolicy.rollout(policy, env, self.spec_a, self.model, seed=5)
        self.assertEqual(again.trajectory.to_json(), episode.trajectory.to_json())

    def test_few_shot_curve(self):
        config = dataclasses.replace(TINY_POLICY, epochs=2)
        row = latentpolicy.ResultRow("p", "planar2f", "A", 0, 0.5)
        with mock.patch.object(latentpolicy, "eval_matrix", return_value=[row]):
            result = latentpolicy.few_shot_curve(
                self.spec_a,
                self.spec_b,
                self.model,
                config,
                demo_counts=(2, 1),
                b_demos=2,
            )
        self.assertEqual(result.counts, (1, 2))
        self.assertEqual(result.success, (0.5, 0.5))
        self.assertEqual(result.baseline, 0.5)


class EvalMatrixTests(unittest.TestCase):
    def setUp(self):
        self.model = selftest.tiny_model()
        self.spec = handspec.load_bundled("planar2f")
        self.options = {"*": {"horizon": 2}}

    def test_too_few_episodes(self):
        with self.assertRaises(ValidationError) as ctx:
            latentpolicy.eval_matrix(
                {"random": latentpolicy.RandomPolicy()},
                [self.spec],
                ["A"],
                19,
                [0],
                self.model,
            )
        self.assertEqual(ctx.exception.path, "episodes")

    def test_rows(self):
        rows = latentpolicy.eval_matrix(
            {"random": latentpolicy.RandomPolicy()},
            [self.spec],
            ["A", "B"],
            20,
            [0],
            self.model,
            self.options,
        )
        self.assertEqual([(r.policy, r.region, r.seed) for r in rows],
                         [("random", "A", 0), ("random", "B", 0)])
        for row in rows:
            self.assertEqual(row.embodiment, "planar2f")
            self.assertTrue(0.0 <= row.success_rate <= 1.0)
            self.assertEqual(row.success_rate * 20, round(row.success_rate * 20))

    def test_workers(self):
        args = (
            {"random": latentpolicy.RandomPolicy()},
            [self.spec],
            ["C"],
            20,
            [1],
            self.model,
            self.options,
        )
        self.assertEqual(
            latentpolicy.eval_matrix(*args), latentpolicy.eval_matrix(*args, workers=2)
        )

    def test_random_policy_rarely_grasps(self):
        # Far corner of the workspace, well away from the starting wrist.
        corner = ((-0.25, -0.2), (-0.25, -0.2))
        rows = latentpolicy.eval_matrix(
            {"random": latentpolicy.RandomPolicy()},
            [self.spec],
            [corner],
            20,
            [0],
            self.model,
        )
        self.assertEqual(rows[0].region, planarenv.region_name(corner))
        self.assertLess(rows[0].success_rate, 0.05)

    def test_episode_seeds(self):
        seed = latentpolicy._episode_seed
        self.assertEqual(seed(0, "AB", 3), seed(0, "AB", 3))
        self.assertNotEqual(seed(0, "AB", 3), seed(0, "BA", 3))
        self.assertNotEqual(seed(0, "A", 3), seed(1, "A", 3))
        self.assertNotEqual(seed(0, "A", 3), seed(0, "A", 4))
        self.assertEqual(
            len({seed(0, region, 0) for region in planarenv.REGIONS}),
            len(planarenv.REGIONS),
        )

    def test_summarize(self):
        rows = [
            latentpolicy.ResultRow("p", "toy4f", "A", 0, 0.5),
            latentpolicy.ResultRow("p", "toy4f", "A", 1, 1.0),
            latentpolicy.ResultRow("p", "toy4f", "B", 0, 0.25),
        ]
        self.assertEqual(
            latentpolicy.summarize(rows),
            {("p", "toy4f", "A"): 0.75, ("p", "toy4f", "B"): 0.25},
        )

    def test_results_csv(self):
        rows = [latentpolicy.ResultRow("latent", "toy4f", "A", 2, 0.35)]
        self.assertEqual(
            latentpolicy.results_csv(rows),
            "policy,embodiment,region,seed,success_rate\nlatent,toy4f,A,2,0.35\n",
        )


class DemoFileTests(unittest.TestCase):
    def test_document(self):
        spec = handspec.load_bundled("planar3f")
        trajectories = demos(spec, 2, "D", seed=4)
        doc = latentpolicy.demos_document(spec, trajectories, "D", 4)
        self.assertEqual(doc["region"], "D")
        loaded_spec, loaded = latentpolicy.load_demos(json.loads(json.dumps(doc)))
        self.assertEqual(loaded_spec.embodiment_id, "planar3f")
        self.assertEqual(
            [t.to_json() for t in loaded], [t.to_json() for t in trajectories]
        )

    def test_bad_document(self):
        with self.assertRaises(ValidationError):
            latentpolicy.load_demos({"trajectories": []})
