###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Planar Grasping Task Tests
"""
import json
import unittest

import numpy as np

from shoobx.galr import handspec, planarenv
from shoobx.galr.errors import EnvError, ValidationError


class RegionTests(unittest.TestCase):
    def test_named(self):
        self.assertEqual(planarenv.region_bounds("B"), ((0.05, 0.25), (0.05, 0.25)))
        self.assertEqual(planarenv.region_name("C"), "C")

    def test_explicit(self):
        bounds = planarenv.region_bounds([[0.0, 0.1], [-0.1, 0.0]])
        self.assertEqual(bounds, ((0.0, 0.1), (-0.1, 0.0)))
        self.assertEqual(planarenv.region_name(bounds), "[0.0,0.1]x[-0.1,0.0]")

    def test_invalid(self):
        with self.assertRaises(EnvError):
            planarenv.region_bounds("E")
        with self.assertRaises(EnvError):
            planarenv.region_bounds([[0.0, 0.5], [0.0, 0.1]])
        with self.assertRaises(EnvError):
            planarenv.region_bounds([[0.1, 0.0], [0.0, 0.1]])
        with self.assertRaises(EnvError):
            planarenv.region_bounds(42)


class EnvTests(unittest.TestCase):
    def setUp(self):
        self.spec = handspec.load_bundled("planar3f")
        self.env = planarenv.PlanarGraspEnv(self.spec)

    def test_grasp_radius_default(self):
        self.assertGreaterEqual(self.env.grasp_radius, planarenv.GRASP_RADIUS)
        tips = self.env.fingertips(self.env.grasp_pose, np.zeros(3))
        spread = np.max(np.linalg.norm(tips - tips.mean(axis=0), axis=1))
        self.assertGreaterEqual(self.env.grasp_radius, spread + 0.01 - 1e-12)
        fixed = planarenv.PlanarGraspEnv(self.spec, grasp_radius=0.2)
        self.assertEqual(fixed.grasp_radius, 0.2)

    def test_reset(self):
        state = self.env.reset(3, "A")
        (x_lo, x_hi), (y_lo, y_hi) = planarenv.REGIONS["A"]
        self.assertTrue(x_lo <= state.object_xy[0] <= x_hi)
        self.assertTrue(y_lo <= state.object_xy[1] <= y_hi)
        self.assertEqual(state.wrist.tolist(), [0.0, 0.0, 0.0])
        self.assertEqual(state.q.angles.tolist(), self.spec.lo.tolist())
        self.assertEqual(state.t, 0)
        again = self.env.reset(3, "A")
        self.assertEqual(state.object_xy.tolist(), again.object_xy.tolist())

    def test_reset_outside_workspace(self):
        with self.assertRaises(EnvError):
            self.env.reset(0, object_xy=[0.5, 0.0])

    def test_step_before_reset(self):
        with self.assertRaises(EnvError):
            self.env.step(self.env.open_pose, np.zeros(3))

    def test_step_clips_wrist(self):
        self.env.reset(0, object_xy=[0.2, 0.2])
        state, success, done = self.env.step(self.env.open_pose, [1.0, 0.0, 1.0])
        np.testing.assert_allclose(state.wrist, [0.03, 0.0, 0.2])
        self.assertFalse(success)
        self.assertFalse(done)
        self.assertEqual(state.t, 1)

    def test_out_of_limits_action(self):
        self.env.reset(0, object_xy=[0.2, 0.2])
        bad = handspec.JointVector(self.spec.embodiment_id, self.spec.hi + 0.1)
        with self.assertRaises(EnvError):
            self.env.step(bad, np.zeros(3))

    def test_foreign_action(self):
        other = handspec.load_bundled("planar2f")
        self.env.reset(0, object_xy=[0.2, 0.2])
        with self.assertRaises(EnvError):
            self.env.step(other.joint_vector(other.lo), np.zeros(3))

    def test_bad_wrist_action(self):
        self.env.reset(0, object_xy=[0.2, 0.2])
        with self.assertRaises(EnvError):
            self.env.step(self.env.open_pose, [np.nan, 0.0, 0.0])
        with self.assertRaises(EnvError):
            self.env.step(self.env.open_pose, [0.0, 0.0])

    def test_horizon(self):
        env = planarenv.PlanarGraspEnv(self.spec, horizon=3)
        env.reset(0, object_xy=[0.2, 0.2])
        for _ in range(2):
            _, _, done = env.step(env.open_pose, np.zeros(3))
            self.assertFalse(done)
        _, success, done = env.step(env.open_pose, np.zeros(3))
        self.assertFalse(success)
        self.assertTrue(done)
        with self.assertRaises(EnvError):
            env.step(env.open_pose, np.zeros(3))

    def test_success_is_geometric(self):
        obj = np.array([0.1, -0.1])
        state = self.env.reset(0, object_xy=obj)
        wrist = self.env.grasp_wrist(obj)
        closed = planarenv.EnvState(obj, wrist, self.env.grasp_pose, 1)
        self.assertTrue(self.env.is_success(closed))
        posed = handspec.forward_kinematics(
            self.spec, self.env.grasp_pose, wrist=handspec.planar_pose(*wrist)
        )
        tips = self.spec.fingertips(posed)[:, :2]
        distances = np.linalg.norm(tips - obj, axis=1)
        self.assertTrue(np.all(distances <= self.env.grasp_radius))
        # Open hand at the right place is not a grasp.
        open_hand = planarenv.EnvState(obj, wrist, state.q, 1)
        self.assertFalse(self.env.is_success(open_hand))
        # Closed hand far away is not a grasp either.
        far = planarenv.EnvState(obj, wrist + [0.2, 0.0, 0.0], self.env.grasp_pose, 1)
        self.assertFalse(self.env.is_success(far))

    def test_object_radius(self):
        obj = np.array([0.1, -0.1])
        wrist = self.env.grasp_wrist(obj) + [self.env.grasp_radius + 0.02, 0.0, 0.0]
        state = planarenv.EnvState(obj, wrist, self.env.grasp_pose, 1)
        self.assertFalse(self.env.is_success(state))
        wide = planarenv.PlanarGraspEnv(
            self.spec, object_radius=self.env.grasp_radius + 0.03
        )
        self.assertTrue(wide.is_success(state))

    def test_invalid_options(self):
        with self.assertRaises(ValidationError):
            planarenv.PlanarGraspEnv(self.spec, horizon=0)


class ExpertTests(unittest.TestCase):
    def test_expert_always_succeeds(self):
        for name in handspec.BUNDLED_SPECS:
            spec = handspec.load_bundled(name)
            env = planarenv.PlanarGraspEnv(spec)
            for region in ("A", "B", "C", "D"):
                for seed in range(3):
                    traj = planarenv.run_expert(env, seed, region)
                    self.assertTrue(traj.success, f"{name} {region} {seed}")
                    self.assertLessEqual(len(traj), env.horizon)

    def test_expert_closes_last(self):
        spec = handspec.load_bundled("toy4f")
        env = planarenv.PlanarGraspEnv(spec)
        traj = planarenv.run_expert(env, 0, object_xy=[0.2, -0.2])
        closing = traj.steps[-planarenv.CLOSE_STEPS :]
        for step in closing:
            self.assertEqual(step.wrist_delta.tolist(), [0.0, 0.0, 0.0])
        np.testing.assert_allclose(closing[-1].action.angles, env.grasp_pose.angles)
        for step in traj.steps[: -planarenv.CLOSE_STEPS]:
            self.assertEqual(step.action.angles.tolist(), spec.lo.tolist())

    def test_generate_demos(self):
        spec = handspec.load_bundled("planar2f")
        env = planarenv.PlanarGraspEnv(spec)
        demos = planarenv.generate_demos(env, spec, 6, "B", seed=1)
        self.assertEqual(len(demos), 6)
        for traj in demos:
            self.assertTrue(traj.success)
            self.assertTrue(0.05 <= traj.object_xy[0] <= 0.25)
        again = planarenv.generate_demos(env, spec, 6, "B", seed=1)
        self.assertEqual([t.to_json() for t in demos], [t.to_json() for t in again])

    def test_generate_demos_invalid(self):
        spec = handspec.load_bundled("planar2f")
        env = planarenv.PlanarGraspEnv(spec)
        with self.assertRaises(ValidationError):
            planarenv.generate_demos(env, spec, 0, "A", seed=1)
        with self.assertRaises(ValidationError):
            other = handspec.load_bundled("toy4f")
            planarenv.generate_demos(env, other, 2, "A", seed=1)
        with self.assertRaises(EnvError):
            planarenv.generate_demos(env, spec, 2, "Z", seed=1)

    def test_expert_fails_with_tight_radius(self):
        spec = handspec.load_bundled("toy5f")
        env = planarenv.PlanarGraspEnv(spec, grasp_radius=0.001)
        with self.assertRaises(EnvError):
            planarenv.generate_demos(env, spec, 1, "A", seed=0)

    def test_trajectory_json(self):
        spec = handspec.load_bundled("planar3f")
        env = planarenv.PlanarGraspEnv(spec)
        traj = planarenv.run_expert(env, 2, "D")
        document = json.loads(json.dumps(traj.to_json()))
        loaded = planarenv.Trajectory.from_json(document, spec)
        self.assertEqual(loaded.to_json(), traj.to_json())
        with self.assertRaises(ValidationError):
            planarenv.Trajectory.from_json({"embodiment_id": "planar3f"}, spec)
        with self.assertRaises(ValidationError):
            planarenv.Trajectory.from_json(
                {"embodiment_id": "planar3f", "object": [0, 0], "steps": []}, spec
            )
