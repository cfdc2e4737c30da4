###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Planar Grasping Task

A hand moves its wrist in the table plane and closes around a point object.
Success is geometric: every fingertip (projected onto the plane) lies within
the grasp radius of the object and the hand is mostly closed.
"""
import dataclasses
import logging
from typing import Tuple

import numpy as np

from shoobx.galr import handspec
from shoobx.galr.errors import EnvError, ValidationError

log = logging.getLogger("shoobx.galr.planarenv")

WORKSPACE = (-0.3, 0.3)
REGIONS = {
    "A": ((-0.25, -0.05), (0.05, 0.25)),
    "B": ((0.05, 0.25), (0.05, 0.25)),
    "C": ((-0.25, -0.05), (-0.25, -0.05)),
    "D": ((0.05, 0.25), (-0.25, -0.05)),
    "all": ((-0.25, 0.25), (-0.25, 0.25)),
}
GRASP_RADIUS = 0.06
GRASP_CLOSURE = 0.9
CLOSE_STEPS = 4
REACH_TOLERANCE = 1e-9


def region_bounds(region):
    """((x_lo, x_hi), (y_lo, y_hi)) for a region name or explicit bounds."""
    if isinstance(region, str):
        if region not in REGIONS:
            raise EnvError(f"unknown region {region!r}")
        bounds = REGIONS[region]
    else:
        try:
            (x_lo, x_hi), (y_lo, y_hi) = region
        except (TypeError, ValueError):
            raise EnvError(f"bad region bounds {region!r}")
        bounds = ((float(x_lo), float(x_hi)), (float(y_lo), float(y_hi)))
    for lo, hi in bounds:
        if not WORKSPACE[0] <= lo <= hi <= WORKSPACE[1]:
            raise EnvError(f"region {region!r} is not within the workspace")
    return bounds


def region_name(region):
    if isinstance(region, str):
        return region
    (x_lo, x_hi), (y_lo, y_hi) = region_bounds(region)
    return f"[{x_lo},{x_hi}]x[{y_lo},{y_hi}]"


@dataclasses.dataclass(frozen=True)
class EnvState:
    object_xy: np.ndarray
    wrist: np.ndarray
    q: handspec.JointVector
    t: int = 0


@dataclasses.dataclass(frozen=True)
class Step:
    """One control step: the state before acting and the commanded action."""

    object_xy: np.ndarray
    wrist: np.ndarray
    state: handspec.JointVector
    action: handspec.JointVector
    wrist_delta: np.ndarray

    def to_json(self):
        return {
            "wrist": self.wrist.tolist(),
            "state": self.state.angles.tolist(),
            "action": self.action.angles.tolist(),
            "wrist_delta": self.wrist_delta.tolist(),
        }


@dataclasses.dataclass(frozen=True)
class Trajectory:
    embodiment_id: str
    object_xy: np.ndarray
    steps: Tuple[Step, ...]
    success: bool = True

    def __len__(self):
        return len(self.steps)

    def to_json(self):
        return {
            "embodiment_id": self.embodiment_id,
            "object": self.object_xy.tolist(),
            "success": self.success,
            "steps": [step.to_json() for step in self.steps],
        }

    @classmethod
    def from_json(cls, data, spec):
        try:
            obj = np.asarray(data["object"], dtype=np.float64)
            steps = tuple(
                Step(
                    obj,
                    np.asarray(item["wrist"], dtype=np.float64),
                    spec.joint_vector(item["state"]),
                    spec.joint_vector(item["action"]),
                    np.asarray(item["wrist_delta"], dtype=np.float64),
                )
                for item in data["steps"]
            )
        except (KeyError, TypeError) as err:
            raise ValidationError(f"bad trajectory document: {err}")
        if not steps:
            raise ValidationError("trajectory has no steps")
        return cls(data["embodiment_id"], obj, steps, data.get("success", True))


class PlanarGraspEnv:
    """Deterministic planar reach-and-close task for one embodiment.

    The grasp radius defaults to the larger of 6 cm and the fingertip
    spread of the grasp pose plus 1 cm, so every bundled hand can succeed.
    `object_radius` measures fingertip distance to the object surface.
    """

    def __init__(
        self,
        spec,
        grasp_radius=None,
        object_radius=0.0,
        horizon=30,
        max_step=0.03,
        max_turn=0.2,
        closure=0.7,
    ):
        if horizon < 1 or not max_step > 0:
            raise ValidationError("horizon and max step must be positive")
        self.spec = spec
        self.object_radius = float(object_radius)
        self.horizon = horizon
        self.max_step = max_step
        self.max_turn = max_turn
        self.closure = closure
        self.open_pose = spec.joint_vector(spec.lo)
        self.grasp_pose = spec.joint_vector(
            spec.lo + GRASP_CLOSURE * (spec.hi - spec.lo)
        )
        tips = self.fingertips(self.grasp_pose, np.zeros(3))
        self.grasp_offset = tips.mean(axis=0)
        spread = float(np.max(np.linalg.norm(tips - self.grasp_offset, axis=1)))
        self.grasp_radius = (
            max(GRASP_RADIUS, spread + 0.01) if grasp_radius is None else grasp_radius
        )
        reach = float(np.max(np.linalg.norm(tips, axis=1))) + 0.05
        self.wrist_bounds = (WORKSPACE[0] - reach, WORKSPACE[1] + reach)
        self.state = None

    def __repr__(self):
        return f"<PlanarGraspEnv {self.spec.embodiment_id} r={self.grasp_radius:.3f}>"

    def fingertips(self, q, wrist):
        posed = handspec.forward_kinematics(
            self.spec, q, wrist=handspec.planar_pose(*wrist)
        )
        return self.spec.fingertips(posed)[:, :2]

    def closure_of(self, q):
        return float(np.mean((q.angles - self.spec.lo) / (self.spec.hi - self.spec.lo)))

    def is_success(self, state):
        distances = np.linalg.norm(
            self.fingertips(state.q, state.wrist) - state.object_xy, axis=1
        )
        return bool(
            np.all(distances - self.object_radius <= self.grasp_radius)
            and self.closure_of(state.q) >= self.closure
        )

    def grasp_wrist(self, object_xy):
        """Wrist pose (yaw 0) putting the grasp fingertip centroid on the object."""
        target = np.asarray(object_xy, dtype=np.float64) - self.grasp_offset
        lo, hi = self.wrist_bounds
        if np.any(target < lo) or np.any(target > hi):
            raise EnvError(f"object at {list(object_xy)} is unreachable")
        return np.array([target[0], target[1], 0.0])

    def reset(self, seed, region="all", object_xy=None):
        if object_xy is None:
            (x_lo, x_hi), (y_lo, y_hi) = region_bounds(region)
            rng = np.random.default_rng(seed)
            object_xy = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])
        object_xy = np.asarray(object_xy, dtype=np.float64)
        if np.any(object_xy < WORKSPACE[0]) or np.any(object_xy > WORKSPACE[1]):
            raise EnvError(f"object at {object_xy.tolist()} is outside the workspace")
        self.state = EnvState(object_xy, np.zeros(3), self.open_pose, 0)
        return self.state

    def clip_delta(self, wrist_delta):
        delta = np.array(wrist_delta, dtype=np.float64)
        if delta.shape != (3,) or not np.all(np.isfinite(delta)):
            raise EnvError(f"bad wrist action {wrist_delta!r}")
        norm = np.linalg.norm(delta[:2])
        if norm > self.max_step:
            delta[:2] *= self.max_step / norm
        delta[2] = np.clip(delta[2], -self.max_turn, self.max_turn)
        return delta

    def step(self, q, wrist_delta):
        """Apply one action; returns (state, success, done)."""
        if self.state is None:
            raise EnvError("step before reset")
        if self.state.t >= self.horizon:
            raise EnvError("episode is over")
        if q.embodiment_id != self.spec.embodiment_id:
            raise EnvError(
                f"action for {q.embodiment_id!r} in {self.spec.embodiment_id!r} env"
            )
        try:
            self.spec.check_limits(q.angles)
        except ValidationError as err:
            raise EnvError(f"action out of limits: {err}")
        wrist = self.state.wrist + self.clip_delta(wrist_delta)
        wrist[:2] = np.clip(wrist[:2], *self.wrist_bounds)
        self.state = EnvState(self.state.object_xy, wrist, q, self.state.t + 1)
        success = self.is_success(self.state)
        return self.state, success, success or self.state.t >= self.horizon


def expert_action(env, state):
    """Scripted reach-then-close action for `state`."""
    target = env.grasp_wrist(state.object_xy)
    delta = target - state.wrist
    if np.linalg.norm(delta[:2]) > REACH_TOLERANCE:
        return env.open_pose, env.clip_delta(delta)
    closure = env.closure_of(state.q) / GRASP_CLOSURE
    stage = min(CLOSE_STEPS, int(round(closure * CLOSE_STEPS)) + 1)
    fraction = GRASP_CLOSURE * stage / CLOSE_STEPS
    lo, hi = env.spec.lo, env.spec.hi
    return env.spec.joint_vector(lo + fraction * (hi - lo)), np.zeros(3)


def run_expert(env, seed, region="all", object_xy=None):
    state = env.reset(seed, region, object_xy)
    steps, success = [], False
    for _ in range(env.horizon):
        action, delta = expert_action(env, state)
        steps.append(Step(state.object_xy, state.wrist, state.q, action, delta))
        state, success, done = env.step(action, delta)
        if done:
            break
    return Trajectory(env.spec.embodiment_id, state.object_xy, tuple(steps), success)


def generate_demos(env, spec, n, region, seed):
    """`n` successful scripted demonstrations with objects drawn from `region`."""
    if n < 1:
        raise ValidationError("demo count must be positive", path="n")
    if env.spec.embodiment_id != spec.embodiment_id:
        raise ValidationError("environment embodiment differs from spec")
    region_bounds(region)
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=n)
    demos = []
    for idx, demo_seed in enumerate(seeds):
        traj = run_expert(env, int(demo_seed), region)
        if not traj.success:
            raise EnvError(
                f"scripted expert failed on demo {idx} of {spec.embodiment_id}"
            )
        demos.append(traj)
    log.info(
        "Generated %d demos for %s in region %s",
        n,
        spec.embodiment_id,
        region_name(region),
    )
    return demos
