###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Independent Reference Implementations and the Self-Test Suite

The oracles here are deliberately written in plain Python loops without
reusing the optimized code paths; `galr selftest` and the unit tests both
compare the library against them.
"""
import dataclasses
import logging
import math
import time

import numpy as np

from shoobx.galr import cloud, diffcore, encoder, handspec, retarget
from shoobx.galr.errors import GaLRError

log = logging.getLogger("shoobx.galr.selftest")


# Forward kinematics


def _quat_matrix(w, x, y, z):
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _rodrigues(axis, angle):
    kx, ky, kz = axis
    k = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]], dtype=np.float64)
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def _homogeneous(rotation, translation):
    out = np.eye(4)
    out[:3, :3] = rotation
    out[:3, 3] = translation
    return out


def fk_oracle(spec, angles):
    """Link name -> 4x4 world pose by recursive descent from the root."""
    by_parent = {}
    for idx, joint in enumerate(spec.joints):
        by_parent.setdefault(joint.parent_link, []).append(idx)
    child_of = {link.parent_joint: link.name for link in spec.links}
    poses = {spec.root_link: np.eye(4)}

    def descend(link_name):
        for idx in by_parent.get(link_name, []):
            joint = spec.joints[idx]
            origin = _homogeneous(_quat_matrix(*joint.quat_wxyz), joint.xyz)
            motion = _homogeneous(_rodrigues(joint.axis, angles[idx]), np.zeros(3))
            child = child_of[joint.name]
            poses[child] = poses[link_name] @ origin @ motion
            descend(child)

    descend(spec.root_link)
    return poses


# Kernel point convolution


def kpconv_oracle(
    queries, supports, features, neighbor_lists, kernel_points, weights, sigma
):
    """Explicit double loop over neighbors and kernel points."""
    d_out = weights[0].shape[1]
    out = np.zeros((len(queries), d_out))
    for q_idx, query in enumerate(queries):
        for s_idx in neighbor_lists[q_idx]:
            y = supports[s_idx] - query
            for k, kernel_point in enumerate(kernel_points):
                distance = math.sqrt(
                    sum((y[c] - kernel_point[c]) ** 2 for c in range(3))
                )
                h = max(0.0, 1.0 - distance / sigma)
                out[q_idx] += h * (features[s_idx] @ weights[k])
    return out


# Subsampling and neighbor search


def grid_subsample_oracle(points, semantics, voxel):
    """Dictionary voxelization with sums taken in sorted (x, y, z, u, v) order."""
    rows = sorted(
        (tuple(float(c) for c in p), tuple(int(s) for s in sem))
        for p, sem in zip(points, semantics)
    )
    cells = {}
    for point, sem in rows:
        key = tuple(math.floor(c / voxel) for c in point)
        cells.setdefault(key, []).append((point, sem))
    out_points, out_semantics = [], []
    for key in sorted(cells):
        members = cells[key]
        sums = [0.0, 0.0, 0.0]
        for point, _ in members:
            for c in range(3):
                sums[c] += point[c]
        center = [s / len(members) for s in sums]
        best, best_dist = None, None
        for point, sem in members:
            dist = (point[0] - center[0]) ** 2 + (point[1] - center[1]) ** 2
            dist += (point[2] - center[2]) ** 2
            if best_dist is None or dist < best_dist:
                best, best_dist = sem, dist
        out_points.append(center)
        out_semantics.append(best)
    return (
        np.array(out_points).reshape(-1, 3),
        np.array(out_semantics, dtype=np.int32).reshape(-1, 2),
    )


def radius_neighbors_oracle(queries, supports, r):
    out = []
    for query in queries:
        out.append(
            [
                idx
                for idx, support in enumerate(supports)
                if math.sqrt(sum((support[c] - query[c]) ** 2 for c in range(3))) <= r
            ]
        )
    return out


def toy_cloud(seed, n=64, extent=0.06):
    """Random cloud in a small cube with random finger semantics."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, extent, size=(n, 3))
    semantics = np.stack(
        [rng.integers(0, encoder.SEMANTIC_CLASSES, n), rng.integers(0, 3, n)], axis=1
    ).astype(np.int32)
    return cloud.SurfaceCloud(points, semantics, "toy")


TOY_VOXEL = 0.01


def tiny_model(seed=0):
    return retarget.GaLRModel(
        encoder.TINY,
        retarget.DecoderConfig(hidden=16, layers=3),
        seed=seed,
        cloud_params=cloud.CloudParams(density=5e3, base_voxel=0.01),
    )


# Checks


@dataclasses.dataclass(frozen=True)
class CheckResult:
    check: str
    passed: bool
    detail: str

    @property
    def status(self):
        return "pass" if self.passed else "FAIL"


def check_fk(states=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in handspec.BUNDLED_SPECS:
        spec = handspec.load_bundled(name)
        for _ in range(states):
            q = spec.joint_vector(rng.uniform(spec.lo, spec.hi))
            posed = handspec.forward_kinematics(spec, q)
            expected = fk_oracle(spec, q.angles)
            for link in posed:
                error = np.max(np.abs(link.pose - expected[link.name]))
                worst = max(worst, float(error))
    return worst <= 1e-9, f"max pose error {worst:.2e}"


def check_correlation():
    sigma = 0.02
    point = np.zeros(3)
    values = (
        encoder.correlation(point, point, sigma),
        encoder.correlation(point + [sigma, 0, 0], point, sigma),
        encoder.correlation(point + [0, 0, sigma / 2], point, sigma),
        encoder.correlation(point + [2 * sigma, 0, 0], point, sigma),
    )
    ok = values[0] == 1.0 and values[1] == 0.0 and values[3] == 0.0
    ok = ok and abs(values[2] - 0.5) <= 1e-15
    return ok, "values " + ", ".join(f"{v:.3g}" for v in values)


def random_kpconv_instance(rng, K, n=32, d_in=3, d_out=4, radius=0.3):
    supports = rng.uniform(-0.5, 0.5, size=(n, 3))
    queries = rng.uniform(-0.5, 0.5, size=(max(1, n // 3), 3))
    features = rng.standard_normal((n, d_in))
    layer = encoder.KPConvLayer(
        "conv", d_in, d_out, encoder.make_disposition(K, radius), radius / 1.5
    )
    params = diffcore.ParameterSet()
    for name in layer.weight_names():
        params[name] = rng.standard_normal((d_in, d_out))
    neighbors = cloud.radius_neighbors(queries, supports, radius)
    return layer, params, queries, supports, features, neighbors


def check_kpconv(instances=10, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for idx in range(instances):
        K = (1, 7, 13)[idx % 3]
        instance = random_kpconv_instance(rng, K)
        layer, params, queries, supports, features, neighbors = instance
        tape = diffcore.Tape(params)
        out = encoder.kpconv_forward(
            tape, layer, queries, supports, tape.constant(features), neighbors
        ).value
        expected = kpconv_oracle(
            queries,
            supports,
            features,
            [neighbors[i] for i in range(len(neighbors))],
            layer.disposition.kernel_points,
            [params[name] for name in layer.weight_names()],
            layer.sigma,
        )
        worst = max(worst, float(np.max(np.abs(out - expected))))
    return worst <= 1e-10, f"max abs error {worst:.2e}"


def check_grid_subsample(seed=0):
    toy = toy_cloud(seed, n=200)
    points, semantics = cloud.grid_subsample(toy.points, toy.semantics, TOY_VOXEL)
    o_points, o_semantics = grid_subsample_oracle(toy.points, toy.semantics, TOY_VOXEL)
    ok = np.array_equal(points, o_points) and np.array_equal(semantics, o_semantics)
    return ok, f"{len(points)} voxels"


def check_radius_neighbors(seed=0):
    rng = np.random.default_rng(seed)
    supports = rng.uniform(0, 0.1, size=(120, 3))
    queries = rng.uniform(0, 0.1, size=(40, 3))
    lists = cloud.radius_neighbors(queries, supports, 0.025)
    expected = radius_neighbors_oracle(queries, supports, 0.025)
    ok = all(list(lists[i]) == expected[i] for i in range(len(queries)))
    return ok, f"{len(lists.indices)} pairs"


def composite_loss(model, pyramid, spec, target):
    """Encode, decode and masked RMSE as one differentiable function."""
    return lambda tape: model.loss_tensor(tape, pyramid, spec, target)


def check_gradients(seed=0, coords_per_param=4):
    model = tiny_model(seed)
    pyramid = cloud.build_pyramid(toy_cloud(seed), TOY_VOXEL)
    spec = handspec.load_bundled("planar3f")
    rng = np.random.default_rng(seed)
    target = spec.joint_vector(rng.uniform(spec.lo, spec.hi))
    error, where = diffcore.fd_check(
        composite_loss(model, pyramid, spec, target),
        model.params,
        coords_per_param=coords_per_param,
        seed=seed,
    )
    return error < 1e-5, f"max relative error {error:.2e} at {where[0]}[{where[1]}]"


def check_permutation(trials=3, seed=0):
    model = tiny_model(seed)
    rng = np.random.default_rng(seed)
    toy = toy_cloud(seed)
    reference = model.encode(cloud.build_pyramid(toy, TOY_VOXEL)).z
    worst = 0.0
    for _ in range(trials):
        order = rng.permutation(len(toy))
        shuffled = cloud.SurfaceCloud(toy.points[order], toy.semantics[order], "toy")
        z = model.encode(cloud.build_pyramid(shuffled, TOY_VOXEL)).z
        worst = max(worst, float(np.max(np.abs(z - reference))))
    return worst <= 1e-9, f"max latent change {worst:.2e}"


def check_checkpoint(seed=0):
    model = tiny_model(seed)
    model = model.with_params(model.params.as_float32())
    loaded = retarget.GaLRModel.load(model.save())
    pyramid = cloud.build_pyramid(toy_cloud(seed), TOY_VOXEL)
    ok = np.array_equal(model.encode(pyramid).z, loaded.encode(pyramid).z)
    return ok, f"checkpoint {loaded.checkpoint_id}"


CHECKS = (
    ("fk-oracle", check_fk),
    ("correlation", check_correlation),
    ("kpconv-oracle", check_kpconv),
    ("grid-subsample-oracle", check_grid_subsample),
    ("radius-neighbors-oracle", check_radius_neighbors),
    ("fd-check", check_gradients),
    ("permutation-invariance", check_permutation),
    ("checkpoint-roundtrip", check_checkpoint),
)


def run_selftest(checks=CHECKS):
    results = []
    for name, check in checks:
        start = time.monotonic()
        try:
            passed, detail = check()
        except GaLRError as err:
            passed, detail = False, str(err)
        detail = f"{detail} ({time.monotonic() - start:.1f}s)"
        log.info("selftest %s: %s", name, detail)
        results.append(CheckResult(name, bool(passed), detail))
    return results


def format_table(results):
    width = max(len("check"), *(len(r.check) for r in results))
    lines = [
        f"{'check':<{width}} | status | detail",
        f"{'-' * width}-+--------+-------",
    ]
    for result in results:
        lines.append(f"{result.check:<{width}} | {result.status:<6} | {result.detail}")
    return "\n".join(lines)
