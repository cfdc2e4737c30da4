###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Surface Clouds and the Downsampling Pyramid
"""
import dataclasses
import hashlib
import logging
import math
import struct
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from shoobx.galr import handspec
from shoobx.galr.errors import DegeneratePyramid, ValidationError

log = logging.getLogger("shoobx.galr.cloud")

CLOUD_MAGIC = b"GALRPC1"

DEFAULT_DENSITY = 2e4
DEFAULT_BASE_VOXEL = 0.008
DEFAULT_RADIUS_SCALE = 2.5

# Minimum points each level must keep so that every later stage can still
# strictly reduce.
_STAGE_MINIMUM = {1: 3, 2: 2, 3: 1}


@dataclasses.dataclass(frozen=True)
class CloudParams:
    density: float = DEFAULT_DENSITY
    base_voxel: float = DEFAULT_BASE_VOXEL
    radius_scale: float = DEFAULT_RADIUS_SCALE

    def to_json(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class SurfaceCloud:
    points: np.ndarray
    semantics: np.ndarray
    embodiment_id: str = ""
    source: Optional[handspec.JointVector] = None

    def __len__(self):
        return len(self.points)


@dataclasses.dataclass(frozen=True)
class Level:
    points: np.ndarray
    semantics: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclasses.dataclass(frozen=True)
class NeighborList:
    """CSR neighbor lists: supports of query `i` are indices[indptr[i]:indptr[i+1]]."""

    indptr: np.ndarray
    indices: np.ndarray
    radius: float

    def __len__(self):
        return len(self.indptr) - 1

    def __getitem__(self, query):
        return self.indices[self.indptr[query] : self.indptr[query + 1]]

    def pairs(self):
        counts = np.diff(self.indptr)
        return np.repeat(np.arange(len(counts)), counts), self.indices


@dataclasses.dataclass(frozen=True)
class MultiScaleCloud:
    level0: SurfaceCloud
    level1: Level
    level2: Level
    neighbors01: NeighborList
    neighbors11: NeighborList
    neighbors12: NeighborList
    neighbors22: NeighborList
    base_voxel: float
    radius_scale: float

    @property
    def radii(self):
        return (
            self.neighbors01.radius,
            self.neighbors11.radius,
            self.neighbors12.radius,
            self.neighbors22.radius,
        )


def _check_finite(points, name):
    if not np.all(np.isfinite(points)):
        raise ValidationError("coordinates must be finite", path=name)


def _sample_sphere(rng, n, radius):
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * radius


def _sample_box(rng, n, extents):
    extents = np.asarray(extents, dtype=float)
    a, b, c = extents
    face_areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
    uv = rng.random((n, 2)) - 0.5
    points = np.empty((n, 3))
    for axis in range(3):
        others = [k for k in range(3) if k != axis]
        for sign_idx, sign in enumerate((-1.0, 1.0)):
            mask = faces == 2 * axis + sign_idx
            points[mask, axis] = sign * extents[axis] / 2
            points[mask, others[0]] = uv[mask, 0] * extents[others[0]]
            points[mask, others[1]] = uv[mask, 1] * extents[others[1]]
    return points


def _sample_capsule(rng, n, radius, length):
    side = 2 * math.pi * radius * length
    caps = 4 * math.pi * radius**2
    on_side = rng.random(n) < side / (side + caps)
    t = rng.random(n) * length
    phi = rng.random(n) * 2 * math.pi
    cap = _sample_sphere(rng, n, radius)
    # A cap direction pointing backwards belongs to the start cap.
    cap[:, 0] += np.where(cap[:, 0] < 0, 0.0, length)
    side_points = np.stack([t, radius * np.cos(phi), radius * np.sin(phi)], axis=1)
    return np.where(on_side[:, None], side_points, cap)


def sample_primitive(geometry, n, rng):
    """Area-uniform samples on a primitive's surface, in the link frame."""
    if isinstance(geometry, handspec.Sphere):
        local = _sample_sphere(rng, n, geometry.radius)
    elif isinstance(geometry, handspec.Box):
        local = _sample_box(rng, n, geometry.extents)
    elif isinstance(geometry, handspec.Capsule):
        local = _sample_capsule(rng, n, geometry.radius, geometry.length)
    else:
        raise ValidationError(f"unsupported geometry {geometry!r}")
    return local + np.asarray(geometry.xyz)


def sample_surface(posed, density, seed, source=None):
    if not density > 0:
        raise ValidationError("density must be positive", path="density")
    rng = np.random.default_rng(seed)
    points, semantics = [], []
    for link in posed:
        count = max(1, int(round(link.geometry.area() * density)))
        local = sample_primitive(link.geometry, count, rng)
        points.append(local @ link.pose[:3, :3].T + link.pose[:3, 3])
        semantics.append(np.tile(np.asarray(link.semantic, dtype=np.int32), (count, 1)))
    if not points:
        raise ValidationError("zero total points")
    return SurfaceCloud(
        np.concatenate(points),
        np.concatenate(semantics),
        embodiment_id=posed.embodiment_id,
        source=source,
    )


def grid_subsample(points, semantics, voxel):
    """Voxel-barycenter subsampling.

    Inputs are first put in lexicographic (x, y, z, u, v) order, so both the
    barycenter sums and the nearest-member tie-break are independent of the
    caller's point order. Outputs are ordered by voxel key.
    """
    if not voxel > 0:
        raise ValidationError("voxel must be positive", path="voxel")
    points = np.asarray(points, dtype=np.float64)
    semantics = np.asarray(semantics, dtype=np.int32)
    _check_finite(points, "points")
    if len(points) == 0:
        return points.reshape(0, 3), semantics.reshape(0, 2)

    order = np.lexsort(
        (semantics[:, 1], semantics[:, 0], points[:, 2], points[:, 1], points[:, 0])
    )
    points, semantics = points[order], semantics[order]
    keys = np.floor(points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)

    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, points)
    barycenters = sums / counts[:, None]

    dist = np.sum((points - barycenters[inverse]) ** 2, axis=1)
    ranked = np.lexsort((np.arange(len(points)), dist, inverse))
    first = np.ones(len(ranked), dtype=bool)
    first[1:] = inverse[ranked][1:] != inverse[ranked][:-1]
    return barycenters, semantics[ranked[first]].copy()


def radius_neighbors(queries, supports, r):
    """Exact radius search: supports with ‖q - s‖ <= r, ascending by index."""
    if not r > 0:
        raise ValidationError("radius must be positive", path="r")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    supports = np.asarray(supports, dtype=np.float64).reshape(-1, 3)
    indptr = np.zeros(len(queries) + 1, dtype=np.int64)
    if len(supports) == 0 or len(queries) == 0:
        return NeighborList(indptr, np.zeros(0, dtype=np.int64), r)

    tree = cKDTree(supports)
    # Widen the tree query slightly, then apply the exact test ourselves.
    candidates = tree.query_ball_point(queries, r * (1 + 1e-9), return_sorted=True)
    lists = []
    for query, cand in zip(queries, candidates):
        cand = np.asarray(cand, dtype=np.int64)
        if len(cand):
            cand = cand[np.linalg.norm(supports[cand] - query, axis=1) <= r]
        lists.append(np.sort(cand))
    indptr[1:] = np.cumsum([len(c) for c in lists])
    return NeighborList(indptr, np.concatenate(lists).astype(np.int64), r)


def build_pyramid(
    cloud, base_voxel=DEFAULT_BASE_VOXEL, radius_scale=DEFAULT_RADIUS_SCALE
):
    if not base_voxel > 0:
        raise ValidationError("base_voxel must be positive", path="base_voxel")
    if not radius_scale > 0:
        raise ValidationError("radius_scale must be positive", path="radius_scale")

    sizes = [len(cloud)]
    p1, s1 = grid_subsample(cloud.points, cloud.semantics, base_voxel)
    sizes.append(len(p1))
    pm, sm = grid_subsample(p1, s1, 2 * base_voxel)
    sizes.append(len(pm))
    p2, s2 = grid_subsample(pm, sm, 4 * base_voxel)
    sizes.append(len(p2))
    for level in (1, 2, 3):
        if sizes[level] >= sizes[level - 1] or sizes[level] < _STAGE_MINIMUM[level]:
            raise DegeneratePyramid(level)

    fine = radius_scale * base_voxel
    coarse = radius_scale * 4 * base_voxel
    return MultiScaleCloud(
        level0=cloud,
        level1=Level(p1, s1),
        level2=Level(p2, s2),
        neighbors01=radius_neighbors(p1, cloud.points, fine),
        neighbors11=radius_neighbors(p1, p1, fine),
        neighbors12=radius_neighbors(p2, p1, coarse),
        neighbors22=radius_neighbors(p2, p2, coarse),
        base_voxel=base_voxel,
        radius_scale=radius_scale,
    )


def state_seed(embodiment_id, angles):
    """Sampling seed derived from a joint state, stable across processes."""
    digest = hashlib.sha256(embodiment_id.encode("utf-8"))
    digest.update(np.asarray(angles, dtype="<f8").tobytes())
    return int.from_bytes(digest.digest()[:8], "little")


def cache_key(spec, q, params):
    digest = hashlib.sha256(spec.document.encode("utf-8"))
    digest.update(np.asarray(q.angles, dtype="<f8").tobytes())
    digest.update(struct.pack("<dd", params.density, params.base_voxel))
    return digest.hexdigest()


def encode_cloud(cloud):
    """GALRPC1 bytes: magic, N, N x 3 float64 coordinates, N x 2 int32 semantics."""
    return b"".join(
        [
            CLOUD_MAGIC,
            struct.pack("<Q", len(cloud)),
            np.ascontiguousarray(cloud.points, dtype="<f8").tobytes(),
            np.ascontiguousarray(cloud.semantics, dtype="<i4").tobytes(),
        ]
    )


def decode_cloud(data, embodiment_id="", source=None):
    if data[: len(CLOUD_MAGIC)] != CLOUD_MAGIC:
        raise ValidationError("not a GALRPC1 cloud file")
    offset = len(CLOUD_MAGIC)
    if len(data) < offset + 8:
        raise ValidationError("truncated GALRPC1 cloud file")
    (count,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    if len(data) != offset + count * (24 + 8):
        raise ValidationError("truncated GALRPC1 cloud file")
    points = np.frombuffer(data, dtype="<f8", count=count * 3, offset=offset)
    offset += count * 24
    semantics = np.frombuffer(data, dtype="<i4", count=count * 2, offset=offset)
    return SurfaceCloud(
        points.reshape(count, 3).astype(np.float64),
        semantics.reshape(count, 2).astype(np.int32),
        embodiment_id=embodiment_id,
        source=source,
    )


class CloudCache:
    """Level-0 clouds keyed by (spec, state, density, voxel) in an artifact store."""

    def __init__(self, store):
        self.store = store

    def _name(self, key):
        return f"clouds/{key[:2]}/{key}.galrpc"

    def get(self, key, embodiment_id="", source=None):
        name = self._name(key)
        if not self.store.exists(name):
            return None
        try:
            cloud = decode_cloud(self.store.read_bytes(name), embodiment_id, source)
        except ValidationError as err:
            log.warning("Ignoring unreadable cache entry %s: %s", name, err)
            return None
        log.debug("Cloud cache hit %s", key)
        return cloud

    def put(self, key, cloud):
        self.store.write_bytes(self._name(key), encode_cloud(cloud))


def cloud_for_state(spec, q, params, cache=None):
    """FK and surface sampling for one state, through the cache when given."""
    key = cache_key(spec, q, params) if cache is not None else None
    if cache is not None:
        cloud = cache.get(key, spec.embodiment_id, q)
        if cloud is not None:
            return cloud
    posed = handspec.forward_kinematics(spec, q)
    cloud = sample_surface(
        posed, params.density, state_seed(spec.embodiment_id, q.angles), source=q
    )
    if cache is not None:
        cache.put(key, cloud)
    return cloud


def pyramid_for_state(spec, q, params, cache=None):
    cloud = cloud_for_state(spec, q, params, cache)
    return build_pyramid(cloud, params.base_voxel, params.radius_scale)
