###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Embodiment Descriptions and Forward Kinematics

A hand spec is a kinematic tree of revolute joints and primitive-shaped
links. Every joint names the slot it occupies in the universal joint
registry, which is what lets one decoder serve every embodiment.
"""
import dataclasses
import hashlib
import importlib.resources
import json
import logging
import math
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from shoobx.galr.errors import RegistryMismatch, ValidationError

log = logging.getLogger("shoobx.galr.handspec")

REGISTRY_VERSION = "galr-h24-v1"

FINGERS = ("thumb", "index", "middle", "ring", "little")
FINGER_JOINTS = ("yaw", "base_flex", "mid_flex", "tip_flex")

UNIT_TOLERANCE = 1e-9
BUNDLED_SPECS = ("planar2f", "planar3f", "toy4f", "toy5f", "toy5f-wide")


@dataclasses.dataclass(frozen=True)
class UniversalJointRegistry:
    version: str
    entries: Tuple[str, ...]

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ValidationError("registry names must be unique", path="entries")

    @property
    def size(self):
        return len(self.entries)

    def index(self, name):
        return self.entries.index(name)


def _default_registry():
    names = [f"{finger}_{joint}" for finger in FINGERS for joint in FINGER_JOINTS]
    names.extend(f"palm_aux_{idx}" for idx in range(4))
    return UniversalJointRegistry(REGISTRY_VERSION, tuple(names))


REGISTRY = _default_registry()
REGISTRIES = {REGISTRY.version: REGISTRY}


def get_registry(version):
    return REGISTRIES.get(version)


# Link geometry primitives. Dimensions in meters, placed in the link frame.


@dataclasses.dataclass(frozen=True)
class Capsule:
    radius: float
    length: float
    xyz: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    type = "capsule"

    def area(self):
        return 2 * math.pi * self.radius * self.length + 4 * math.pi * self.radius**2

    def tip(self):
        return np.array(self.xyz) + np.array([self.length, 0.0, 0.0])


@dataclasses.dataclass(frozen=True)
class Box:
    extents: Tuple[float, float, float]
    xyz: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    type = "box"

    def area(self):
        a, b, c = self.extents
        return 2 * (a * b + b * c + c * a)

    def tip(self):
        return np.array(self.xyz, dtype=float)


@dataclasses.dataclass(frozen=True)
class Sphere:
    radius: float
    xyz: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    type = "sphere"

    def area(self):
        return 4 * math.pi * self.radius**2

    def tip(self):
        return np.array(self.xyz, dtype=float)


Geometry = Union[Capsule, Box, Sphere]


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def transform(rotation=None, translation=None):
    """Homogeneous 4x4 transform from a 3x3 rotation and a translation."""
    mat = np.eye(4)
    if rotation is not None:
        mat[:3, :3] = rotation
    if translation is not None:
        mat[:3, 3] = translation
    return mat


def planar_pose(x, y, yaw):
    """Wrist transform for a pose in the table plane."""
    rot = Rotation.from_euler("z", yaw).as_matrix()
    return transform(rot, (x, y, 0.0))


def axis_rotation(axis, angle):
    return Rotation.from_rotvec(np.asarray(axis, dtype=float) * angle).as_matrix()


@dataclasses.dataclass(frozen=True)
class JointDescriptor:
    name: str
    universal_id: int
    parent_link: str
    axis: Tuple[float, float, float]
    xyz: Tuple[float, float, float]
    quat_wxyz: Tuple[float, float, float, float]
    limits: Tuple[float, float]

    @property
    def lo(self):
        return self.limits[0]

    @property
    def hi(self):
        return self.limits[1]

    @property
    def origin(self):
        w, x, y, z = self.quat_wxyz
        rot = Rotation.from_quat([x, y, z, w]).as_matrix()
        return transform(rot, self.xyz)


@dataclasses.dataclass(frozen=True)
class LinkDescriptor:
    name: str
    parent_joint: Optional[str]
    geometry: Geometry
    semantic: Tuple[int, int]


@dataclasses.dataclass(frozen=True)
class JointVector:
    embodiment_id: str
    angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angles", _frozen(self.angles))

    def __len__(self):
        return len(self.angles)

    def to_json(self):
        return {"embodiment_id": self.embodiment_id, "angles": self.angles.tolist()}

    @classmethod
    def from_json(cls, data):
        try:
            return cls(data["embodiment_id"], data["angles"])
        except (KeyError, TypeError) as err:
            raise ValidationError(f"bad pose document: {err}")


@dataclasses.dataclass(frozen=True)
class PosedLink:
    name: str
    pose: np.ndarray
    geometry: Geometry
    semantic: Tuple[int, int]


@dataclasses.dataclass(frozen=True)
class PosedLinks:
    embodiment_id: str
    links: Tuple[PosedLink, ...]

    def __getitem__(self, name):
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    def __iter__(self):
        return iter(self.links)

    def __len__(self):
        return len(self.links)


@dataclasses.dataclass(frozen=True)
class HandSpec:
    embodiment_id: str
    registry_version: str
    root_link: str
    joints: Tuple[JointDescriptor, ...]
    links: Tuple[LinkDescriptor, ...]
    document: str = dataclasses.field(default="", compare=False, repr=False)

    def __post_init__(self):
        order, children = _validate_tree(self)
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_lo", _frozen([j.lo for j in self.joints]))
        object.__setattr__(self, "_hi", _frozen([j.hi for j in self.joints]))

    @property
    def dof(self):
        return len(self.joints)

    @property
    def lo(self):
        return self._lo

    @property
    def hi(self):
        return self._hi

    @property
    def universal_ids(self):
        return tuple(joint.universal_id for joint in self.joints)

    @property
    def digest(self):
        return hashlib.sha256(self.document.encode("utf-8")).hexdigest()

    def joint_vector(self, angles):
        """Validated joint vector; out-of-limit angles are an error."""
        angles = np.asarray(angles, dtype=np.float64)
        if angles.shape != (self.dof,):
            raise ValidationError(
                f"expected {self.dof} angles, got shape {angles.shape}",
                path=self.embodiment_id,
            )
        self.check_limits(angles)
        return JointVector(self.embodiment_id, angles)

    def check_limits(self, angles):
        for joint, value in zip(self.joints, angles):
            if not math.isfinite(value) or not joint.lo <= value <= joint.hi:
                raise ValidationError(
                    f"angle {value!r} outside limits [{joint.lo}, {joint.hi}]",
                    path=f"{self.embodiment_id}.{joint.name}",
                )

    def normalize(self, angles):
        """Map radians into [-1, 1] by joint limits."""
        return 2.0 * (np.asarray(angles) - self._lo) / (self._hi - self._lo) - 1.0

    def denormalize(self, values):
        return self._lo + (np.asarray(values) + 1.0) / 2.0 * (self._hi - self._lo)

    def fingertips(self, posed):
        """World-frame tips of leaf finger links."""
        tips = []
        for link in self.links:
            if link.semantic[0] == 0 or self._children.get(link.name):
                continue
            pose = posed[link.name].pose
            tips.append(pose[:3, :3] @ link.geometry.tip() + pose[:3, 3])
        return np.array(tips)


def _validate_tree(spec):
    links = {}
    for idx, link in enumerate(spec.links):
        if link.name in links:
            raise ValidationError("duplicate link name", path=f"links[{idx}].name")
        links[link.name] = link
    if spec.root_link not in links:
        raise ValidationError("unknown root link", path="root_link")

    joints = {}
    seen_ids = set()
    for idx, joint in enumerate(spec.joints):
        if joint.name in joints:
            raise ValidationError("duplicate joint name", path=f"joints[{idx}].name")
        if joint.universal_id in seen_ids:
            raise ValidationError(
                "duplicate universal_id", path=f"joints[{idx}].universal_id"
            )
        if joint.parent_link not in links:
            raise ValidationError(
                "unknown parent link", path=f"joints[{idx}].parent_link"
            )
        seen_ids.add(joint.universal_id)
        joints[joint.name] = idx

    child_of = {}
    for idx, link in enumerate(spec.links):
        if link.parent_joint is None:
            if link.name != spec.root_link:
                raise ValidationError(
                    "only the root link may lack a parent joint",
                    path=f"links[{idx}].parent_joint",
                )
            continue
        if link.name == spec.root_link:
            raise ValidationError(
                "root link must not have a parent joint",
                path=f"links[{idx}].parent_joint",
            )
        if link.parent_joint not in joints:
            raise ValidationError(
                "unknown parent joint", path=f"links[{idx}].parent_joint"
            )
        if link.parent_joint in child_of:
            raise ValidationError(
                "joint drives more than one link", path=f"links[{idx}].parent_joint"
            )
        child_of[link.parent_joint] = link.name
    for idx, joint in enumerate(spec.joints):
        if joint.name not in child_of:
            raise ValidationError("joint has no child link", path=f"joints[{idx}]")

    children = {name: [] for name in links}
    for joint in spec.joints:
        children[joint.parent_link].append(joint.name)

    # Depth-first with an explicit on-path set so cycles are caught even when
    # they are disconnected from the root.
    state = {}

    def visit(link_name):
        state[link_name] = "open"
        for joint_name in children[link_name]:
            child = child_of[joint_name]
            if state.get(child) == "open":
                raise ValidationError("cyclic kinematic graph", path="links")
            if child not in state:
                visit(child)
        state[link_name] = "done"

    for name in links:
        if name not in state:
            visit(name)

    order = []
    reached = {spec.root_link}
    frontier = [spec.root_link]
    while frontier:
        link_name = frontier.pop(0)
        for joint_name in children[link_name]:
            order.append(joints[joint_name])
            reached.add(child_of[joint_name])
            frontier.append(child_of[joint_name])
    for idx, link in enumerate(spec.links):
        if link.name not in reached:
            raise ValidationError("link not reachable from root", path=f"links[{idx}]")

    return tuple(order), {name: tuple(js) for name, js in children.items()}


def _number_list(value, length, path):
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ValidationError(f"expected a list of {length} numbers", path=path)
    try:
        numbers = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError("expected numbers", path=path)
    if not all(math.isfinite(v) for v in numbers):
        raise ValidationError("values must be finite", path=path)
    return numbers


def _require(data, key, path):
    if not isinstance(data, dict) or key not in data:
        raise ValidationError("missing field", path=f"{path}.{key}" if path else key)
    return data[key]


def _number(data, key, path):
    return _number_list([_require(data, key, path)], 1, f"{path}.{key}")[0]


def _parse_geometry(data, path):
    kind = _require(data, "type", path)
    xyz = _number_list(data.get("xyz", [0, 0, 0]), 3, f"{path}.xyz")
    if kind == "capsule":
        dims = (_number(data, "radius", path), _number(data, "length", path))
        geometry = Capsule(dims[0], dims[1], xyz)
    elif kind == "box":
        dims = _number_list(_require(data, "extents", path), 3, f"{path}.extents")
        geometry = Box(dims, xyz)
    elif kind == "sphere":
        dims = (_number(data, "radius", path),)
        geometry = Sphere(dims[0], xyz)
    else:
        raise ValidationError(f"unknown geometry type {kind!r}", path=f"{path}.type")
    if not all(math.isfinite(d) and d > 0 for d in dims):
        raise ValidationError("geometry dimensions must be positive", path=path)
    return geometry


def _parse_joint(data, idx, registry_size):
    path = f"joints[{idx}]"
    axis = _number_list(_require(data, "axis", path), 3, f"{path}.axis")
    if abs(math.sqrt(sum(a * a for a in axis)) - 1.0) > UNIT_TOLERANCE:
        raise ValidationError("non-unit axis", path=f"{path}.axis")
    origin = data.get("origin", {})
    xyz = _number_list(origin.get("xyz", [0, 0, 0]), 3, f"{path}.origin.xyz")
    quat = _number_list(
        origin.get("quat_wxyz", [1, 0, 0, 0]), 4, f"{path}.origin.quat_wxyz"
    )
    if abs(math.sqrt(sum(v * v for v in quat)) - 1.0) > UNIT_TOLERANCE:
        raise ValidationError("non-unit quaternion", path=f"{path}.origin.quat_wxyz")
    limits = _number_list(_require(data, "limits", path), 2, f"{path}.limits")
    if not limits[0] < limits[1]:
        raise ValidationError("limits with lo >= hi", path=f"{path}.limits")
    universal_id = _require(data, "universal_id", path)
    if not isinstance(universal_id, int) or not 0 <= universal_id < registry_size:
        raise ValidationError(
            "universal_id outside the registry", path=f"{path}.universal_id"
        )
    return JointDescriptor(
        name=str(_require(data, "name", path)),
        universal_id=universal_id,
        parent_link=str(_require(data, "parent_link", path)),
        axis=axis,
        xyz=xyz,
        quat_wxyz=quat,
        limits=limits,
    )


def _parse_link(data, idx):
    path = f"links[{idx}]"
    semantic = _require(data, "semantic", path)
    if (
        not isinstance(semantic, (list, tuple))
        or len(semantic) != 2
        or not all(isinstance(s, int) and s >= 0 for s in semantic)
    ):
        raise ValidationError(
            "semantic must be two non-negative integers", path=f"{path}.semantic"
        )
    if semantic[0] > 5:
        raise ValidationError("finger index above 5", path=f"{path}.semantic")
    parent_joint = data.get("parent_joint")
    return LinkDescriptor(
        name=str(_require(data, "name", path)),
        parent_joint=None if parent_joint is None else str(parent_joint),
        geometry=_parse_geometry(_require(data, "geometry", path), f"{path}.geometry"),
        semantic=(semantic[0], semantic[1]),
    )


def parse_hand_spec(document):
    """Parse and validate a hand-spec JSON document (string)."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as err:
        raise ValidationError(f"parse error: {err}")
    if not isinstance(data, dict):
        raise ValidationError("parse error: top level must be an object")
    version = str(_require(data, "registry_version", ""))
    registry = get_registry(version)
    if registry is None:
        raise RegistryMismatch(REGISTRY_VERSION, version, stage="registry")
    joints = _require(data, "joints", "")
    links = _require(data, "links", "")
    if not isinstance(joints, list) or not isinstance(links, list):
        raise ValidationError("joints and links must be arrays")
    spec = HandSpec(
        embodiment_id=str(_require(data, "embodiment_id", "")),
        registry_version=version,
        root_link=str(_require(data, "root_link", "")),
        joints=tuple(
            _parse_joint(j, idx, registry.size) for idx, j in enumerate(joints)
        ),
        links=tuple(_parse_link(link, idx) for idx, link in enumerate(links)),
        document=json.dumps(data, sort_keys=True),
    )
    if "dof" in data and data["dof"] != spec.dof:
        raise ValidationError("dof does not match the joint count", path="dof")
    return spec


def load_hand_spec(path):
    with open(path, encoding="utf-8") as file:
        document = file.read()
    spec = parse_hand_spec(document)
    log.debug(
        "Loaded hand spec %s (%d dof) from %s", spec.embodiment_id, spec.dof, path
    )
    return spec


def bundled_spec_path(name):
    if not name.endswith(".hand.json"):
        name = f"{name}.hand.json"
    return importlib.resources.files("shoobx.galr") / "hands" / name


def load_bundled(name):
    return parse_hand_spec(bundled_spec_path(name).read_text(encoding="utf-8"))


def forward_kinematics(spec, q, wrist=None):
    """Pose every link of `spec` for joint vector `q`.

    Each joint contributes its fixed origin followed by a rotation of the
    joint angle about its axis; the root link sits at `wrist` (identity by
    default).
    """
    if q.embodiment_id != spec.embodiment_id:
        raise ValidationError(
            f"embodiment mismatch: {q.embodiment_id!r} vs {spec.embodiment_id!r}"
        )
    if len(q) != spec.dof:
        raise ValidationError(f"expected {spec.dof} angles, got {len(q)}")
    spec.check_limits(q.angles)

    frames = {spec.root_link: np.eye(4) if wrist is None else np.asarray(wrist)}
    child_of = {link.parent_joint: link.name for link in spec.links}
    for idx in spec._order:
        joint = spec.joints[idx]
        motion = transform(axis_rotation(joint.axis, q.angles[idx]))
        frames[child_of[joint.name]] = frames[joint.parent_link] @ joint.origin @ motion

    return PosedLinks(
        spec.embodiment_id,
        tuple(
            PosedLink(
                link.name, _frozen(frames[link.name]), link.geometry, link.semantic
            )
            for link in spec.links
        ),
    )


def clamp_to_limits(spec, raw):
    """Clamp raw angles into limits; returns the joint vector and clamp flags."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (spec.dof,):
        raise ValidationError(f"expected {spec.dof} values, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        bad = [spec.joints[i].name for i in np.flatnonzero(~np.isfinite(raw))]
        raise ValidationError(
            f"non-finite angle for {', '.join(bad)}", path=spec.embodiment_id
        )
    clamped = np.clip(raw, spec.lo, spec.hi)
    flags = [bool(c != r) for c, r in zip(clamped, raw)]
    return JointVector(spec.embodiment_id, clamped), flags
