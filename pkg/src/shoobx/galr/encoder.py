###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Gesture Encoder

Kernel point convolutions over the three-level pyramid, followed by a
transformer over the coarsest level (superpoints) that sees coordinate and
semantic positional embeddings, then mean pooling and a linear head.
"""
import dataclasses
import functools
import logging
import math
from typing import Tuple

import numpy as np

from shoobx.galr import diffcore
from shoobx.galr.errors import CheckpointError, ShapeError, ValidationError

log = logging.getLogger("shoobx.galr.encoder")

KERNEL_SHELL = 0.66
SEMANTIC_CLASSES = 6


@dataclasses.dataclass(frozen=True)
class EncoderConfig:
    widths: Tuple[int, int, int] = (32, 64, 128)
    d_t: int = 128
    layers: int = 2
    heads: int = 4
    d_latent: int = 64
    kernel_count: int = 13
    sigma_ratio: float = 1.5
    ffn_ratio: int = 2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValidationError(
                "three positive channel widths required", path="widths"
            )
        if self.heads < 1 or self.d_t % self.heads:
            raise ValidationError("d_t must be divisible by heads", path="heads")
        if self.kernel_count not in (1, 7, 13):
            raise ValidationError(
                "kernel count must be 1, 7 or 13", path="kernel_count"
            )
        if not self.sigma_ratio > 0:
            raise ValidationError("sigma ratio must be positive", path="sigma_ratio")

    @property
    def head_width(self):
        return self.d_t // self.heads

    def to_json(self):
        data = dataclasses.asdict(self)
        data["widths"] = list(self.widths)
        return data

    @classmethod
    def from_json(cls, data):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValidationError(f"unknown encoder options {sorted(unknown)}")
        return cls(**data)


TINY = EncoderConfig(
    widths=(4, 6, 8), d_t=8, layers=1, heads=2, d_latent=6, kernel_count=7
)


@dataclasses.dataclass(frozen=True)
class KernelDisposition:
    kernel_points: np.ndarray
    radius: float

    @property
    def K(self):
        return len(self.kernel_points)


@dataclasses.dataclass(frozen=True)
class KPConvLayer:
    prefix: str
    d_in: int
    d_out: int
    disposition: KernelDisposition
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive", path=f"{self.prefix}.sigma")

    def weight_names(self):
        return [f"{self.prefix}.W{k}" for k in range(self.disposition.K)]


@dataclasses.dataclass(frozen=True)
class GaLRVector:
    z: np.ndarray
    producer: str = ""

    def __len__(self):
        return len(self.z)


def _icosahedron():
    phi = (1 + math.sqrt(5)) / 2
    vertices = []
    for a in (-1, 1):
        for b in (-phi, phi):
            vertices.extend([(0, a, b), (a, b, 0), (b, 0, a)])
    vertices = np.array(vertices, dtype=np.float64)
    return vertices / np.linalg.norm(vertices, axis=1, keepdims=True)


_OCTAHEDRON = np.array(
    [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)],
    dtype=np.float64,
)


@functools.lru_cache(maxsize=64)
def make_disposition(K, r):
    """Fixed kernel points: the origin plus a regular polyhedron at 0.66 r."""
    if not r > 0:
        raise ValidationError("kernel radius must be positive", path="r")
    if K == 1:
        shell = np.zeros((0, 3))
    elif K == 7:
        shell = _OCTAHEDRON
    elif K == 13:
        shell = _icosahedron()
    else:
        raise ValidationError(f"unsupported kernel count {K}", path="K")
    points = np.vstack([np.zeros((1, 3)), KERNEL_SHELL * r * shell])
    points.setflags(write=False)
    return KernelDisposition(points, float(r))


def correlation(y, kernel_point, sigma):
    """Linear influence of a kernel point, truncated at `sigma`."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive", path="sigma")
    distance = np.linalg.norm(np.asarray(y, dtype=np.float64) - kernel_point)
    return max(0.0, 1.0 - distance / sigma)


def correlations(offsets, disposition, sigma):
    """Influence matrix (pairs x K) for relative support offsets."""
    diff = offsets[:, None, :] - disposition.kernel_points[None, :, :]
    return np.maximum(0.0, 1.0 - np.linalg.norm(diff, axis=2) / sigma)


def kpconv_forward(tape, layer, queries, supports, features, neighbors):
    """g(x) = sum over neighbors i and kernels k of h(x_i - x, k) W_k f_i."""
    if features.value.ndim != 2 or features.shape[1] != layer.d_in:
        raise ShapeError(layer.prefix, features.shape, (len(supports), layer.d_in))
    if features.shape[0] != len(supports):
        raise ShapeError(layer.prefix, features.shape, (len(supports), layer.d_in))
    query_idx, support_idx = neighbors.pairs()
    offsets = supports[support_idx] - queries[query_idx]
    h = correlations(offsets, layer.disposition, layer.sigma)
    gathered = tape.gather_rows(features, support_idx)
    out = None
    for k, name in enumerate(layer.weight_names()):
        term = tape.scale(tape.matmul(gathered, tape.param(name)), h[:, k : k + 1])
        term = tape.segment_sum(term, query_idx, len(queries))
        out = term if out is None else tape.add(out, term)
    return out


def _check_semantics(semantics):
    semantics = np.asarray(semantics)
    if semantics.size and (
        semantics[..., 0].min() < 0 or semantics[..., 0].max() >= SEMANTIC_CLASSES
    ):
        raise ValidationError("semantic u index out of range [0, 5]", path="u")
    if semantics.size and semantics[..., 1].min() < 0:
        raise ValidationError("semantic v index must be non-negative", path="v")
    return semantics


def semantic_embedding(s, W_S):
    """r^s = (u, v) W_S, shared by every embodiment."""
    s = _check_semantics(s)
    return np.asarray(s, dtype=np.float64) @ W_S


def coord_embedding(p, coord_proj):
    return np.asarray(p, dtype=np.float64) @ coord_proj


def parameter_shapes(config):
    """Ordered parameter name -> shape for an encoder configuration."""
    w0, w1, w2 = config.widths
    shapes = {}
    for prefix, d_in, d_out in (
        ("conv0", 1, w0),
        ("conv1", w0, w1),
        ("conv2", w1, w2),
        ("conv3", w2, w2),
    ):
        for k in range(config.kernel_count):
            shapes[f"{prefix}.W{k}"] = (d_in, d_out)
    d_t, dh = config.d_t, config.head_width
    shapes["embed.W"] = (w2, d_t)
    shapes["embed.b"] = (1, d_t)
    shapes["pos.W_S"] = (2, d_t)
    shapes["pos.coord"] = (3, d_t)
    for layer in range(config.layers):
        tag = f"tf{layer}"
        for head in range(config.heads):
            for part in ("Wq", "Wk", "Wv"):
                shapes[f"{tag}.h{head}.{part}"] = (d_t, dh)
        shapes[f"{tag}.out.W"] = (d_t, d_t)
        shapes[f"{tag}.out.b"] = (1, d_t)
        shapes[f"{tag}.ln1.g"] = (1, d_t)
        shapes[f"{tag}.ln1.b"] = (1, d_t)
        shapes[f"{tag}.ffn0.W"] = (d_t, config.ffn_ratio * d_t)
        shapes[f"{tag}.ffn0.b"] = (1, config.ffn_ratio * d_t)
        shapes[f"{tag}.ffn1.W"] = (config.ffn_ratio * d_t, d_t)
        shapes[f"{tag}.ffn1.b"] = (1, d_t)
        shapes[f"{tag}.ln2.g"] = (1, d_t)
        shapes[f"{tag}.ln2.b"] = (1, d_t)
    shapes["head.W"] = (d_t, config.d_latent)
    shapes["head.b"] = (1, config.d_latent)
    return shapes


def init_params(shapes, rng, params=None):
    """Glorot weights, zero biases, unit layer-norm gains."""
    params = diffcore.ParameterSet() if params is None else params
    for name, shape in shapes.items():
        if name.endswith(".g"):
            params.ones(name, shape)
        elif name.endswith(".b"):
            params.zeros(name, shape)
        else:
            params.glorot(name, shape, rng)
    return params


def init_encoder_params(config, seed=0, params=None):
    return init_params(parameter_shapes(config), np.random.default_rng(seed), params)


def check_params(params, shapes):
    for name, shape in shapes.items():
        if name not in params:
            raise CheckpointError(f"missing parameter {name}")
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(
                f"parameter {name} has shape {tuple(params[name].shape)}, "
                f"expected {tuple(shape)}"
            )


def conv_layers(config, pyramid):
    """The four convolutions with kernel radius equal to each neighbor radius."""
    w0, w1, w2 = config.widths
    layers = []
    for prefix, d_in, d_out, radius in zip(
        ("conv0", "conv1", "conv2", "conv3"),
        (1, w0, w1, w2),
        (w0, w1, w2, w2),
        pyramid.radii,
    ):
        layers.append(
            KPConvLayer(
                prefix,
                d_in,
                d_out,
                make_disposition(config.kernel_count, float(radius)),
                radius / config.sigma_ratio,
            )
        )
    return layers


def _attention_layer(tape, config, tag, features, positions):
    mixed = tape.add(features, positions)
    heads = []
    for head in range(config.heads):
        q = tape.matmul(mixed, tape.param(f"{tag}.h{head}.Wq"))
        k = tape.matmul(mixed, tape.param(f"{tag}.h{head}.Wk"))
        v = tape.matmul(features, tape.param(f"{tag}.h{head}.Wv"))
        scores = tape.scale(
            tape.matmul(q, tape.transpose(k)), 1.0 / math.sqrt(config.head_width)
        )
        heads.append(tape.matmul(tape.softmax(scores), v))
    attended = tape.linear(tape.concat(heads, axis=1), f"{tag}.out")
    x = tape.layer_norm(
        tape.add(features, attended),
        tape.param(f"{tag}.ln1.g"),
        tape.param(f"{tag}.ln1.b"),
    )
    hidden = tape.linear(tape.linear(x, f"{tag}.ffn0", "relu"), f"{tag}.ffn1")
    return tape.layer_norm(
        tape.add(x, hidden), tape.param(f"{tag}.ln2.g"), tape.param(f"{tag}.ln2.b")
    )


def positional_tensor(tape, level):
    """r^p + r^s for every superpoint of `level`."""
    semantics = _check_semantics(level.semantics)
    return tape.add(
        tape.matmul(tape.constant(level.points), tape.param("pos.coord")),
        tape.matmul(tape.constant(semantics), tape.param("pos.W_S")),
    )


def encode_tensor(tape, pyramid, config):
    """Differentiable encoder forward pass; returns a (1, d_latent) tensor."""
    level0, level1, level2 = pyramid.level0, pyramid.level1, pyramid.level2
    conv0, conv1, conv2, conv3 = conv_layers(config, pyramid)

    f = tape.constant(np.ones((len(level0), 1)))
    stages = (
        (conv0, level1, level0, pyramid.neighbors01),
        (conv1, level1, level1, pyramid.neighbors11),
        (conv2, level2, level1, pyramid.neighbors12),
        (conv3, level2, level2, pyramid.neighbors22),
    )
    for conv, queries, supports, neighbors in stages:
        f = tape.relu(
            kpconv_forward(tape, conv, queries.points, supports.points, f, neighbors)
        )

    f = tape.linear(f, "embed")
    positions = positional_tensor(tape, level2)
    for layer in range(config.layers):
        f = _attention_layer(tape, config, f"tf{layer}", f, positions)
    return tape.linear(tape.mean_rows(f), "head")


def encode(pyramid, params, config, producer=""):
    check_params(params, parameter_shapes(config))
    tape = diffcore.Tape(params)
    z = encode_tensor(tape, pyramid, config).value.reshape(-1)
    return GaLRVector(z, producer)
