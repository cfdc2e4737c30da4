###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Dense Tensor Core with Reverse-Mode Differentiation

Every primitive runs eagerly on numpy arrays and, when any input needs a
gradient, appends a record (output, inputs, backward closure) to its tape.
Records are appended in execution order, so walking them backwards is a
reverse topological traversal. Reductions use `np.add.at`, which
accumulates in ascending index order.
"""
import collections.abc
import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import math
import struct
import zlib
from typing import Dict, Tuple

import numpy as np

from shoobx.galr.errors import (
    CheckpointError,
    NonFiniteError,
    ShapeError,
    TapeError,
    ValidationError,
)

log = logging.getLogger("shoobx.galr.diffcore")

CHECKPOINT_MAGIC = b"GALRCK1"

PRECISIONS = {"float64": np.float64, "float32": np.float32}


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape}>"


class ParameterSet(collections.abc.MutableMapping):
    """Ordered name -> float64 array mapping of trainable parameters."""

    def __init__(self, arrays=None):
        self._arrays = {}
        for name, value in (arrays or {}).items():
            self[name] = value

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        self._arrays[name] = np.array(value, dtype=np.float64)

    def __delitem__(self, name):
        del self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def copy(self):
        return ParameterSet({name: arr.copy() for name, arr in self._arrays.items()})

    def as_float32(self):
        """Copy with every value rounded through float32, as checkpoints store it."""
        return ParameterSet(
            {
                name: arr.astype(np.float32).astype(np.float64)
                for name, arr in self.items()
            }
        )

    def glorot(self, name, shape, rng):
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        self[name] = rng.uniform(-limit, limit, size=shape)
        return self[name]

    def zeros(self, name, shape):
        self[name] = np.zeros(shape)
        return self[name]

    def ones(self, name, shape):
        self[name] = np.ones(shape)
        return self[name]

    @property
    def size(self):
        return sum(arr.size for arr in self._arrays.values())

    def digest(self):
        sha = hashlib.sha1()
        for name, arr in self.items():
            sha.update(name.encode("utf-8"))
            sha.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return sha.hexdigest()


def _same_shape(primitive, a, b):
    if a.shape != b.shape:
        raise ShapeError(primitive, a.shape, b.shape)


class Tape:
    """Single-threaded operation record with a parameter registry."""

    def __init__(self, params=None, dtype=np.float64):
        self.params = params if params is not None else ParameterSet()
        self.dtype = dtype
        self._records = []
        self._registered: Dict[str, Tensor] = {}
        self._done = False

    # Leaves

    def param(self, name):
        tensor = self._registered.get(name)
        if tensor is None:
            if name not in self.params:
                raise ValidationError(f"unknown parameter {name!r}")
            tensor = Tensor(
                np.array(self.params[name], dtype=self.dtype),
                requires_grad=True,
                name=name,
            )
            self._registered[name] = tensor
        return tensor

    def constant(self, value):
        return Tensor(np.array(value, dtype=self.dtype))

    @property
    def registered(self):
        return dict(self._registered)

    def _record(self, primitive, value, inputs, backward):
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite output from {primitive}")
        out = Tensor(value, requires_grad=any(t.requires_grad for t in inputs))
        if out.requires_grad:
            self._records.append((out, inputs, backward))
        return out

    # Primitives

    def matmul(self, a, b):
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        return self._record(
            "matmul",
            a.value @ b.value,
            (a, b),
            lambda g: (g @ b.value.T, a.value.T @ g),
        )

    def add(self, a, b):
        """Elementwise sum; `b` may also be a (1, n) row bias for an (m, n) `a`."""
        if a.shape == b.shape:
            return self._record("add", a.value + b.value, (a, b), lambda g: (g, g))
        row_bias = a.value.ndim == 2 and b.value.ndim == 2 and b.shape[0] == 1
        if row_bias and b.shape[1] == a.shape[1]:
            return self._record(
                "add",
                a.value + b.value,
                (a, b),
                lambda g: (g, g.sum(axis=0, keepdims=True)),
            )
        raise ShapeError("add", a.shape, b.shape)

    def sub(self, a, b):
        _same_shape("sub", a, b)
        return self._record("sub", a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a, b):
        _same_shape("mul", a, b)
        return self._record(
            "mul",
            a.value * b.value,
            (a, b),
            lambda g: (g * b.value, g * a.value),
        )

    def scale(self, a, factor):
        """Multiply by a constant scalar, (m, 1) column or same-shape array."""
        factor = np.asarray(factor, dtype=self.dtype)
        if factor.ndim and factor.shape != a.shape and factor.shape != (a.shape[0], 1):
            raise ShapeError("scale", a.shape, factor.shape)
        return self._record("scale", a.value * factor, (a,), lambda g: (g * factor,))

    def relu(self, a):
        mask = a.value > 0
        return self._record("relu", a.value * mask, (a,), lambda g: (g * mask,))

    def tanh(self, a):
        out = np.tanh(a.value)
        return self._record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))

    def sqrt(self, a):
        out = np.sqrt(a.value)
        return self._record("sqrt", out, (a,), lambda g: (g / (2.0 * out),))

    def softmax(self, a):
        """Row-wise softmax."""
        shifted = np.exp(a.value - a.value.max(axis=1, keepdims=True))
        out = shifted / shifted.sum(axis=1, keepdims=True)

        def backward(g):
            return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

        return self._record("softmax", out, (a,), backward)

    def layer_norm(self, a, gain, bias, eps=1e-5):
        """Row-wise normalization with a (1, n) gain and bias."""
        if gain.shape != (1, a.shape[1]) or bias.shape != (1, a.shape[1]):
            raise ShapeError("layer_norm", a.shape, gain.shape)
        centered = a.value - a.value.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
        normed = centered * inv_std

        def backward(g):
            gn = g * gain.value
            ga = inv_std * (
                gn
                - gn.mean(axis=1, keepdims=True)
                - normed * (gn * normed).mean(axis=1, keepdims=True)
            )
            return (
                ga,
                (g * normed).sum(axis=0, keepdims=True),
                g.sum(axis=0, keepdims=True),
            )

        return self._record(
            "layer_norm", normed * gain.value + bias.value, (a, gain, bias), backward
        )

    def gather_rows(self, a, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
            raise ShapeError("gather_rows", a.shape, (int(indices.max()) + 1,))

        def backward(g):
            ga = np.zeros_like(a.value)
            np.add.at(ga, indices, g)
            return (ga,)

        return self._record("gather_rows", a.value[indices], (a,), backward)

    def segment_sum(self, a, segments, count):
        """Sum rows of `a` into `count` segments; rows accumulate in index order."""
        segments = np.asarray(segments, dtype=np.int64)
        if segments.shape != (a.shape[0],):
            raise ShapeError("segment_sum", a.shape, segments.shape)
        out = np.zeros((count,) + a.shape[1:], dtype=a.value.dtype)
        np.add.at(out, segments, a.value)
        return self._record("segment_sum", out, (a,), lambda g: (g[segments],))

    def concat(self, tensors, axis=0):
        tensors = tuple(tensors)
        try:
            value = np.concatenate([t.value for t in tensors], axis=axis)
        except ValueError:
            raise ShapeError("concat", tensors[0].shape, tensors[-1].shape)
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
        return self._record(
            "concat", value, tensors, lambda g: tuple(np.split(g, bounds, axis=axis))
        )

    def mean_rows(self, a):
        rows = a.shape[0]
        return self._record(
            "mean_rows",
            a.value.mean(axis=0, keepdims=True),
            (a,),
            lambda g: (np.repeat(g / rows, rows, axis=0),),
        )

    def sum_all(self, a):
        return self._record(
            "sum_all",
            a.value.sum().reshape(1, 1),
            (a,),
            lambda g: (np.full_like(a.value, g.item()),),
        )

    def transpose(self, a):
        return self._record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))

    # Composites

    def linear(self, x, prefix, activation=None):
        out = self.add(
            self.matmul(x, self.param(f"{prefix}.W")), self.param(f"{prefix}.b")
        )
        if activation == "relu":
            return self.relu(out)
        if activation == "tanh":
            return self.tanh(out)
        return out

    def mean_square(self, a):
        return self.scale(self.sum_all(self.mul(a, a)), 1.0 / a.value.size)

    # Reverse pass

    def backward(self, loss):
        if self._done:
            raise TapeError("double backward on one tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        self._done = True
        loss.grad = np.ones_like(loss.value)
        for out, inputs, backward in reversed(self._records):
            if out.grad is None:
                continue
            for tensor, grad in zip(inputs, backward(out.grad)):
                if not tensor.requires_grad or grad is None:
                    continue
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad
        return {
            name: np.zeros_like(t.value) if t.grad is None else t.grad
            for name, t in self._registered.items()
        }


def accumulate_gradients(loss_fn, items, params, workers=1, dtype=np.float64):
    """Mean per-item gradients, one tape per item, summed in item order.

    `loss_fn(tape, item)` returns a scalar Tensor. Returns the averaged
    gradients and the list of per-item loss values.
    """

    def run(item):
        tape = Tape(params, dtype=dtype)
        loss = loss_fn(tape, item)
        return float(loss.value.item()), tape.backward(loss)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    total = {name: np.zeros_like(arr) for name, arr in params.items()}
    for _, grads in results:
        for name, grad in grads.items():
            total[name] = total[name] + grad
    count = max(len(results), 1)
    return {name: g / count for name, g in total.items()}, [r[0] for r in results]


def fd_check(fn, params, step=1e-6, coords_per_param=None, seed=0):
    """Compare tape gradients of `fn` against central differences.

    `fn(tape)` returns a scalar Tensor built from `tape.param(...)`. Returns
    the worst relative error |g - g_fd| / max(1, |g|, |g_fd|) and the
    (parameter name, flat index) where it occurs.
    """
    if not step > 0:
        raise ValidationError("step must be positive", path="step")
    tape = Tape(params)
    analytic = tape.backward(fn(tape))
    rng = np.random.default_rng(seed)

    def evaluate():
        value = fn(Tape(params)).value.item()
        if not math.isfinite(value):
            raise NonFiniteError("non-finite function value in fd_check")
        return value

    worst, where = 0.0, None
    for name in analytic:
        array = params[name]
        flat = array.reshape(-1)
        indices = np.arange(flat.size)
        if coords_per_param is not None and flat.size > coords_per_param:
            indices = np.sort(rng.choice(flat.size, coords_per_param, replace=False))
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            plus = evaluate()
            flat[idx] = original - step
            minus = evaluate()
            flat[idx] = original
            numeric = (plus - minus) / (2 * step)
            exact = analytic[name].reshape(-1)[idx]
            error = abs(exact - numeric) / max(1.0, abs(exact), abs(numeric))
            if error > worst or where is None:
                worst, where = error, (name, int(idx))
    return worst, where


@dataclasses.dataclass
class AdamState:
    step: int
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params):
        return cls(
            0,
            {name: np.zeros_like(arr) for name, arr in params.items()},
            {name: np.zeros_like(arr) for name, arr in params.items()},
        )


def optimizer_step(params, grads, state, lr, betas=(0.9, 0.999), epsilon=1e-8):
    """One bias-corrected adaptive-moment update; returns new params and state."""
    if not lr > 0:
        raise ValidationError("learning rate must be positive", path="lr")
    beta1, beta2 = betas
    step = state.step + 1
    new_params, new_m, new_v = ParameterSet(), {}, {}
    for name, value in params.items():
        if state.m[name].shape != value.shape:
            raise ShapeError("optimizer_step", value.shape, state.m[name].shape)
        grad = np.asarray(grads.get(name, np.zeros_like(value)), dtype=np.float64)
        m = beta1 * state.m[name] + (1 - beta1) * grad
        v = beta2 * state.v[name] + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + epsilon)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(step, new_m, new_v)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), epsilon=1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.epsilon = epsilon
        self.state = AdamState.for_params(params)

    def step(self, grads):
        self.params, self.state = optimizer_step(
            self.params, grads, self.state, self.lr, self.betas, self.epsilon
        )
        return self.params


# Checkpoint files


def _pack_str(value):
    data = value.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def save_checkpoint(params, registry_version, config):
    """GALRCK1 bytes: version, JSON config block, float32 records, CRC32."""
    parts = [
        CHECKPOINT_MAGIC,
        _pack_str(registry_version),
        _pack_str(json.dumps(config, sort_keys=True)),
        struct.pack("<I", len(params)),
    ]
    for name, value in params.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def uint(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.uint()).decode("utf-8")


def load_checkpoint(data) -> Tuple[ParameterSet, str, dict]:
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a GALRCK1 checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    reader = _Reader(body)
    reader.take(len(CHECKPOINT_MAGIC))
    registry_version = reader.string()
    config = json.loads(reader.string())
    params = ParameterSet()
    for _ in range(reader.uint()):
        name = reader.string()
        ndim = reader.uint()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4")
        params[name] = values.reshape(shape)
    if reader.offset != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return params, registry_version, config
