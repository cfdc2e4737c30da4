###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Unified Decoder and Hand-to-Hand Retargeting

The decoder maps a latent vector to every slot of the universal joint
registry; it never sees an embodiment id. Only `select` picks the slots a
given hand owns and maps them into that hand's joint limits.
"""
import dataclasses
import functools
import logging

import numpy as np

from shoobx.galr import cloud, diffcore, encoder, handspec
from shoobx.galr.errors import CheckpointError, RegistryMismatch, ValidationError, stage

log = logging.getLogger("shoobx.galr.retarget")

# Keeps the square root differentiable at an exact fit.
LOSS_EPSILON = 1e-12


@dataclasses.dataclass(frozen=True)
class DecoderConfig:
    hidden: int = 256
    layers: int = 3

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValidationError("decoder needs at least one layer", path="decoder")

    def to_json(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class UniversalJointPrediction:
    theta_hat: np.ndarray
    producer: str = ""
    registry_version: str = handspec.REGISTRY_VERSION

    def __len__(self):
        return len(self.theta_hat)


@dataclasses.dataclass(frozen=True)
class SelectionMask:
    embodiment_id: str
    indices: tuple

    def matrix(self, registry_size):
        """Constant one-hot (registry x dof) matrix picking the owned slots."""
        out = np.zeros((registry_size, len(self.indices)))
        out[list(self.indices), np.arange(len(self.indices))] = 1.0
        return out


def selection_mask(spec):
    return SelectionMask(spec.embodiment_id, spec.universal_ids)


def decoder_shapes(config, d_latent, outputs):
    widths = [d_latent] + [config.hidden] * (config.layers - 1) + [outputs]
    shapes = {}
    for idx in range(config.layers):
        shapes[f"dec{idx}.W"] = (widths[idx], widths[idx + 1])
        shapes[f"dec{idx}.b"] = (1, widths[idx + 1])
    return shapes


def decode_tensor(tape, z, config):
    """Feed-forward map to normalized universal joint coordinates in [-1, 1]."""
    out = z
    for idx in range(config.layers - 1):
        out = tape.linear(out, f"dec{idx}", "relu")
    return tape.linear(out, f"dec{config.layers - 1}", "tanh")


def check_registry(spec, version):
    if spec.registry_version != version:
        raise RegistryMismatch(version, spec.registry_version)


def select(prediction, spec):
    """Pick `spec`'s universal slots and denormalize lo + (t + 1) / 2 (hi - lo)."""
    check_registry(spec, prediction.registry_version)
    picked = np.asarray(prediction.theta_hat)[list(spec.universal_ids)]
    angles = spec.lo + (picked + 1.0) / 2.0 * (spec.hi - spec.lo)
    # tanh rounding can land one ulp outside the interval.
    return handspec.JointVector(spec.embodiment_id, np.clip(angles, spec.lo, spec.hi))


def _loss_operands(predicted, target, spec):
    if predicted.embodiment_id != target.embodiment_id:
        raise ValidationError(
            f"embodiment mismatch: {predicted.embodiment_id!r} "
            f"vs {target.embodiment_id!r}"
        )
    if len(predicted) != len(target) or len(target) != spec.dof:
        raise ValidationError(
            f"length mismatch: {len(predicted)} vs {len(target)}",
            path=spec.embodiment_id,
        )
    return spec.normalize(predicted.angles), spec.normalize(target.angles)


def rmse_loss(predicted, target, spec):
    """RMSE over the hand's joints in normalized [-1, 1] coordinates."""
    a, b = _loss_operands(predicted, target, spec)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_radians(predicted, target):
    if len(predicted) != len(target):
        raise ValidationError(f"length mismatch: {len(predicted)} vs {len(target)}")
    return float(np.sqrt(np.mean((predicted.angles - target.angles) ** 2)))


def rmse_loss_tensor(tape, theta_hat, target, spec, registry_size):
    """Masked training loss; unselected universal outputs get zero gradient."""
    if len(target) != spec.dof:
        raise ValidationError(f"length mismatch: {len(target)} vs {spec.dof}")
    mask = tape.constant(selection_mask(spec).matrix(registry_size))
    diff = tape.sub(
        tape.matmul(theta_hat, mask),
        tape.constant(spec.normalize(target.angles).reshape(1, -1)),
    )
    return tape.sqrt(tape.add(tape.mean_square(diff), tape.constant([[LOSS_EPSILON]])))


class GaLRModel:
    """Encoder plus decoder parameters with the settings they were trained under."""

    def __init__(
        self,
        encoder_config=None,
        decoder_config=None,
        params=None,
        registry_version=handspec.REGISTRY_VERSION,
        cloud_params=None,
        seed=0,
        training=None,
    ):
        self.encoder_config = encoder_config or encoder.EncoderConfig()
        self.decoder_config = decoder_config or DecoderConfig()
        self.registry_version = registry_version
        self.cloud_params = cloud_params or cloud.CloudParams()
        registry = handspec.get_registry(registry_version)
        if registry is None:
            raise RegistryMismatch(handspec.REGISTRY_VERSION, registry_version)
        self.registry = registry
        if params is None:
            rng = np.random.default_rng(seed)
            shapes = encoder.parameter_shapes(self.encoder_config)
            params = encoder.init_params(shapes, rng)
            encoder.init_params(self.decoder_shapes(), rng, params)
        self.params = params
        self.training = training
        self.check_params()

    def __repr__(self):
        return f"<GaLRModel {self.checkpoint_id} {self.registry_version}>"

    def decoder_shapes(self):
        return decoder_shapes(
            self.decoder_config, self.encoder_config.d_latent, self.registry.size
        )

    def check_params(self):
        encoder.check_params(self.params, encoder.parameter_shapes(self.encoder_config))
        encoder.check_params(self.params, self.decoder_shapes())

    @functools.cached_property
    def checkpoint_id(self):
        return self.params.digest()[:16]

    def with_params(self, params):
        return GaLRModel(
            self.encoder_config,
            self.decoder_config,
            params,
            self.registry_version,
            self.cloud_params,
            training=self.training,
        )

    def with_training(self, training):
        """Same parameters, recording the training options that produce them."""
        model = self.with_params(self.params)
        model.training = dict(training)
        return model

    def config_block(self):
        block = {
            "encoder": self.encoder_config.to_json(),
            "decoder": self.decoder_config.to_json(),
            "cloud": self.cloud_params.to_json(),
        }
        if self.training is not None:
            block["train"] = self.training
        return block

    # Differentiable pieces, used by training.

    def forward_tensor(self, tape, pyramid):
        z = encoder.encode_tensor(tape, pyramid, self.encoder_config)
        return decode_tensor(tape, z, self.decoder_config)

    def loss_tensor(self, tape, pyramid, spec, target):
        check_registry(spec, self.registry_version)
        return rmse_loss_tensor(
            tape, self.forward_tensor(tape, pyramid), target, spec, self.registry.size
        )

    # Inference

    def pyramid(self, spec, q, cache=None):
        check_registry(spec, self.registry_version)
        return cloud.pyramid_for_state(spec, q, self.cloud_params, cache)

    def encode(self, pyramid):
        return encoder.encode(
            pyramid, self.params, self.encoder_config, self.checkpoint_id
        )

    def decode(self, z):
        if z.producer and z.producer != self.checkpoint_id:
            raise CheckpointError(
                f"latent from checkpoint {z.producer}, decoder is {self.checkpoint_id}"
            )
        tape = diffcore.Tape(self.params)
        z_row = tape.constant(np.reshape(z.z, (1, -1)))
        out = decode_tensor(tape, z_row, self.decoder_config)
        return UniversalJointPrediction(
            out.value.reshape(-1), self.checkpoint_id, self.registry_version
        )

    # Persistence

    def save(self):
        return diffcore.save_checkpoint(
            self.params, self.registry_version, self.config_block()
        )

    @classmethod
    def load(cls, data, registry_version=None):
        params, version, config = diffcore.load_checkpoint(data)
        if registry_version is not None and version != registry_version:
            raise RegistryMismatch(registry_version, version)
        try:
            return cls(
                encoder.EncoderConfig.from_json(config["encoder"]),
                DecoderConfig(**config["decoder"]),
                params,
                version,
                cloud.CloudParams(**config["cloud"]),
                training=config.get("train"),
            )
        except (KeyError, TypeError) as err:
            raise CheckpointError(f"bad checkpoint config block: {err}")


def retarget(source_spec, q_source, target_spec, model, cache=None):
    """Encode a source hand state and decode it for the target hand."""
    with stage("registry"):
        check_registry(source_spec, model.registry_version)
        check_registry(target_spec, model.registry_version)
    with stage("fk"):
        posed = handspec.forward_kinematics(source_spec, q_source)
    with stage("sample"):
        key = surface = None
        if cache is not None:
            key = cloud.cache_key(source_spec, q_source, model.cloud_params)
            surface = cache.get(key, source_spec.embodiment_id, q_source)
        if surface is None:
            surface = cloud.sample_surface(
                posed,
                model.cloud_params.density,
                cloud.state_seed(source_spec.embodiment_id, q_source.angles),
                source=q_source,
            )
            if cache is not None:
                cache.put(key, surface)
    with stage("pyramid"):
        pyramid = cloud.build_pyramid(
            surface, model.cloud_params.base_voxel, model.cloud_params.radius_scale
        )
    with stage("encode"):
        z = model.encode(pyramid)
    with stage("decode"):
        prediction = model.decode(z)
    with stage("select"):
        q_target = select(prediction, target_spec)
    log.debug(
        "Retargeted %s -> %s with %s",
        source_spec.embodiment_id,
        target_spec.embodiment_id,
        model,
    )
    return q_target


def latent_cycle_consistency(model, source_spec, q_source, target_spec, cache=None):
    """Relative latent distance ||z_src - z_re|| / ||z_src|| after retargeting."""
    z_src = model.encode(model.pyramid(source_spec, q_source, cache)).z
    q_target = retarget(source_spec, q_source, target_spec, model, cache)
    z_re = model.encode(model.pyramid(target_spec, q_target, cache)).z
    norm = np.linalg.norm(z_src)
    if norm == 0:
        raise ValidationError("source latent is zero", path="z")
    return float(np.linalg.norm(z_src - z_re) / norm), q_target
