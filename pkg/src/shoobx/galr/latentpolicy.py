###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Latent-Action Denoising Policy

Demonstrations are lifted into the shared latent space with the frozen
encoder: each hand action becomes the latent of the hand pose it commands,
and the proprioceptive part of the observation becomes the latent of the
current pose. A small conditional denoiser then learns latent actions
(plus a planar wrist delta) from any mix of embodiments, and rollouts
decode them back to joint angles for whichever hand is attached.

The ``naive`` variant is the co-training baseline without a shared action
space: it keeps raw normalized joint actions and gives every embodiment its
own input and output layers around a shared trunk.
"""
import collections
import concurrent.futures
import csv
import dataclasses
import io
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from shoobx.galr import diffcore, encoder, handspec, planarenv, retarget, trainkit
from shoobx.galr.errors import NonFiniteError, ValidationError, stage

log = logging.getLogger("shoobx.galr.latentpolicy")

VARIANTS = ("latent", "naive")
PREDICTION_TYPES = ("epsilon", "sample")
WRIST_DIM = 3
RESULTS_HEADER = ("policy", "embodiment", "region", "seed", "success_rate")


@dataclasses.dataclass(frozen=True)
class Schedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bar: np.ndarray

    def __len__(self):
        return len(self.betas)


def cosine_schedule(steps, s=0.008):
    """Cosine noise schedule with betas clipped to [1e-4, 0.9999]."""
    if steps < 1:
        raise ValidationError("denoising steps must be positive", path="steps")
    x = np.linspace(0, steps, steps + 1)
    alphas_cumprod = np.cos(((x / steps) + s) / (1 + s) * math.pi * 0.5) ** 2
    alphas_cumprod = alphas_cumprod / alphas_cumprod[0]
    betas = np.clip(1 - (alphas_cumprod[1:] / alphas_cumprod[:-1]), 0.0001, 0.9999)
    alphas = 1.0 - betas
    return Schedule(betas, alphas, np.cumprod(alphas))


def step_embedding(steps, dim):
    """Sinusoidal embedding of integer denoising steps, shape (len(steps), dim)."""
    steps = np.asarray(steps, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = steps * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclasses.dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data):
        data = np.asarray(data, dtype=np.float64)
        std = data.std(axis=0)
        return cls(data.mean(axis=0), np.where(std < 1e-6, 1.0, std))

    def apply(self, values):
        return (values - self.mean) / self.std

    def invert(self, values):
        return values * self.std + self.mean

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.asarray(data["mean"]), np.asarray(data["std"]))


@dataclasses.dataclass(frozen=True)
class PolicyConfig:
    variant: str = "latent"
    steps: int = 10
    hidden: int = 256
    layers: int = 3
    step_dim: int = 16
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    prediction_type: str = "epsilon"
    noise_scale: float = 1.0
    clip_sample: Optional[float] = 5.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(
                f"unknown policy variant {self.variant!r}", path="variant"
            )
        if self.prediction_type not in PREDICTION_TYPES:
            raise ValidationError(
                f"unknown prediction type {self.prediction_type!r}",
                path="prediction_type",
            )
        if self.layers < 2 or self.hidden < 1:
            raise ValidationError("denoiser needs at least two layers", path="layers")
        if self.noise_scale < 0:
            raise ValidationError(
                "noise scale must be non-negative", path="noise_scale"
            )
        if self.prediction_type == "epsilon" and self.noise_scale == 0:
            raise ValidationError(
                "epsilon prediction needs a positive noise scale", path="noise_scale"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be positive")

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, data):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValidationError(f"unknown policy options {sorted(unknown)}")
        return cls(**data)


def observation_vector(object_xy, wrist, proprio):
    return np.concatenate([object_xy, wrist, proprio]).astype(np.float64)


class Lifter:
    """Frozen-encoder latents of hand states, memoized per state."""

    def __init__(self, model, spec, cache=None):
        retarget.check_registry(spec, model.registry_version)
        self.model = model
        self.spec = spec
        self.cache = cache
        self._memo = {}

    def __call__(self, q):
        key = q.angles.tobytes()
        z = self._memo.get(key)
        if z is None:
            z = self.model.encode(self.model.pyramid(self.spec, q, self.cache)).z
            self._memo[key] = z
        return z


@dataclasses.dataclass(frozen=True)
class LatentTrajectory:
    """Per step: observation, latent action, wrist delta and raw normalized action."""

    embodiment_id: str
    producer: str
    observations: np.ndarray
    latents: np.ndarray
    wrist_deltas: np.ndarray
    joint_actions: np.ndarray

    def __len__(self):
        return len(self.latents)


def lift(traj, model, spec, lifter=None):
    """Replace states and actions of a trajectory by their latents."""
    if traj.embodiment_id != spec.embodiment_id:
        raise ValidationError(
            f"trajectory of {traj.embodiment_id!r} with {spec.embodiment_id!r}"
        )
    lifter = lifter or Lifter(model, spec)
    observations, latents = [], []
    for idx, step in enumerate(traj.steps):
        with stage(f"lift step {idx}"):
            proprio = lifter(step.state)
            latents.append(lifter(step.action))
        observations.append(observation_vector(step.object_xy, step.wrist, proprio))
    return LatentTrajectory(
        spec.embodiment_id,
        model.checkpoint_id,
        np.array(observations),
        np.array(latents),
        np.array([step.wrist_delta for step in traj.steps]),
        np.array([spec.normalize(step.action.angles) for step in traj.steps]),
    )


class DenoisingPolicy:
    def __init__(self, config, params, obs_norm, x_norms, producer, registry_version):
        self.config = config
        self.params = params
        self.obs_norm = obs_norm
        self.x_norms = dict(x_norms)
        self.producer = producer
        self.registry_version = registry_version
        self.schedule = cosine_schedule(config.steps)
        alpha_bar = self.schedule.alpha_bar.copy()
        if config.prediction_type == "sample":
            # The last step is pure noise, so sampling starts from the noise alone.
            alpha_bar[-1] = 0.0
        self._alpha_bar = alpha_bar

    def __repr__(self):
        return f"<DenoisingPolicy {self.config.variant} {sorted(self.x_norms)}>"

    @property
    def obs_dim(self):
        return len(self.obs_norm.mean)

    @property
    def embodiments(self):
        return sorted(key for key in self.x_norms if key)

    def _key(self, spec):
        if self.config.variant == "latent":
            return ""
        if spec.embodiment_id not in self.x_norms:
            raise ValidationError(f"policy has no head for {spec.embodiment_id!r}")
        return spec.embodiment_id

    def denoise_tensor(self, tape, obs, x, steps, key):
        """Network output for normalized observations, noisy samples and steps."""
        in_x = f"in.{key}" if key else "in.x"
        head = f"head.{key}" if key else "head"
        hidden = tape.add(
            tape.add(
                tape.matmul(obs, tape.param("in.obs.W")),
                tape.matmul(x, tape.param(f"{in_x}.W")),
            ),
            tape.matmul(
                tape.constant(step_embedding(steps, self.config.step_dim)),
                tape.param("in.t.W"),
            ),
        )
        hidden = tape.relu(tape.add(hidden, tape.param("in.b")))
        for idx in range(self.config.layers - 2):
            hidden = tape.linear(hidden, f"mlp{idx}", "relu")
        return tape.linear(hidden, head)

    def predict(self, obs_n, x_n, step, key=""):
        tape = diffcore.Tape(self.params)
        out = self.denoise_tensor(
            tape,
            tape.constant(obs_n.reshape(1, -1)),
            tape.constant(x_n.reshape(1, -1)),
            [step],
            key,
        )
        return out.value.reshape(-1)

    def _posterior(self, t):
        ab = self._alpha_bar[t]
        ab_prev = self._alpha_bar[t - 1] if t > 0 else 1.0
        beta = 1.0 - ab / ab_prev
        c_sample = math.sqrt(ab_prev) * beta / (1.0 - ab)
        c_current = math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)
        variance = (1.0 - ab_prev) / (1.0 - ab) * beta
        return c_sample, c_current, variance

    def sample(self, observation, key, rng):
        """Run the reverse process from scaled Gaussian noise; returns raw units."""
        cfg = self.config
        obs_n = self.obs_norm.apply(observation)
        dim = len(self.x_norms[key].mean)
        x = cfg.noise_scale * rng.standard_normal(dim)
        for t in reversed(range(cfg.steps)):
            pred = self.predict(obs_n, x, t, key)
            if cfg.prediction_type == "sample":
                x0 = pred
            else:
                ab = self._alpha_bar[t]
                x0 = (x - math.sqrt(1.0 - ab) * cfg.noise_scale * pred) / math.sqrt(ab)
            if cfg.clip_sample is not None:
                x0 = np.clip(x0, -cfg.clip_sample, cfg.clip_sample)
            c_sample, c_current, variance = self._posterior(t)
            x = c_sample * x0 + c_current * x
            if t > 0:
                x = x + cfg.noise_scale * math.sqrt(variance) * rng.standard_normal(dim)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite latent from denoising")
        return self.x_norms[key].invert(x)

    def act(self, observation, spec, model, rng):
        """Joint action (clamped to limits), wrist delta and clamp flags."""
        key = self._key(spec)
        x = self.sample(observation, key, rng)
        if self.config.variant == "latent":
            if model.checkpoint_id != self.producer:
                raise ValidationError(
                    f"policy trained on encoder {self.producer}, "
                    f"rollout uses {model.checkpoint_id}"
                )
            z = encoder.GaLRVector(x[:-WRIST_DIM], self.producer)
            raw = retarget.select(model.decode(z), spec).angles
        else:
            raw = spec.denormalize(np.clip(x[:-WRIST_DIM], -1.0, 1.0))
        q, flags = handspec.clamp_to_limits(spec, raw)
        return q, x[-WRIST_DIM:], flags

    def save(self):
        block = {
            "policy": self.config.to_json(),
            "producer": self.producer,
            "obs_norm": self.obs_norm.to_json(),
            "x_norms": {key: norm.to_json() for key, norm in self.x_norms.items()},
        }
        return diffcore.save_checkpoint(self.params, self.registry_version, block)

    @classmethod
    def load(cls, data):
        params, version, block = diffcore.load_checkpoint(data)
        try:
            return cls(
                PolicyConfig.from_json(block["policy"]),
                params,
                Normalizer.from_json(block["obs_norm"]),
                {key: Normalizer.from_json(n) for key, n in block["x_norms"].items()},
                block["producer"],
                version,
            )
        except (KeyError, TypeError) as err:
            raise ValidationError(f"bad policy checkpoint: {err}")


def policy_shapes(config, obs_dim, x_dims):
    shapes = {
        "in.obs.W": (obs_dim, config.hidden),
        "in.t.W": (config.step_dim, config.hidden),
        "in.b": (1, config.hidden),
    }
    for idx in range(config.layers - 2):
        shapes[f"mlp{idx}.W"] = (config.hidden, config.hidden)
        shapes[f"mlp{idx}.b"] = (1, config.hidden)
    for key, dim in sorted(x_dims.items()):
        in_x = f"in.{key}" if key else "in.x"
        head = f"head.{key}" if key else "head"
        shapes[f"{in_x}.W"] = (dim, config.hidden)
        shapes[f"{head}.W"] = (config.hidden, dim)
        shapes[f"{head}.b"] = (1, dim)
    return shapes


def _targets(traj, variant):
    if variant == "latent":
        return "", np.hstack([traj.latents, traj.wrist_deltas])
    return traj.embodiment_id, np.hstack([traj.joint_actions, traj.wrist_deltas])


def train_policy(lifted, config, registry_version=handspec.REGISTRY_VERSION):
    """Fit a denoiser on lifted trajectories; returns the policy and epoch losses."""
    if not lifted:
        raise ValidationError("no trajectories to train on")
    producers = {traj.producer for traj in lifted}
    if len(producers) != 1:
        raise ValidationError(f"mixed encoder checkpoints {sorted(producers)}")

    observations, grouped = [], collections.defaultdict(list)
    for traj in lifted:
        key, targets = _targets(traj, config.variant)
        for obs, target in zip(traj.observations, targets):
            observations.append(obs)
            grouped[key].append((len(observations) - 1, target))
    obs_all = np.array(observations)
    obs_norm = Normalizer.fit(obs_all)
    x_norms = {
        key: Normalizer.fit([t for _, t in rows]) for key, rows in grouped.items()
    }
    samples = [
        (key, idx, x_norms[key].apply(target))
        for key in sorted(grouped)
        for idx, target in grouped[key]
    ]
    obs_n = obs_norm.apply(obs_all)

    rng = np.random.default_rng(config.seed)
    x_dims = {key: len(norm.mean) for key, norm in x_norms.items()}
    shapes = policy_shapes(config, obs_all.shape[1], x_dims)
    params = encoder.init_params(shapes, rng)
    policy = DenoisingPolicy(
        config, params, obs_norm, x_norms, producers.pop(), registry_version
    )
    alpha_bar = policy._alpha_bar
    optimizer = diffcore.Adam(params, lr=config.lr)

    losses = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            tape = diffcore.Tape(optimizer.params)
            loss = None
            for key in sorted({item[0] for item in batch}):
                rows = [item for item in batch if item[0] == key]
                x0 = np.array([item[2] for item in rows])
                steps = rng.integers(0, config.steps, size=len(rows))
                noise = rng.standard_normal(x0.shape)
                ab = alpha_bar[steps][:, None]
                noise_part = np.sqrt(1.0 - ab) * config.noise_scale * noise
                noisy = np.sqrt(ab) * x0 + noise_part
                target = noise if config.prediction_type == "epsilon" else x0
                pred = policy.denoise_tensor(
                    tape,
                    tape.constant(obs_n[[item[1] for item in rows]]),
                    tape.constant(noisy),
                    steps,
                    key,
                )
                term = tape.scale(
                    tape.mean_square(tape.sub(pred, tape.constant(target))),
                    len(rows) / len(batch),
                )
                loss = term if loss is None else tape.add(loss, term)
            grads = tape.backward(loss)
            optimizer.step(grads)
            epoch_loss += loss.value.item() * len(batch)
        losses.append(epoch_loss / len(samples))
        policy.params = optimizer.params
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            log.info("policy epoch %d loss %.5f", epoch, losses[-1])
    return policy, losses


class RandomPolicy:
    """Uniform joint actions and random wrist moves; a negative control."""

    def __init__(self, max_step=0.03):
        self.max_step = max_step

    def __repr__(self):
        return "<RandomPolicy>"

    def act(self, observation, spec, model, rng):
        q = spec.joint_vector(rng.uniform(spec.lo, spec.hi))
        delta = np.array(
            [*rng.uniform(-self.max_step, self.max_step, size=2), 0.0]
        )
        return q, delta, [False] * spec.dof


@dataclasses.dataclass(frozen=True)
class Episode:
    trajectory: planarenv.Trajectory
    success: bool
    clamped_steps: int


def rollout(policy, env, spec, model, seed, region="all", object_xy=None):
    """Closed-loop episode; observations carry the latent of the current hand state."""
    retarget.check_registry(spec, model.registry_version)
    lifter = Lifter(model, spec)
    rng = np.random.default_rng(seed)
    state = env.reset(seed, region, object_xy)
    steps, success, clamped = [], False, 0
    for _ in range(env.horizon):
        observation = observation_vector(state.object_xy, state.wrist, lifter(state.q))
        q, delta, flags = policy.act(observation, spec, model, rng)
        if any(flags):
            clamped += 1
            log.warning("Clamped %d joints at step %d", sum(flags), state.t)
        steps.append(planarenv.Step(state.object_xy, state.wrist, state.q, q, delta))
        state, success, done = env.step(q, delta)
        if done:
            break
    trajectory = planarenv.Trajectory(
        spec.embodiment_id, state.object_xy, tuple(steps), success
    )
    return Episode(trajectory, success, clamped)


@dataclasses.dataclass(frozen=True)
class ResultRow:
    policy: str
    embodiment: str
    region: str
    seed: int
    success_rate: float


def _episode_seed(seed, region, index):
    return trainkit.derive_seed(seed, "episode", region, index)


def _cell_success(policy, spec, region, seed, episodes, model, env_args, workers):
    label = planarenv.region_name(region)

    def run(index):
        env = planarenv.PlanarGraspEnv(spec, **env_args)
        episode_seed = _episode_seed(seed, label, index)
        return rollout(policy, env, spec, model, episode_seed, region).success

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, range(episodes)))
    else:
        outcomes = [run(index) for index in range(episodes)]
    return sum(outcomes) / episodes


def eval_matrix(
    policies, specs, regions, episodes, seeds, model, env_options=None, workers=1
) -> List[ResultRow]:
    """Success rate per (policy, embodiment, region, seed), in that nesting order."""
    if episodes < 20:
        raise ValidationError(
            "at least 20 episodes per cell are required", path="episodes"
        )
    env_options = env_options or {}
    rows = []
    for name, policy in policies.items():
        for spec in specs:
            env_args = env_options.get(spec.embodiment_id, env_options.get("*", {}))
            for region in regions:
                label = planarenv.region_name(region)
                for seed in seeds:
                    rate = _cell_success(
                        policy, spec, region, seed, episodes, model, env_args, workers
                    )
                    rows.append(ResultRow(name, spec.embodiment_id, label, seed, rate))
                    log.info(
                        "%s on %s in %s (seed %d): %.2f",
                        name,
                        spec.embodiment_id,
                        label,
                        seed,
                        rate,
                    )
    return rows


def summarize(rows) -> Dict[Tuple[str, str, str], float]:
    """Mean success over seeds per (policy, embodiment, region)."""
    cells = collections.defaultdict(list)
    for row in rows:
        cells[(row.policy, row.embodiment, row.region)].append(row.success_rate)
    return {cell: float(np.mean(rates)) for cell, rates in cells.items()}


def results_csv(rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RESULTS_HEADER)
    for row in rows:
        writer.writerow(
            [row.policy, row.embodiment, row.region, row.seed, repr(row.success_rate)]
        )
    return buffer.getvalue()


@dataclasses.dataclass(frozen=True)
class FewShotResult:
    counts: Tuple[int, ...]
    success: Tuple[float, ...]
    baseline: float


def few_shot_curve(
    spec_a,
    spec_b,
    model,
    config,
    demo_counts=(8, 16, 32, 72),
    regions=("A", "B"),
    seeds=(0,),
    episodes=20,
    b_demos=72,
):
    """Success on A for co-training k A-demos with a fixed B set, against A-only.

    The baseline trains on A alone with the largest demo count. Every value
    is a mean over `seeds`, evaluated in A's region.
    """
    region_a, region_b = regions
    counts = tuple(sorted(demo_counts))
    env_a, env_b = planarenv.PlanarGraspEnv(spec_a), planarenv.PlanarGraspEnv(spec_b)
    lifter_a, lifter_b = Lifter(model, spec_a), Lifter(model, spec_b)
    success = {count: [] for count in counts}
    baseline = []
    for seed in seeds:
        demos_a = planarenv.generate_demos(env_a, spec_a, counts[-1], region_a, seed)
        demos_b = planarenv.generate_demos(env_b, spec_b, b_demos, region_b, seed + 1)
        lifted_a = [lift(t, model, spec_a, lifter_a) for t in demos_a]
        lifted_b = [lift(t, model, spec_b, lifter_b) for t in demos_b]
        run_config = dataclasses.replace(config, seed=seed)

        def score(policy):
            rows = eval_matrix(
                {"p": policy}, [spec_a], [region_a], episodes, [seed], model
            )
            return rows[0].success_rate

        for count in counts:
            policy, _ = train_policy(
                lifted_a[:count] + lifted_b, run_config, model.registry_version
            )
            success[count].append(score(policy))
            log.info("few-shot %d demos seed %d: %.2f", count, seed, success[count][-1])
        policy, _ = train_policy(lifted_a, run_config, model.registry_version)
        baseline.append(score(policy))
    return FewShotResult(
        counts,
        tuple(float(np.mean(success[count])) for count in counts),
        float(np.mean(baseline)),
    )


def load_demos(data):
    """Trajectories and spec from a demo file document."""
    try:
        spec = handspec.parse_hand_spec(data["spec"])
        trajectories = [
            planarenv.Trajectory.from_json(item, spec) for item in data["trajectories"]
        ]
    except (KeyError, TypeError) as err:
        raise ValidationError(f"bad demo file: {err}")
    return spec, trajectories


def demos_document(spec, trajectories, region, seed):
    return {
        "embodiment_id": spec.embodiment_id,
        "region": planarenv.region_name(region),
        "seed": seed,
        "spec": spec.document,
        "trajectories": [traj.to_json() for traj in trajectories],
    }
