###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Dataset Generation, Training and Evaluation

Supervision is the sampled joint vector itself: a dataset is nothing but
hand specs, seeds and the states drawn from them. Clouds are regenerated
deterministically from a state, so the cloud cache is an accelerator and
never a source of truth.
"""
import collections
import concurrent.futures
import csv
import dataclasses
import glob
import hashlib
import io
import json
import logging
import math
import os
import threading
from typing import Dict, List, Optional, Tuple

import numpy as np

from shoobx.galr import cloud, diffcore, handspec, retarget
from shoobx.galr.encoder import EncoderConfig
from shoobx.galr.errors import (
    DegeneratePyramid,
    DivergenceError,
    NonFiniteError,
    ValidationError,
)

log = logging.getLogger("shoobx.galr.trainkit")

MODES = ("uniform", "uniform+canonical")
SPLITS = ("train", "val", "test")
DATASET_FILE = "dataset.json"
METRICS_FILE = "metrics.csv"
METRICS_HEADER = ("epoch", "embodiment", "split", "rmse_norm", "rmse_rad")
PYRAMID_CACHE_SIZE = 512


@dataclasses.dataclass(frozen=True)
class ReachableStateSet:
    embodiment_id: str
    states: Tuple[handspec.JointVector, ...]
    seed: int
    mode: str

    def __len__(self):
        return len(self.states)


def derive_seed(seed, *labels):
    """Independent child seed for a labelled stream (embodiment, split, ...)."""
    digest = hashlib.sha256(str(seed).encode("utf-8"))
    for label in labels:
        digest.update(b"\0" + str(label).encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "little")


def sample_reachable_states(spec, n, seed, mode="uniform"):
    if n <= 0:
        raise ValidationError("state count must be positive", path="n")
    if mode not in MODES:
        raise ValidationError(f"unknown sampling mode {mode!r}", path="mode")
    rng = np.random.default_rng(seed)
    rows = []
    if mode == "uniform+canonical":
        rows.extend([spec.lo, spec.hi, (spec.lo + spec.hi) / 2.0][:n])
    if n > len(rows):
        rows.extend(rng.uniform(spec.lo, spec.hi, size=(n - len(rows), spec.dof)))
    states = tuple(spec.joint_vector(row) for row in rows)
    return ReachableStateSet(spec.embodiment_id, states, seed, mode)


@dataclasses.dataclass(frozen=True)
class Record:
    embodiment_id: str
    state: handspec.JointVector
    split: str
    key: str

    def to_json(self):
        return {
            "embodiment_id": self.embodiment_id,
            "angles": self.state.angles.tolist(),
            "split": self.split,
            "key": self.key,
        }


class GaLRDataset:
    def __init__(
        self,
        specs,
        records,
        cloud_params,
        cache=None,
        generator=None,
        pyramid_cache_size=PYRAMID_CACHE_SIZE,
    ):
        self.specs = {spec.embodiment_id: spec for spec in specs}
        self.records = list(records)
        self.cloud_params = cloud_params
        self.cache = cache
        self.generator = generator or {}
        self.pyramid_cache_size = pyramid_cache_size
        self._pyramids = collections.OrderedDict()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.records)

    def __repr__(self):
        return f"<GaLRDataset {len(self.records)} records {sorted(self.specs)}>"

    @property
    def embodiments(self):
        return sorted(self.specs)

    def split(self, name, embodiment_id=None):
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}", path="split")
        return [
            record
            for record in self.records
            if record.split == name
            and (embodiment_id is None or record.embodiment_id == embodiment_id)
        ]

    def pyramid(self, record):
        """Pyramid for a record, kept in a bounded least-recently-used cache.

        Evicted pyramids are rebuilt from the on-disk cloud cache (or from
        scratch without one), which yields the same arrays.
        """
        with self._lock:
            pyramid = self._pyramids.get(record.key)
            if pyramid is not None:
                self._pyramids.move_to_end(record.key)
                return pyramid
        spec = self.specs[record.embodiment_id]
        pyramid = cloud.pyramid_for_state(
            spec, record.state, self.cloud_params, self.cache
        )
        with self._lock:
            self._pyramids[record.key] = pyramid
            while len(self._pyramids) > self.pyramid_cache_size:
                self._pyramids.popitem(last=False)
        return pyramid

    def to_json(self):
        return {
            "generator": self.generator,
            "cloud": self.cloud_params.to_json(),
            "specs": {eid: spec.document for eid, spec in sorted(self.specs.items())},
            "records": [record.to_json() for record in self.records],
        }

    def save(self, store):
        store.write_bytes(DATASET_FILE, json.dumps(self.to_json()).encode("utf-8"))

    @classmethod
    def load(cls, store, cache=None):
        try:
            data = json.loads(store.read_bytes(DATASET_FILE).decode("utf-8"))
            specs = [handspec.parse_hand_spec(doc) for doc in data["specs"].values()]
            by_id = {spec.embodiment_id: spec for spec in specs}
            records = [
                Record(
                    item["embodiment_id"],
                    by_id[item["embodiment_id"]].joint_vector(item["angles"]),
                    item["split"],
                    item["key"],
                )
                for item in data["records"]
            ]
            params = cloud.CloudParams(**data["cloud"])
        except (KeyError, TypeError, ValueError) as err:
            raise ValidationError(f"bad dataset document: {err}", path=DATASET_FILE)
        return cls(specs, records, params, cache, data.get("generator"))


def split_counts(n, fractions):
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError("split fractions must be three values summing to 1")
    n_train = int(round(n * fractions[0]))
    n_val = min(int(round(n * fractions[1])), n - n_train)
    return n_train, n_val, n - n_train - n_val


def load_specs(location):
    """Hand specs from a directory of ``*.hand.json`` files or bundled names."""
    if os.path.isdir(location):
        paths = sorted(glob.glob(os.path.join(location, "*.hand.json")))
        if not paths:
            raise ValidationError(f"no *.hand.json files in {location}")
        return [handspec.load_hand_spec(path) for path in paths]
    specs = []
    for name in location.split(","):
        if not name:
            continue
        try:
            specs.append(handspec.load_bundled(name))
        except FileNotFoundError:
            raise ValidationError(f"no bundled hand spec named {name!r}", path="specs")
    return specs


def build_dataset(
    specs,
    n_per,
    seed,
    fractions=(0.8, 0.1, 0.1),
    cloud_params=None,
    cache=None,
    workers=1,
    mode="uniform+canonical",
):
    cloud_params = cloud_params or cloud.CloudParams()
    counts = split_counts(n_per, fractions)
    ids = [spec.embodiment_id for spec in specs]
    if len(set(ids)) != len(ids):
        raise ValidationError("embodiment ids must be unique", path="specs")

    records = []
    for spec in specs:
        states = sample_reachable_states(
            spec, n_per, derive_seed(seed, spec.embodiment_id), mode
        ).states
        split_seed = derive_seed(seed, spec.embodiment_id, "split")
        order = np.random.default_rng(split_seed).permutation(n_per)
        labels = np.empty(n_per, dtype=object)
        labels[order[: counts[0]]] = "train"
        labels[order[counts[0] : counts[0] + counts[1]]] = "val"
        labels[order[counts[0] + counts[1] :]] = "test"
        for state, label in zip(states, labels):
            key = cloud.cache_key(spec, state, cloud_params)
            records.append(Record(spec.embodiment_id, state, label, key))
        log.info("Sampled %d states for %s (%s)", n_per, spec.embodiment_id, mode)

    dataset = GaLRDataset(
        specs,
        records,
        cloud_params,
        cache,
        {
            "seed": seed,
            "n_per": n_per,
            "fractions": list(fractions),
            "mode": mode,
        },
    )

    def prepare(item):
        idx, record = item
        try:
            dataset.pyramid(record)
        except DegeneratePyramid as err:
            err.message = f"{record.embodiment_id} state {idx}: {err.message}"
            raise

    per_spec_index = []
    seen = {}
    for record in records:
        per_spec_index.append(seen.get(record.embodiment_id, 0))
        seen[record.embodiment_id] = per_spec_index[-1] + 1
    items = list(zip(per_spec_index, records))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(prepare, items))
    else:
        for item in items:
            prepare(item)
    log.info(
        "Built dataset with %d records over %d embodiments", len(records), len(specs)
    )
    return dataset


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    workers: int = 1
    precision: str = "float64"
    eval_limit: int = 256
    embodiments: Optional[Tuple[str, ...]] = None
    encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    decoder: retarget.DecoderConfig = dataclasses.field(
        default_factory=retarget.DecoderConfig
    )

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be positive", path="epochs")
        if self.batch_size < 1:
            raise ValidationError("batch size must be positive", path="batch_size")
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive", path="lr")
        if self.workers < 1:
            raise ValidationError("workers must be positive", path="workers")
        if self.precision not in diffcore.PRECISIONS:
            raise ValidationError(
                f"unknown precision {self.precision!r}", path="precision"
            )

    def to_json(self):
        data = dataclasses.asdict(self)
        data["encoder"] = self.encoder.to_json()
        data["decoder"] = self.decoder.to_json()
        if self.embodiments is not None:
            data["embodiments"] = list(self.embodiments)
        return data

    @classmethod
    def from_json(cls, data):
        data = dict(data)
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValidationError(f"unknown training options {sorted(unknown)}")
        if "encoder" in data:
            data["encoder"] = EncoderConfig.from_json(data["encoder"])
        if "decoder" in data:
            data["decoder"] = retarget.DecoderConfig(**data["decoder"])
        if data.get("embodiments") is not None:
            data["embodiments"] = tuple(data["embodiments"])
        try:
            return cls(**data)
        except TypeError as err:
            raise ValidationError(f"bad training config: {err}")


@dataclasses.dataclass(frozen=True)
class MetricRow:
    epoch: int
    embodiment: str
    split: str
    rmse_norm: float
    rmse_rad: float


@dataclasses.dataclass
class EmbodimentMetrics:
    embodiment_id: str
    count: int
    rmse_norm: float
    rmse_rad: float
    worst_joint_error: np.ndarray
    self_retarget_error: float

    def to_json(self):
        return {
            "embodiment_id": self.embodiment_id,
            "count": self.count,
            "rmse_norm": self.rmse_norm,
            "rmse_rad": self.rmse_rad,
            "worst_joint_error": self.worst_joint_error.tolist(),
            "self_retarget_error": self.self_retarget_error,
        }


@dataclasses.dataclass
class TrainResult:
    best: retarget.GaLRModel
    last: retarget.GaLRModel
    best_epoch: int
    history: List[MetricRow]


def _check_registries(model, dataset):
    for spec in dataset.specs.values():
        retarget.check_registry(spec, model.registry_version)


def evaluate(model, dataset, split="test", limit=None) -> Dict[str, EmbodimentMetrics]:
    """Per-embodiment metrics over a split, pooled over every joint of every record.

    The self-retargeting error is the mean over records of the worst joint
    error as a fraction of that joint's range, for retargeting a state onto
    its own hand.
    """
    _check_registries(model, dataset)
    records = dataset.split(split)
    if not records:
        raise ValidationError("empty split", path=split)
    metrics = {}
    for embodiment_id in dataset.embodiments:
        spec = dataset.specs[embodiment_id]
        subset = [r for r in records if r.embodiment_id == embodiment_id][:limit]
        if not subset:
            continue
        norm_sq = rad_sq = 0.0
        worst = np.zeros(spec.dof)
        fractions = []
        for record in subset:
            predicted = retarget.select(
                model.decode(model.encode(dataset.pyramid(record))), spec
            )
            error = predicted.angles - record.state.angles
            norm_error = spec.normalize(predicted.angles) - spec.normalize(
                record.state.angles
            )
            norm_sq += float(np.sum(norm_error**2))
            rad_sq += float(np.sum(error**2))
            worst = np.maximum(worst, np.abs(error))
            fractions.append(float(np.max(np.abs(error) / (spec.hi - spec.lo))))
        count = len(subset) * spec.dof
        metrics[embodiment_id] = EmbodimentMetrics(
            embodiment_id,
            len(subset),
            math.sqrt(norm_sq / count),
            math.sqrt(rad_sq / count),
            worst,
            float(np.mean(fractions)),
        )
    return metrics


def metrics_csv(history):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for row in history:
        writer.writerow(
            [
                row.epoch,
                row.embodiment,
                row.split,
                repr(row.rmse_norm),
                repr(row.rmse_rad),
            ]
        )
    return buffer.getvalue()


def read_metrics(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != METRICS_HEADER:
        raise ValidationError("unexpected metrics header", path=METRICS_FILE)
    return [
        MetricRow(
            int(row["epoch"]),
            row["embodiment"],
            row["split"],
            float(row["rmse_norm"]),
            float(row["rmse_rad"]),
        )
        for row in reader
    ]


def _batch_description(epoch, index, batch):
    ids = sorted({record.embodiment_id for record in batch})
    return f"epoch {epoch} batch {index} ({len(batch)} samples: {', '.join(ids)})"


def train(dataset, config, store=None, model=None):
    """End-to-end training over mixed-embodiment minibatches.

    After every epoch the parameters are rounded through float32, evaluated
    and, when the mean validation RMSE improves, kept as the best model.
    """
    if model is None:
        model = retarget.GaLRModel(
            config.encoder,
            config.decoder,
            cloud_params=dataset.cloud_params,
            seed=config.seed,
        )
    _check_registries(model, dataset)
    model = model.with_training(config.to_json())
    records = dataset.split("train")
    if config.embodiments is not None:
        records = [r for r in records if r.embodiment_id in config.embodiments]
    if not records:
        raise ValidationError("empty split", path="train")
    val_split = "val" if dataset.split("val") else "train"
    eval_splits = ("train",) if val_split == "train" else ("train", "val")
    dtype = diffcore.PRECISIONS[config.precision]

    def loss_fn(tape, record):
        spec = dataset.specs[record.embodiment_id]
        return model.loss_tensor(tape, dataset.pyramid(record), spec, record.state)

    optimizer = diffcore.Adam(model.params.copy(), lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, "batches"))
    history, best, best_epoch, best_score = [], None, 0, math.inf
    last = model
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(records))
        losses = []
        for index, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [records[i] for i in order[start : start + config.batch_size]]
            try:
                grads, batch_losses = diffcore.accumulate_gradients(
                    loss_fn, batch, optimizer.params, config.workers, dtype
                )
            except NonFiniteError as err:
                where = _batch_description(epoch, index, batch)
                raise DivergenceError(f"{err.message} at {where}")
            if not all(math.isfinite(value) for value in batch_losses):
                raise DivergenceError(
                    f"non-finite loss at {_batch_description(epoch, index, batch)}"
                )
            log.debug(
                "epoch %d batch %d loss %.6f", epoch, index, np.mean(batch_losses)
            )
            optimizer.step(grads)
            losses.extend(batch_losses)

        last = model.with_params(optimizer.params.as_float32())
        epoch_rows = []
        for split in eval_splits:
            for eid, m in evaluate(last, dataset, split, config.eval_limit).items():
                epoch_rows.append(MetricRow(epoch, eid, split, m.rmse_norm, m.rmse_rad))
        history.extend(epoch_rows)
        score = float(
            np.mean([row.rmse_norm for row in epoch_rows if row.split == val_split])
        )
        log.info(
            "epoch %d: train loss %.5f, %s rmse %.5f",
            epoch,
            np.mean(losses),
            val_split,
            score,
        )
        if score < best_score:
            best, best_epoch, best_score = last, epoch, score
            if store is not None:
                store.write_bytes("best.bin", best.save())
        if store is not None:
            store.write_bytes("last.bin", last.save())
            store.write_bytes(METRICS_FILE, metrics_csv(history).encode("utf-8"))
    log.info(
        "Best epoch %d with %s rmse %.5f (%s)", best_epoch, val_split, best_score, best
    )
    return TrainResult(best, last, best_epoch, history)
