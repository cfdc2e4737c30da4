###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Command Line Interface
"""
import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys

import pytz

import shoobx.galr
from shoobx.galr import (
    cloud,
    config,
    handspec,
    latentpolicy,
    planarenv,
    retarget,
    selftest,
    storage,
    trainkit,
)
from shoobx.galr.errors import GaLRError, ValidationError

log = logging.getLogger("shoobx.galr.run")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

RUN_FILE = "run.json"


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


parser = ArgumentParser(
    prog="galr",
    description="Geometry-aware latent representations for cross-embodiment hands",
)
parser.add_argument(
    "-c",
    "--config-file",
    dest="config_file",
    default=config.DEFAULT_CONFIG_FILE,
    help="The location of the configuration file.",
)
parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
parser.add_argument(
    "--workers", type=int, default=None, help="Declared worker count (default: config)."
)
subparsers = parser.add_subparsers(
    dest="command", metavar="command", parser_class=ArgumentParser
)
subparsers.required = True


def _command(name, help):
    sub = subparsers.add_parser(name, help=help)
    sub.add_argument("--config", help="JSON file with defaults for this command.")
    return sub


gen_data = _command("gen-data", "sample reachable states and build a dataset")
gen_data.add_argument(
    "--specs", required=True, help="Directory of *.hand.json or bundled names."
)
gen_data.add_argument("--n", type=int, help="States per embodiment.")
gen_data.add_argument("--seed", type=int)
gen_data.add_argument("--mode", choices=trainkit.MODES)
gen_data.add_argument("--split", help="Train/val/test fractions, e.g. 0.8,0.1,0.1.")
gen_data.add_argument("--out", required=True)

train_cmd = _command("train", "train the encoder and unified decoder")
train_cmd.add_argument("--data", required=True)
train_cmd.add_argument("--out", required=True)
train_cmd.add_argument("--epochs", type=int)
train_cmd.add_argument("--batch-size", dest="batch_size", type=int)
train_cmd.add_argument("--lr", type=float)
train_cmd.add_argument("--seed", type=int)

eval_cmd = _command("eval", "evaluate a checkpoint on a dataset split")
eval_cmd.add_argument("--ckpt", required=True)
eval_cmd.add_argument("--data", required=True)
eval_cmd.add_argument("--split", choices=trainkit.SPLITS)
eval_cmd.add_argument("--out", help="Optional JSON metrics file.")

retarget_cmd = _command("retarget", "retarget a pose from one hand to another")
retarget_cmd.add_argument("--ckpt", required=True)
retarget_cmd.add_argument("--from", dest="source", required=True)
retarget_cmd.add_argument("--pose", required=True)
retarget_cmd.add_argument("--to", dest="target", required=True)
retarget_cmd.add_argument("--out", required=True)

demos_cmd = _command("demos", "generate scripted planar grasp demonstrations")
demos_cmd.add_argument("--spec", required=True)
demos_cmd.add_argument("--n", type=int)
demos_cmd.add_argument("--region")
demos_cmd.add_argument("--seed", type=int)
demos_cmd.add_argument("--object-radius", dest="object_radius", type=float)
demos_cmd.add_argument("--out", required=True)

policy_cmd = _command("train-policy", "train a denoising policy on lifted demos")
policy_cmd.add_argument("--demos", nargs="+", required=True)
policy_cmd.add_argument("--galr-ckpt", dest="galr_ckpt", required=True)
policy_cmd.add_argument("--variant", choices=latentpolicy.VARIANTS)
policy_cmd.add_argument("--epochs", type=int)
policy_cmd.add_argument("--seed", type=int)
policy_cmd.add_argument("--out", required=True)

eval_policy_cmd = _command(
    "eval-policy", "evaluate policies over embodiments and regions"
)
eval_policy_cmd.add_argument("--matrix", required=True)
eval_policy_cmd.add_argument("--few-shot", dest="few_shot", action="store_true")
eval_policy_cmd.add_argument("--out", required=True)

_command("selftest", "run gradient checks and brute-force oracles")

DEFAULTS = {
    "gen-data": {
        "n": 5000,
        "seed": 0,
        "mode": "uniform+canonical",
        "split": "0.8,0.1,0.1",
    },
    "train": {},
    "eval": {"split": "test"},
    "retarget": {},
    "demos": {"n": 72, "region": "all", "seed": 0, "object_radius": 0.0},
    "train-policy": {},
    "eval-policy": {},
    "selftest": {},
}
GLOBAL_FLAGS = {"config_file", "verbose", "workers", "command", "config"}


def merge_run_config(args):
    """Subcommand defaults, then the JSON config file, then explicit flags."""
    merged = dict(DEFAULTS[args.command])
    if args.config:
        merged.update(read_json(args.config))
    for key, value in vars(args).items():
        if key not in GLOBAL_FLAGS and value is not None:
            merged[key] = value
    return merged


def split_location(location):
    """(store, name) for a file path or object URI."""
    if location.startswith("s3://"):
        head, _, name = location.rpartition("/")
        return storage.open_store(head), name
    directory, name = os.path.split(os.path.abspath(location))
    return storage.LocalStore(directory), name


def read_artifact(location):
    store, name = split_location(location)
    return store.read_bytes(name)


def write_artifact(location, data):
    store, name = split_location(location)
    store.write_bytes(name, data)
    return store


def read_json(location):
    try:
        return json.loads(read_artifact(location).decode("utf-8"))
    except ValueError as err:
        raise ValidationError(f"invalid JSON: {err}", path=location)


def load_spec(value):
    if os.path.exists(value):
        return handspec.load_hand_spec(value)
    try:
        return handspec.load_bundled(value)
    except FileNotFoundError:
        raise ValidationError(f"no hand spec file or bundled spec named {value!r}")


def write_run_file(store, args, merged, workers, argv):
    provenance = {
        "command": args.command,
        "argv": list(argv),
        "version": shoobx.galr.__version__,
        "workers": workers,
        "created": datetime.datetime.now(pytz.utc).isoformat(),
        "config": merged,
    }
    document = json.dumps(provenance, indent=2, sort_keys=True)
    store.write_bytes(RUN_FILE, document.encode("utf-8"))


def cloud_cache(conf):
    return cloud.CloudCache(storage.LocalStore(conf.get("shoobx:galr", "cache-dir")))


def load_model(location):
    return retarget.GaLRModel.load(read_artifact(location))


def cmd_gen_data(merged, conf, workers):
    split = merged["split"]
    if isinstance(split, str):
        split = split.split(",")
    try:
        fractions = [float(f) for f in split]
    except ValueError:
        raise ValidationError(f"bad split fractions {split!r}", path="--split")
    params = config.cloud_params(conf)
    merged["split"] = fractions
    merged["cloud"] = params.to_json()
    dataset = trainkit.build_dataset(
        trainkit.load_specs(merged["specs"]),
        merged["n"],
        merged["seed"],
        fractions=fractions,
        cloud_params=params,
        cache=cloud_cache(conf),
        workers=workers,
        mode=merged["mode"],
    )
    store = storage.open_store(merged["out"])
    dataset.save(store)
    return store


def cmd_train(merged, conf, workers):
    store = storage.open_store(merged["out"])
    dataset = trainkit.GaLRDataset.load(
        storage.open_store(merged["data"]), cloud_cache(conf)
    )
    merged.setdefault("workers", workers)
    merged.setdefault("precision", conf.get("shoobx:galr", "precision"))
    options = {
        k: v
        for k, v in merged.items()
        if k not in ("data", "out") and not k.startswith("_")
    }
    train_config = trainkit.TrainConfig.from_json(options)
    # Record every resolved training option, defaults included.
    merged.update(train_config.to_json())
    result = trainkit.train(dataset, train_config, store)
    print(f"best epoch {result.best_epoch}: {store.uri('best.bin')}")
    return store


def cmd_eval(merged, conf, workers):
    model = load_model(merged["ckpt"])
    dataset = trainkit.GaLRDataset.load(
        storage.open_store(merged["data"]), cloud_cache(conf)
    )
    metrics = trainkit.evaluate(model, dataset, merged["split"])
    for eid, m in metrics.items():
        print(
            f"{eid}: rmse_norm={m.rmse_norm:.5f} rmse_rad={m.rmse_rad:.5f} "
            f"worst={m.worst_joint_error.max():.5f} "
            f"self_retarget={m.self_retarget_error:.4f}"
        )
    if merged.get("out"):
        document = {eid: m.to_json() for eid, m in metrics.items()}
        text = json.dumps(document, indent=2)
        return write_artifact(merged["out"], text.encode("utf-8"))
    return None


def cmd_retarget(merged, conf, workers):
    model = load_model(merged["ckpt"])
    source = load_spec(merged["source"])
    target = load_spec(merged["target"])
    pose = handspec.JointVector.from_json(read_json(merged["pose"]))
    q_source = source.joint_vector(pose.angles)
    q_target = retarget.retarget(source, q_source, target, model, cloud_cache(conf))
    return write_artifact(merged["out"], json.dumps(q_target.to_json()).encode("utf-8"))


def cmd_demos(merged, conf, workers):
    spec = load_spec(merged["spec"])
    env = planarenv.PlanarGraspEnv(spec, object_radius=merged["object_radius"])
    region, seed = merged["region"], merged["seed"]
    demos = planarenv.generate_demos(env, spec, merged["n"], region, seed)
    store = storage.open_store(merged["out"])
    document = latentpolicy.demos_document(spec, demos, region, seed)
    store.write_bytes(
        f"{spec.embodiment_id}.demos.json", json.dumps(document).encode("utf-8")
    )
    return store


def cmd_train_policy(merged, conf, workers):
    model = load_model(merged["galr_ckpt"])
    lifted = []
    for location in merged["demos"]:
        spec, trajectories = latentpolicy.load_demos(read_json(location))
        lifter = latentpolicy.Lifter(model, spec, cloud_cache(conf))
        lifted.extend(latentpolicy.lift(t, model, spec, lifter) for t in trajectories)
    options = {
        k: v
        for k, v in merged.items()
        if k in {f.name for f in dataclasses.fields(latentpolicy.PolicyConfig)}
    }
    policy, losses = latentpolicy.train_policy(
        lifted, latentpolicy.PolicyConfig.from_json(options), model.registry_version
    )
    store = storage.open_store(merged["out"])
    store.write_bytes("policy.bin", policy.save())
    store.write_bytes(
        "policy_losses.csv",
        "".join(
            ["epoch,loss\n"] + [f"{i},{v!r}\n" for i, v in enumerate(losses, 1)]
        ).encode("utf-8"),
    )
    return store


def _policies(entries):
    policies = {}
    for name, location in entries.items():
        if location == "random":
            policies[name] = latentpolicy.RandomPolicy()
        else:
            policies[name] = latentpolicy.DenoisingPolicy.load(read_artifact(location))
    return policies


def cmd_eval_policy(merged, conf, workers):
    matrix = read_json(merged["matrix"])
    try:
        model = load_model(matrix["galr_ckpt"])
        if merged.get("few_shot"):
            shot = matrix["few_shot"]
            result = latentpolicy.few_shot_curve(
                load_spec(shot["spec_a"]),
                load_spec(shot["spec_b"]),
                model,
                latentpolicy.PolicyConfig.from_json(shot.get("policy", {})),
                demo_counts=shot.get("counts", (8, 16, 32, 72)),
                regions=shot.get("regions", ("A", "B")),
                seeds=shot.get("seeds", (0,)),
                episodes=shot.get("episodes", 20),
            )
            lines = ["demos,success_rate"]
            lines += [f"{c},{s!r}" for c, s in zip(result.counts, result.success)]
            lines.append(f"baseline,{result.baseline!r}")
            text = "\n".join(lines) + "\n"
        else:
            rows = latentpolicy.eval_matrix(
                _policies(matrix["policies"]),
                [load_spec(name) for name in matrix["specs"]],
                matrix["regions"],
                matrix.get("episodes", 20),
                matrix.get("seeds", [0]),
                model,
                matrix.get("env"),
                workers,
            )
            text = latentpolicy.results_csv(rows)
    except KeyError as err:
        raise ValidationError(f"missing matrix entry {err}", path=merged["matrix"])
    return write_artifact(merged["out"], text.encode("utf-8"))


def cmd_selftest(merged, conf, workers):
    results = selftest.run_selftest()
    print(selftest.format_table(results))
    if not all(result.passed for result in results):
        raise GaLRError("selftest failed")
    return None


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "retarget": cmd_retarget,
    "demos": cmd_demos,
    "train-policy": cmd_train_policy,
    "eval-policy": cmd_eval_policy,
    "selftest": cmd_selftest,
}


def dispatch(argv=None):
    """Run one subcommand and map the outcome to an exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_VALIDATION

    try:
        conf = config.configure(args.config_file, args.verbose)
        workers = args.workers
        if workers is None:
            workers = conf.getint("shoobx:galr", "workers")
        if workers < 1:
            raise ValidationError("workers must be positive", path="--workers")
        merged = merge_run_config(args)
        store = COMMANDS[args.command](merged, conf, workers)
        if store is not None:
            write_run_file(store, args, merged, workers, argv)
    except ValidationError as err:
        log.error("%s", err)
        return EXIT_VALIDATION
    except (GaLRError, OSError) as err:
        log.error("%s", err)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None):
    sys.exit(dispatch(argv))
