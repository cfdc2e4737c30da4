###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Command Line Interface Tests
"""
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from freezegun import freeze_time

from shoobx.galr import cloud, config, encoder, handspec, retarget, run, selftest
from shoobx.galr import trainkit

TEST_CONFIG = """\
[shoobx:galr]
cache-dir = %s

[shoobx:cloud]
density = 5000
base-voxel = 0.01
"""


class RunTestCase(unittest.TestCase):
    def setUp(self):
        self._dir = tempfile.mkdtemp()
        self.config_file = self.path("galr.cfg")
        with open(self.config_file, "w") as file:
            file.write(TEST_CONFIG % self.path("cache"))
        config._CONFIG = None

    def tearDown(self):
        config._CONFIG = None
        shutil.rmtree(self._dir)

    def path(self, *names):
        return os.path.join(self._dir, *names)

    def write_json(self, name, data):
        with open(self.path(name), "w") as file:
            json.dump(data, file)
        return self.path(name)

    def read_json(self, *names):
        with open(self.path(*names)) as file:
            return json.load(file)

    def dispatch(self, *argv):
        return run.dispatch(["-c", self.config_file, *argv])


class UsageTests(RunTestCase):
    def test_no_command(self):
        with mock.patch("sys.stderr", new_callable=io.StringIO) as stderr:
            self.assertEqual(run.dispatch([]), run.EXIT_VALIDATION)
        self.assertIn("usage: galr", stderr.getvalue())

    def test_unknown_command(self):
        with mock.patch("sys.stderr", new_callable=io.StringIO) as stderr:
            self.assertEqual(self.dispatch("fly"), run.EXIT_VALIDATION)
        self.assertIn("invalid choice", stderr.getvalue())

    def test_missing_flag(self):
        with mock.patch("sys.stderr", new_callable=io.StringIO) as stderr:
            code = self.dispatch("retarget", "--ckpt", "x")
        self.assertEqual(code, run.EXIT_VALIDATION)
        self.assertIn("--from", stderr.getvalue())

    def test_bad_workers(self):
        with self.assertLogs("shoobx.galr.run", "ERROR") as logs:
            code = self.dispatch("--workers", "0", "selftest")
        self.assertEqual(code, run.EXIT_VALIDATION)
        self.assertIn("--workers: workers must be positive", logs.output[0])

    def test_missing_artifact(self):
        pose = self.write_json(
            "pose.json", {"embodiment_id": "planar2f", "angles": [0, 0]}
        )
        with self.assertLogs("shoobx.galr.run", "ERROR"):
            code = self.dispatch(
                "retarget",
                "--ckpt", self.path("missing.bin"),
                "--from", "planar2f",
                "--pose", pose,
                "--to", "toy4f",
                "--out", self.path("out", "pose.json"),
            )
        self.assertEqual(code, run.EXIT_RUNTIME)


class MergeTests(RunTestCase):
    def test_flags_override_file(self):
        options = self.write_json(
            "gen.json", {"n": 50, "seed": 3, "mode": "uniform"}
        )
        args = run.parser.parse_args(
            ["gen-data", "--config", options, "--specs", "toy4f"]
            + ["--seed", "9", "--out", "x"]
        )
        merged = run.merge_run_config(args)
        self.assertEqual(merged["n"], 50)
        self.assertEqual(merged["seed"], 9)
        self.assertEqual(merged["mode"], "uniform")
        self.assertEqual(merged["split"], "0.8,0.1,0.1")
        self.assertNotIn("config_file", merged)

    def test_bad_json(self):
        with open(self.path("broken.json"), "w") as file:
            file.write("{nope")
        args = run.parser.parse_args(
            ["gen-data", "--config", self.path("broken.json")]
            + ["--specs", "a", "--out", "x"]
        )
        with self.assertRaises(run.ValidationError):
            run.merge_run_config(args)


class RetargetCommandTests(RunTestCase):
    def setUp(self):
        super().setUp()
        with open(self.path("model.bin"), "wb") as file:
            file.write(selftest.tiny_model().save())
        self.pose = self.write_json(
            "pose.json", {"embodiment_id": "planar2f", "angles": [0.2, 0.4]}
        )

    def retarget(self, target):
        return self.dispatch(
            "retarget",
            "--ckpt", self.path("model.bin"),
            "--from", "planar2f",
            "--pose", self.pose,
            "--to", target,
            "--out", self.path("out", "pose.json"),
        )

    @freeze_time("2026-03-01 12:00:00")
    def test_success(self):
        self.assertEqual(self.retarget("toy5f"), run.EXIT_OK)
        result = self.read_json("out", "pose.json")
        self.assertEqual(result["embodiment_id"], "toy5f")
        self.assertEqual(len(result["angles"]), 10)
        provenance = self.read_json("out", "run.json")
        self.assertEqual(provenance["command"], "retarget")
        self.assertEqual(provenance["created"], "2026-03-01T12:00:00+00:00")
        self.assertEqual(provenance["workers"], 1)
        self.assertEqual(provenance["config"]["target"], "toy5f")
        self.assertTrue(os.path.isdir(self.path("cache", "clouds")))

    def test_registry_mismatch(self):
        document = json.loads(handspec.bundled_spec_path("toy4f").read_text())
        document["registry_version"] = "galr-h32-v9"
        target = self.write_json("foreign.hand.json", document)
        with self.assertLogs("shoobx.galr.run", "ERROR") as logs:
            code = self.retarget(target)
        self.assertEqual(code, run.EXIT_RUNTIME)
        self.assertIn(
            "[registry] registry version mismatch: expected 'galr-h24-v1', "
            "got 'galr-h32-v9'",
            logs.output[0],
        )
        self.assertFalse(os.path.exists(self.path("out", "pose.json")))

    def test_unknown_spec(self):
        with self.assertLogs("shoobx.galr.run", "ERROR"):
            self.assertEqual(self.retarget("toy9f"), run.EXIT_VALIDATION)


class DataCommandTests(RunTestCase):
    def test_gen_data(self):
        options = self.write_json(
            "gen.json", {"n": 10, "seed": 4, "split": [0.6, 0.2, 0.2]}
        )
        code = self.dispatch(
            "gen-data", "--config", options, "--specs", "planar2f", "--n", "5",
            "--out", self.path("data"),
        )
        self.assertEqual(code, run.EXIT_OK)
        dataset = self.read_json("data", trainkit.DATASET_FILE)
        self.assertEqual(len(dataset["records"]), 5)
        self.assertEqual(dataset["cloud"]["density"], 5000.0)
        provenance = self.read_json("data", "run.json")
        self.assertEqual(provenance["config"]["n"], 5)
        self.assertEqual(provenance["config"]["seed"], 4)
        self.assertEqual(provenance["config"]["split"], [0.6, 0.2, 0.2])
        self.assertEqual(
            provenance["config"]["cloud"],
            {
                "density": 5000.0,
                "base_voxel": 0.01,
                "radius_scale": cloud.DEFAULT_RADIUS_SCALE,
            },
        )

    def test_gen_data_bad_split(self):
        with self.assertLogs("shoobx.galr.run", "ERROR"):
            code = self.dispatch(
                "gen-data", "--specs", "planar2f", "--split", "a,b,c",
                "--out", self.path("data"),
            )
        self.assertEqual(code, run.EXIT_VALIDATION)

    def test_demos(self):
        code = self.dispatch(
            "demos", "--spec", "planar3f", "--n", "2", "--region", "C",
            "--out", self.path("demos"),
        )
        self.assertEqual(code, run.EXIT_OK)
        document = self.read_json("demos", "planar3f.demos.json")
        self.assertEqual(document["region"], "C")
        self.assertEqual(len(document["trajectories"]), 2)
        self.assertTrue(all(t["success"] for t in document["trajectories"]))


class TrainCommandTests(RunTestCase):
    def setUp(self):
        super().setUp()
        with open(self.config_file, "w") as file:
            text = TEST_CONFIG % self.path("cache")
            file.write(
                text.replace("[shoobx:cloud]", "precision = float32\n\n[shoobx:cloud]")
            )
        code = self.dispatch(
            "gen-data", "--specs", "planar2f", "--n", "5", "--split", "0.6,0.2,0.2",
            "--out", self.path("data"),
        )
        self.assertEqual(code, run.EXIT_OK)
        self.options = self.write_json(
            "train.json",
            {
                "batch_size": 3,
                "eval_limit": 2,
                "encoder": encoder.TINY.to_json(),
                "decoder": {"hidden": 16, "layers": 3},
            },
        )

    def test_train_records_resolved_options(self):
        with mock.patch("sys.stdout", new_callable=io.StringIO):
            code = self.dispatch(
                "train", "--config", self.options, "--data", self.path("data"),
                "--epochs", "1", "--out", self.path("model"),
            )
        self.assertEqual(code, run.EXIT_OK)
        provenance = self.read_json("model", "run.json")["config"]
        self.assertEqual(provenance["precision"], "float32")
        self.assertEqual(provenance["workers"], 1)
        self.assertEqual(provenance["epochs"], 1)
        self.assertEqual(provenance["lr"], trainkit.TrainConfig.lr)
        self.assertEqual(provenance["encoder"]["widths"], [4, 6, 8])
        with open(self.path("model", "best.bin"), "rb") as file:
            model = retarget.GaLRModel.load(file.read())
        training = trainkit.TrainConfig.from_json(model.training)
        self.assertEqual(training.precision, "float32")
        self.assertEqual(training.encoder, encoder.TINY)


class SelftestCommandTests(RunTestCase):
    def test_pass(self):
        results = [selftest.CheckResult("fk-oracle", True, "ok")]
        with mock.patch.object(selftest, "run_selftest", return_value=results):
            with mock.patch("sys.stdout", new_callable=io.StringIO) as stdout:
                self.assertEqual(self.dispatch("selftest"), run.EXIT_OK)
        self.assertIn("fk-oracle | pass", stdout.getvalue())

    def test_fail(self):
        results = [selftest.CheckResult("fd-check", False, "error 0.1")]
        with mock.patch.object(selftest, "run_selftest", return_value=results):
            with mock.patch("sys.stdout", new_callable=io.StringIO) as stdout:
                with self.assertLogs("shoobx.galr.run", "ERROR"):
                    self.assertEqual(self.dispatch("selftest"), run.EXIT_RUNTIME)
        self.assertIn("fd-check | FAIL", stdout.getvalue())
