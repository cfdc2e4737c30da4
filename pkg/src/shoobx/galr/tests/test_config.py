###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""GaLR Config Test
"""
import os
import shutil
import tempfile
import unittest
from unittest import mock

from shoobx.galr import config

TEST_CONFIG = """
[shoobx:galr]
log-level = INFO
cache-dir = %s

[shoobx:cloud]
density = 5000
base-voxel = 0.01
"""


class GaLRConfigTests(unittest.TestCase):
    def setUp(self):
        self._dir = tempfile.mkdtemp()
        self.cache_dir = os.path.join(self._dir, "cache")
        self.config_path = os.path.join(self._dir, "config.ini")
        with open(self.config_path, "w") as file:
            file.write(TEST_CONFIG % self.cache_dir)

    def tearDown(self):
        shutil.rmtree(self._dir)
        config._CONFIG = None

    @mock.patch.object(os, "environ", {})
    def test_configure(self):
        app_config = config.configure(self.config_path)
        self.assertTrue(os.path.isdir(self.cache_dir))
        self.assertEqual(app_config["shoobx:galr"]["precision"], "float64")
        self.assertEqual(app_config.getint("shoobx:galr", "workers"), 1)

    @mock.patch.object(os, "environ", {"name": "Jane", "NAME": "Joe"})
    def test_configure_dupe_env_key(self):
        # Ensure loading does not fail.
        config.configure(self.config_path)

    @mock.patch.object(os, "environ", {})
    def test_configure_override_by_env(self):
        app_config = config.load_config(self.config_path)

        self.assertEqual(app_config["shoobx:galr"]["log-level"], "INFO")
        with mock.patch.object(os, "environ", {"SHOOBX_GALR_LOG_LEVEL": "ERROR"}):
            config._CONFIG = None
            app_config = config.load_config(self.config_path)
            self.assertEqual(app_config["shoobx:galr"]["log-level"], "ERROR")

    def test_cache_dir_env_wins(self):
        env = {
            "SHOOBX_GALR_CACHE_DIR": "/from/section/env",
            "GALR_CACHE_DIR": "/from/cache/env",
        }
        with mock.patch.object(os, "environ", env):
            app_config = config.load_config(self.config_path)
        self.assertEqual(app_config["shoobx:galr"]["cache-dir"], "/from/cache/env")

    @mock.patch.object(os, "environ", {})
    def test_cloud_params(self):
        params = config.cloud_params(config.load_config(self.config_path))
        self.assertEqual(params.density, 5000.0)
        self.assertEqual(params.base_voxel, 0.01)
        self.assertEqual(params.radius_scale, 2.5)

    @mock.patch.object(os, "environ", {})
    def test_defaults_without_file(self):
        app_config = config.fill_config(None)
        self.assertEqual(app_config["shoobx:galr"]["cache-dir"], "./cache")
        self.assertEqual(app_config.getfloat("shoobx:cloud", "base-voxel"), 0.008)
