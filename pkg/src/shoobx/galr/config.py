###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Application Configuration
"""
from configparser import ConfigParser
import logging
import os

from shoobx.galr import cloud

_CONFIG = None

# Define Source code root.
# pragma: no cover
if __file__.split("/")[-4] == "src":
    # Dev sandbox
    SHOOBX_GALR_HOME = __file__.rsplit("src", 1)[0]
else:
    # Deployment virtualenv
    SHOOBX_GALR_HOME = __file__.rsplit("lib", 1)[0]  # pragma: no cover

SHOOBX_GALR_HOME = os.environ.get("SHOOBX_GALR_HOME", SHOOBX_GALR_HOME)

DEFAULT_CONFIG_FILE = os.path.join(SHOOBX_GALR_HOME, "config", "galr.cfg")

CACHE_ENV = "GALR_CACHE_DIR"

log = logging.getLogger("shoobx.galr.config")


def fill_config(config_path):
    """
    Config priority

    default values -> config -> env -> GALR_CACHE_DIR
    """
    config = ConfigParser()
    default_values = {
        "shoobx:galr": {
            "log-level": "INFO",
            "cache-dir": "./cache",
            "workers": "1",
            "precision": "float64",
        },
        "shoobx:cloud": {
            "density": str(cloud.DEFAULT_DENSITY),
            "base-voxel": str(cloud.DEFAULT_BASE_VOXEL),
            "radius-scale": str(cloud.DEFAULT_RADIUS_SCALE),
        },
    }

    for section, option in default_values.items():
        config[section] = {}
        for key, value in option.items():
            config[section][key] = value
    if config_path:
        config.read(config_path)

    for section in config.sections():
        for key in config[section]:
            env_section = section.upper().replace(":", "_")
            env_key = key.upper().replace("-", "_")
            os_key = f"{env_section}_{env_key}"
            if os_key in os.environ:
                config[section][key] = os.environ[os_key]
    if CACHE_ENV in os.environ:
        config["shoobx:galr"]["cache-dir"] = os.environ[CACHE_ENV]
    return config


def load_config(config_path=DEFAULT_CONFIG_FILE):
    global _CONFIG
    if _CONFIG is not None:
        return _CONFIG

    _CONFIG = fill_config(config_path)

    return _CONFIG


def cloud_params(config):
    return cloud.CloudParams(
        density=config.getfloat("shoobx:cloud", "density"),
        base_voxel=config.getfloat("shoobx:cloud", "base-voxel"),
        radius_scale=config.getfloat("shoobx:cloud", "radius-scale"),
    )


def configure(config_file=DEFAULT_CONFIG_FILE, verbose=False):
    config = load_config(config_file)

    # Setup logging.
    filename = None
    if config.has_option("shoobx:galr", "log-file"):
        filename = config.get("shoobx:galr", "log-file")
    level = "DEBUG" if verbose else config.get("shoobx:galr", "log-level")
    logging.basicConfig(
        filename=filename,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    directory = config.get("shoobx:galr", "cache-dir")
    if not os.path.exists(directory):
        os.makedirs(directory)
    log.debug("Cache directory %s", directory)

    return config
