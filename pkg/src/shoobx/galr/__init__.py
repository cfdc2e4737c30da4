###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Shoobx GaLR
"""
import importlib.metadata as importlib_metadata

try:
    __version__ = importlib_metadata.version("shoobx.galr")
except importlib_metadata.PackageNotFoundError:
    __version__ = "unknown"
