###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""GaLR Errors
"""
import contextlib


class GaLRError(Exception):
    """Base error; `stage` names the pipeline stage the error surfaced in."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self):
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ValidationError(GaLRError):
    """Invalid input data or arguments."""

    def __init__(self, message, path=None, stage=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message, stage=stage)
        self.path = path


class RegistryMismatch(GaLRError):
    def __init__(self, expected, actual, stage=None):
        super().__init__(
            f"registry version mismatch: expected {expected!r}, got {actual!r}",
            stage=stage,
        )
        self.expected = expected
        self.actual = actual


class DegeneratePyramid(GaLRError):
    def __init__(self, level, stage=None):
        super().__init__(f"degenerate pyramid at stage {level}", stage=stage)
        self.level = level


class ShapeError(GaLRError):
    def __init__(self, primitive, shape_a, shape_b, stage=None):
        super().__init__(
            f"{primitive}: incompatible shapes {tuple(shape_a)} and {tuple(shape_b)}",
            stage=stage,
        )
        self.primitive = primitive


class TapeError(GaLRError):
    pass


class NonFiniteError(GaLRError):
    pass


class CheckpointError(GaLRError):
    pass


class DivergenceError(GaLRError):
    pass


class EnvError(GaLRError):
    pass


@contextlib.contextmanager
def stage(tag):
    """Tag GaLR errors raised inside the block with `tag` unless already tagged."""
    try:
        yield
    except GaLRError as err:
        if err.stage is None:
            err.stage = tag
        raise
