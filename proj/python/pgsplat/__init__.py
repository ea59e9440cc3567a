"""Gaussian scenes optimized against rendered views and a coupled fluid/rigid simulation."""

import json

from . import _pgs
from ._pgs import (
    KAPPA_INFINITY,
    Camera,
    DegenerateScenario,
    GaussianSet,
    SolverFailure,
    UsageError,
    __version__,
    load_cameras,
    load_gaussians,
    occupancy,
    physics_loss,
    render,
    save_gaussians,
    ssim,
    train,
)

__all__ = [
    "KAPPA_INFINITY",
    "Camera",
    "DegenerateScenario",
    "GaussianSet",
    "SolverFailure",
    "UsageError",
    "__version__",
    "build_scenario",
    "default_config",
    "load_cameras",
    "load_gaussians",
    "occupancy",
    "physics_loss",
    "render",
    "resolve_config",
    "save_gaussians",
    "ssim",
    "train",
]


def default_config(generator="vessel"):
    """Built-in configuration of a generator as a dict."""
    return json.loads(_pgs.default_config(generator))


def resolve_config(config, overrides=None):
    """Merge a (partial) config dict with its generator defaults and dot-path overrides."""
    return json.loads(_pgs.resolve_config(json.dumps(config), _stringify(overrides)))


def build_scenario(config, overrides=None):
    """Ground truth, views and initial set for a config dict."""
    return _pgs.build_scenario(json.dumps(config), _stringify(overrides))


def _stringify(overrides):
    out = {}
    for key, value in (overrides or {}).items():
        out[key] = json.dumps(value) if not isinstance(value, str) else value
    return out
