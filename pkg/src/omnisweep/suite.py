"""Bundled rigs and scenes.

``suite`` is the five-scene evaluation set (spheres, walls, boxes, far
range, near clutter); ``mini`` is a single textured sphere for smoke runs.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .geometry import RigConfig, load_rig
from .synth import Scene, load_scene

SUITE = ("spheres", "walls", "boxes", "far", "clutter")


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("omnisweep").joinpath("data", *parts)))


def bundled_rig(name: str = "default") -> RigConfig:
    """``default`` (960x480 grid), ``suite`` (480x240, narrow band) or ``mini``."""
    return load_rig(data_path(f"rig_{name}.yaml"))


def bundled_scene(name: str) -> Scene:
    return load_scene(data_path("scenes", f"{name}.yaml"))


def suite_scenes() -> list[Scene]:
    return [bundled_scene(n) for n in SUITE]
