"""Hidden-object scenarios: a wall on the table hides part of the region behind it."""

from __future__ import annotations

import numpy as np

from ..existence import ExistenceContext, ExistencePrior
from ..geometry import Pose
from ..renderer import DepthImage, render_poses
from ..scenegraph import Camera
from ..shapes import VoxelShape
from .objects import TABLE_POSE, object_shape, table_shape
from .scenes import default_camera

# (width, height) in cm, in order of increasing occluded volume
OCCLUDER_LEVELS = ((10.0, 7.0), (16.0, 11.0), (20.0, 13.0), (24.0, 15.0), (30.0, 19.0))
WALL_THICKNESS = 1.0
WALL_Y = 0.0
HIDDEN_LO = np.array([-12.0, 2.0, 2.0])
HIDDEN_HI = np.array([12.0, 16.0, 8.0])


def wall_shape(width: float, height: float, resolution: float = 0.5) -> VoxelShape:
    dims = (int(round(width / resolution)), int(round(WALL_THICKNESS / resolution)),
            int(round(height / resolution)))
    return VoxelShape(np.ones(dims, dtype=bool), resolution)


def wall_pose(width: float) -> Pose:
    """Wall standing on the table top, centred in x, front face at y = WALL_Y."""
    return Pose(np.array([-width / 2.0, WALL_Y, 0.0]))


def occluder_scene(level: int, camera: Camera | None = None) -> tuple[DepthImage, DepthImage]:
    """(observed, known-scene render): the observation shows only table and wall."""
    cam = camera or default_camera()
    w, h = OCCLUDER_LEVELS[level]
    img = render_poses([table_shape(), wall_shape(w, h)], [TABLE_POSE, wall_pose(w)], cam)
    return img, img


def no_occluder_scene(camera: Camera | None = None) -> tuple[DepthImage, DepthImage]:
    cam = camera or default_camera()
    img = render_poses([table_shape()], [TABLE_POSE], cam)
    return img, img


def existence_setup(level: int | None, hidden_types=("cylinder",), p_pres=0.5,
                    camera: Camera | None = None):
    """Observation, context and prior for one occluder level (None: no wall)."""
    cam = camera or default_camera()
    observed, base = no_occluder_scene(cam) if level is None else occluder_scene(level, cam)
    shapes = {m: object_shape(m) for m in hidden_types}
    ps = (p_pres,) * len(hidden_types) if np.isscalar(p_pres) else tuple(p_pres)
    ctx = ExistenceContext(shapes, cam, HIDDEN_LO, HIDDEN_HI, base)
    return observed, ctx, ExistencePrior(tuple(hidden_types), ps)
