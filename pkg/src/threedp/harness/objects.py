"""Procedural desk-scale object library and the table slab."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..geometry import Pose
from ..shapes import DEFAULT_DIMS, DEFAULT_RESOLUTION, ShapeBelief, VoxelShape

TABLE = "table"
TABLE_RESOLUTION = 1.0
TABLE_CELLS = (60, 60, 2)
# table top at z = 0, centred on the world origin
TABLE_POSE = Pose(np.array([-30.0, -30.0, -2.0]))

OBJECT_TYPES = ("box", "tall_box", "cylinder", "l_shape", "blob")


def _grid():
    return np.zeros(DEFAULT_DIMS, dtype=bool)


def _centres():
    idx = np.indices(DEFAULT_DIMS).astype(float) + 0.5
    return idx[0], idx[1], idx[2]


def _box():
    o = _grid()
    o[6:26, 9:23, 11:21] = True  # 10 x 7 x 5 cm
    return o


def _tall_box():
    o = _grid()
    o[11:21, 11:21, 4:28] = True  # 5 x 5 x 12 cm
    return o


def _cylinder():
    x, y, z = _centres()
    return ((x - 16) ** 2 + (y - 16) ** 2 <= 7.0**2) & (z >= 8) & (z < 24)


def _l_shape():
    o = _grid()
    o[6:26, 11:21, 8:14] = True  # base 10 x 5 x 3 cm
    o[6:12, 11:21, 14:26] = True  # upright 3 x 5 x 6 cm
    return o


def _blob():
    x, y, z = _centres()
    a = (x - 15) ** 2 + (y - 16) ** 2 + (z - 15) ** 2 <= 7.5**2
    b = (x - 21) ** 2 + (y - 16) ** 2 + (z - 19) ** 2 <= 4.5**2
    return a | b


_BUILDERS = {
    "box": _box,
    "tall_box": _tall_box,
    "cylinder": _cylinder,
    "l_shape": _l_shape,
    "blob": _blob,
}


@lru_cache(maxsize=None)
def object_shape(name: str) -> VoxelShape:
    if name == TABLE:
        return table_shape()
    try:
        occ = _BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown object type {name!r}") from None
    return VoxelShape(occ, DEFAULT_RESOLUTION)


@lru_cache(maxsize=None)
def table_shape() -> VoxelShape:
    return VoxelShape(np.ones(TABLE_CELLS, dtype=bool), TABLE_RESOLUTION)


def table_belief() -> ShapeBelief:
    return ShapeBelief.from_shape(table_shape())


@lru_cache(maxsize=None)
def learned_belief(name: str, T: int = 8) -> ShapeBelief:
    """Belief learned from T synthetic views; cached per process."""
    from ..shape_learning import learn_from_shape

    return learn_from_shape(object_shape(name), T=T).belief
