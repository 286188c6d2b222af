"""Voxel occupancy grids and independent-Bernoulli shape beliefs.

A grid with dims ``(h, w, l)`` and cell size ``s`` occupies
``[0, h*s] x [0, w*s] x [0, l*s]`` in its object frame; cell ``(i, j, k)``
spans ``[i*s, (i+1)*s]`` along x and so on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimMismatch, EmptyShape
from .geometry import ContactPlane, Pose, cuboid_planes

DEFAULT_DIMS = (32, 32, 32)
DEFAULT_RESOLUTION = 0.5


@dataclass(frozen=True, eq=False)
class VoxelShape:
    occupancy: np.ndarray
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        if occ.ndim != 3:
            raise ValueError("occupancy must be a 3-d array")
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    @property
    def renderable(self) -> bool:
        return bool(self.occupancy.any())

    def extent(self) -> np.ndarray:
        return np.array(self.dims, dtype=float) * self.resolution

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Tight axis-aligned box around occupied cells, object frame."""
        idx = np.argwhere(self.occupancy)
        if len(idx) == 0:
            raise EmptyShape("shape has no occupied cells")
        s = self.resolution
        return idx.min(axis=0) * s, (idx.max(axis=0) + 1) * s

    def centre(self) -> np.ndarray:
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def key(self) -> bytes:
        return np.packbits(self.occupancy).tobytes()


@dataclass(frozen=True, eq=False)
class ShapeBelief:
    probs: np.ndarray
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 3:
            raise ValueError("probs must be a 3-d array")
        if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must lie in [0, 1]")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.probs.shape)

    @staticmethod
    def from_shape(shape: VoxelShape) -> "ShapeBelief":
        return ShapeBelief(shape.occupancy.astype(float), shape.resolution)

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def entropy(self) -> float:
        """Total Bernoulli entropy in nats."""
        p = np.clip(self.probs, 1e-300, 1.0)
        q = np.clip(1.0 - self.probs, 1e-300, 1.0)
        return float(-np.sum(self.probs * np.log(p) + (1.0 - self.probs) * np.log(q)))


def sample_shape(belief: ShapeBelief, rng: np.random.Generator) -> VoxelShape:
    occ = rng.random(belief.dims) < belief.probs
    return VoxelShape(occ, belief.resolution)


def mode_shape(belief: ShapeBelief, threshold: float = 0.5) -> VoxelShape:
    """Cells with probability at least ``threshold``.

    Ties at exactly 0.5 count as occupied so that unobserved interiors of a
    learned object stay solid.
    """
    return VoxelShape(belief.probs >= threshold, belief.resolution)


def bounding_cuboid_planes(shape: VoxelShape) -> tuple[ContactPlane, ...]:
    lo, hi = shape.bounds()
    return cuboid_planes(lo, hi)


def _check_same_grid(a, b):
    if a.dims != b.dims or a.resolution != b.resolution:
        raise DimMismatch(f"grids differ: {a.dims}@{a.resolution} vs {b.dims}@{b.resolution}")


def shape_iou(a: VoxelShape, b: VoxelShape) -> float:
    _check_same_grid(a, b)
    union = np.count_nonzero(a.occupancy | b.occupancy)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.occupancy & b.occupancy) / union


def surface_mask(occ: np.ndarray) -> np.ndarray:
    """Occupied cells with at least one empty or out-of-grid face neighbour."""
    interior = ndimage.binary_erosion(occ, structure=ndimage.generate_binary_structure(3, 1),
                                      border_value=0)
    return occ & ~interior


def surface_cloud(shape: VoxelShape, pose: Pose | None = None) -> np.ndarray:
    if not shape.renderable:
        raise EmptyShape("shape has no occupied cells")
    idx = np.argwhere(surface_mask(shape.occupancy))
    pts = (idx + 0.5) * shape.resolution
    return pts if pose is None else pose.apply(pts)


def render_key(shape: VoxelShape) -> bytes:
    """Shapes with equal keys have identical outer surfaces, hence identical renders."""
    filled = ndimage.binary_fill_holes(shape.occupancy)
    return np.packbits(filled).tobytes()


# -------------------------------------------------------------------- VOX1 io


def write_vox(path, grid) -> None:
    """Write a VoxelShape or ShapeBelief as VOX1."""
    data = grid.probs if isinstance(grid, ShapeBelief) else grid.occupancy.astype(float)
    h, w, l = data.shape
    with open(path, "wb") as fh:
        fh.write(f"VOX1 {h} {w} {l} {grid.resolution!r}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_vox(path) -> ShapeBelief:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    parts = raw[:nl].decode("ascii").split()
    if len(parts) != 5 or parts[0] != "VOX1":
        raise ValueError(f"{path}: not a VOX1 file")
    h, w, l = (int(v) for v in parts[1:4])
    s = float(parts[4])
    data = np.frombuffer(raw[nl + 1 :], dtype="<f4")
    if data.size != h * w * l:
        raise ValueError(f"{path}: expected {h * w * l} values, found {data.size}")
    return ShapeBelief(data.astype(float).reshape(h, w, l), s)
