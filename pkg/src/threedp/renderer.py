"""Software depth rendering of voxel scenes by grid traversal.

Each pixel ray is walked through every object's occupancy grid with a 3-D
DDA; the entry distance into the first occupied cell is the hit depth. The
ray direction is scaled so its camera-z component is 1, which makes the ray
parameter equal to depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._jit import jit_enabled, njit
from .errors import DimMismatch
from .geometry import Pose, compose, invert
from .scenegraph import Camera, SceneContext, SceneGraph, world_poses
from .shapes import VoxelShape


@dataclass(frozen=True, eq=False)
class DepthImage:
    depths: np.ndarray  # (height, width)
    far: float = 500.0

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float)
        if d.ndim != 2:
            raise ValueError("depths must be 2-d")
        object.__setattr__(self, "depths", d)
        object.__setattr__(self, "far", float(self.far))

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    def hit_mask(self) -> np.ndarray:
        return self.depths < self.far


def pixel_rays(cam: Camera) -> np.ndarray:
    """Camera-frame ray directions, one per pixel in row-major order, z = 1."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(float)
    d = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    return d.reshape(-1, 3)


# ------------------------------------------------------------------ kernels


@njit(cache=True, nogil=True)
def _dda_numba(occ, s, origin, R, dirs, depth, labels, label):  # pragma: no cover - jit
    nx, ny, nz = occ.shape
    ext0, ext1, ext2 = nx * s, ny * s, nz * s
    ox, oy, oz = origin[0], origin[1], origin[2]
    for p in range(dirs.shape[0]):
        cx, cy, cz = dirs[p, 0], dirs[p, 1], dirs[p, 2]
        dx = R[0, 0] * cx + R[0, 1] * cy + R[0, 2] * cz
        dy = R[1, 0] * cx + R[1, 1] * cy + R[1, 2] * cz
        dz = R[2, 0] * cx + R[2, 1] * cy + R[2, 2] * cz
        tmin = 0.0
        tmax = depth[p]
        ok = True
        for ax in range(3):
            if ax == 0:
                o, d, e = ox, dx, ext0
            elif ax == 1:
                o, d, e = oy, dy, ext1
            else:
                o, d, e = oz, dz, ext2
            if d == 0.0:
                if o < 0.0 or o > e:
                    ok = False
            else:
                t1 = (0.0 - o) / d
                t2 = (e - o) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
        if not ok or tmin >= tmax:
            continue
        px = ox + tmin * dx
        py = oy + tmin * dy
        pz = oz + tmin * dz
        i = min(max(int(np.floor(px / s)), 0), nx - 1)
        j = min(max(int(np.floor(py / s)), 0), ny - 1)
        k = min(max(int(np.floor(pz / s)), 0), nz - 1)
        si = 1 if dx > 0 else -1
        sj = 1 if dy > 0 else -1
        sk = 1 if dz > 0 else -1
        inf = np.inf
        tmx = ((i + (si > 0)) * s - ox) / dx if dx != 0.0 else inf
        tmy = ((j + (sj > 0)) * s - oy) / dy if dy != 0.0 else inf
        tmz = ((k + (sk > 0)) * s - oz) / dz if dz != 0.0 else inf
        tdx = s / abs(dx) if dx != 0.0 else inf
        tdy = s / abs(dy) if dy != 0.0 else inf
        tdz = s / abs(dz) if dz != 0.0 else inf
        t = tmin
        while t < tmax:
            if occ[i, j, k]:
                if t < depth[p]:
                    depth[p] = t
                    labels[p] = label
                break
            if tmx <= tmy and tmx <= tmz:
                t = tmx
                tmx += tdx
                i += si
                if i < 0 or i >= nx:
                    break
            elif tmy <= tmz:
                t = tmy
                tmy += tdy
                j += sj
                if j < 0 or j >= ny:
                    break
            else:
                t = tmz
                tmz += tdz
                k += sk
                if k < 0 or k >= nz:
                    break


def _dda_numpy(occ, s, origin, R, dirs, depth, labels, label):
    """Vectorised twin of :func:`_dda_numba`: all rays advance in lock-step."""
    n = np.array(occ.shape)
    ext = n * s
    d = dirs @ R.T
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (0.0 - origin) * inv
        t2 = (ext - origin) * inv
    lo = np.where(d == 0.0, np.where((origin >= 0) & (origin <= ext), -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(d == 0.0, np.where((origin >= 0) & (origin <= ext), np.inf, -np.inf), np.maximum(t1, t2))
    tmin = np.maximum(lo.max(axis=1), 0.0)
    tmax = np.minimum(hi.min(axis=1), depth)
    rows = np.nonzero(tmin < tmax)[0]
    if len(rows) == 0:
        return
    d = d[rows]
    t = tmin[rows]
    tend = tmax[rows]
    p = origin + t[:, None] * d
    cell = np.clip(np.floor(p / s).astype(np.int64), 0, n - 1)
    step = np.where(d > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        nxt = np.where(d != 0.0, ((cell + (step > 0)) * s - origin) / d, np.inf)
        tdel = np.where(d != 0.0, s / np.abs(d), np.inf)
    active = np.ones(len(rows), dtype=bool)
    idx = np.arange(len(rows))
    while active.any():
        a = idx[active]
        hit = occ[cell[a, 0], cell[a, 1], cell[a, 2]]
        h = a[hit]
        if len(h):
            r = rows[h]
            closer = t[h] < depth[r]
            depth[r[closer]] = t[h][closer]
            labels[r[closer]] = label
            active[h] = False
        a = a[~hit]
        if len(a) == 0:
            break
        # ties resolve to the lowest axis, matching the compiled kernel
        nv = nxt[a]
        ax = np.where((nv[:, 0] <= nv[:, 1]) & (nv[:, 0] <= nv[:, 2]), 0,
                      np.where(nv[:, 1] <= nv[:, 2], 1, 2))
        t[a] = nv[np.arange(len(a)), ax]
        nxt[a, ax] += tdel[a, ax]
        cell[a, ax] += step[a, ax]
        out = (cell[a, ax] < 0) | (cell[a, ax] >= n[ax]) | (t[a] >= tend[a])
        active[a[out]] = False


def cast_object(occ: np.ndarray, s: float, cam_to_obj: Pose, dirs: np.ndarray,
                depth: np.ndarray, labels: np.ndarray, label: int, use_jit: bool | None = None) -> None:
    """Update ``depth``/``labels`` in place with hits against one object grid."""
    if use_jit is None:
        use_jit = jit_enabled()
    kernel = _dda_numba if use_jit else _dda_numpy
    kernel(np.ascontiguousarray(occ), float(s), np.ascontiguousarray(cam_to_obj.t),
           np.ascontiguousarray(cam_to_obj.R), dirs, depth, labels, int(label))


def render_poses(
    shapes: Sequence[VoxelShape],
    poses: Sequence[Pose],
    cam: Camera,
    base: DepthImage | None = None,
    return_labels: bool = False,
    use_jit: bool | None = None,
):
    """Render objects given directly by world pose.

    ``base`` seeds the depth buffer (e.g. a cached static background);
    its pixels carry label -2 in the returned label map, misses -1.
    """
    dirs = _rays_cached(cam)
    if base is None:
        depth = np.full(len(dirs), cam.far)
        labels = np.full(len(dirs), -1, dtype=np.int64)
    else:
        depth = base.depths.reshape(-1).copy()
        labels = np.where(depth < cam.far, -2, -1).astype(np.int64)
    for idx, (shape, pose) in enumerate(zip(shapes, poses)):
        if shape is None or not shape.renderable:
            continue
        cast_object(shape.occupancy, shape.resolution, compose(invert(pose), cam.pose),
                    dirs, depth, labels, idx, use_jit)
    img = DepthImage(depth.reshape(cam.height, cam.width), cam.far)
    if return_labels:
        return img, labels.reshape(cam.height, cam.width)
    return img


def render_depth(
    scene: SceneGraph,
    samples: Mapping[str, VoxelShape],
    ctx: SceneContext,
    base: DepthImage | None = None,
    return_labels: bool = False,
):
    """Depth image of a scene graph with one sampled shape per object type."""
    poses = world_poses(scene, ctx.planes)
    shapes = [samples.get(m) for m in scene.types]
    return render_poses(shapes, poses, ctx.camera, base, return_labels)


_RAY_CACHE: dict = {}


def _rays_cached(cam: Camera) -> np.ndarray:
    key = (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
    d = _RAY_CACHE.get(key)
    if d is None:
        d = np.ascontiguousarray(pixel_rays(cam))
        d.flags.writeable = False
        _RAY_CACHE[key] = d
    return d


def unproject(img: DepthImage, cam: Camera, frame: str = "world") -> np.ndarray:
    """World-frame (or camera-frame) points for every pixel that hit something."""
    if (img.height, img.width) != (cam.height, cam.width):
        raise DimMismatch("image size does not match camera")
    z = img.depths.reshape(-1)
    keep = z < img.far
    pts = _rays_cached(cam)[keep] * z[keep, None]
    return cam.pose.apply(pts) if frame == "world" else pts


# -------------------------------------------------------------------- DPT1


def write_depth(path, img: DepthImage) -> None:
    with open(path, "wb") as fh:
        fh.write(f"DPT1 {img.width} {img.height} {img.far!r}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img.depths, dtype="<f4").tobytes())


def read_depth(path) -> DepthImage:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    parts = raw[:nl].decode("ascii").split()
    if len(parts) != 4 or parts[0] != "DPT1":
        raise ValueError(f"{path}: not a DPT1 file")
    w, h, far = int(parts[1]), int(parts[2]), float(parts[3])
    data = np.frombuffer(raw[nl + 1 :], dtype="<f4")
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} values, found {data.size}")
    return DepthImage(data.astype(float).reshape(h, w), far)
