"""Learn per-voxel occupancy beliefs from depth views under pose uncertainty.

Each camera ray is marched through the object region: cells the ray leaves
before reaching the observed depth are free, the cell holding the observed
surface point is occupied, and anything behind it is unobserved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._jit import jit_enabled, njit
from .distributions import sample_vmf_s3
from .errors import InconsistentObservation, WeightMismatch
from .geometry import IDENTITY, ContactPlane, Pose, compose, invert
from .renderer import DepthImage, _rays_cached, render_poses
from .scenegraph import Camera, look_at
from .shapes import (
    DEFAULT_DIMS,
    DEFAULT_RESOLUTION,
    ShapeBelief,
    VoxelShape,
    bounding_cuboid_planes,
    mode_shape,
)

UNOBSERVED, FREE, OCCUPIED = 0, 1, 2


@dataclass(frozen=True)
class PoseParticle:
    map: VoxelShape  # static background
    map_pose: Pose
    object_pose: Pose  # pose of the object grid in the world
    camera_poses: tuple
    weight: float


@dataclass(frozen=True)
class PoseBeliefParticles:
    particles: tuple

    def __post_init__(self):
        w = np.array([p.weight for p in self.particles])
        if len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise WeightMismatch("particle weights must be nonnegative and sum to 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.particles])


@dataclass(frozen=True, eq=False)
class VoxelPosterior:
    probs: np.ndarray
    status: np.ndarray  # UNOBSERVED / FREE / OCCUPIED per cell
    n_conflicts: int = 0


# ----------------------------------------------------------------- marching


def _march_py(free, occ, s, origin, R, dirs, depths, far, eps):
    nx, ny, nz = free.shape
    ext0, ext1, ext2 = nx * s, ny * s, nz * s
    ox, oy, oz = origin[0], origin[1], origin[2]
    for p in range(dirs.shape[0]):
        d_obs = depths[p]
        hit = d_obs < far
        t_hit = d_obs + eps
        cx, cy, cz = dirs[p, 0], dirs[p, 1], dirs[p, 2]
        dx = R[0, 0] * cx + R[0, 1] * cy + R[0, 2] * cz
        dy = R[1, 0] * cx + R[1, 1] * cy + R[1, 2] * cz
        dz = R[2, 0] * cx + R[2, 1] * cy + R[2, 2] * cz
        tmin = 0.0
        tmax = np.inf
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
        if not ok or tmin >= tmax or (hit and tmin > t_hit):
            continue
        i = min(max(int(np.floor((ox + tmin * dx) / s)), 0), nx - 1)
        j = min(max(int(np.floor((oy + tmin * dy) / s)), 0), ny - 1)
        k = min(max(int(np.floor((oz + tmin * dz) / s)), 0), nz - 1)
        si = 1 if dx > 0 else -1
        sj = 1 if dy > 0 else -1
        sk = 1 if dz > 0 else -1
        tmx = ((i + (si > 0)) * s - ox) / dx if dx != 0.0 else np.inf
        tmy = ((j + (sj > 0)) * s - oy) / dy if dy != 0.0 else np.inf
        tmz = ((k + (sk > 0)) * s - oz) / dz if dz != 0.0 else np.inf
        tdx = s / abs(dx) if dx != 0.0 else np.inf
        tdy = s / abs(dy) if dy != 0.0 else np.inf
        tdz = s / abs(dz) if dz != 0.0 else np.inf
        t_in = tmin
        while True:
            t_out = min(tmx, tmy, tmz)
            if hit and t_out > t_hit:
                occ[i, j, k] += 1
                break
            # cells only touched at an edge or corner (zero traversal length)
            # are left alone; at the hit point they may be the surface itself
            if t_out - t_in > eps:
                free[i, j, k] += 1
            t_in = t_out
            if tmx <= tmy and tmx <= tmz:
                tmx += tdx
                i += si
                if i < 0 or i >= nx:
                    break
            elif tmy <= tmz:
                tmy += tdy
                j += sj
                if j < 0 or j >= ny:
                    break
            else:
                tmz += tdz
                k += sk
                if k < 0 or k >= nz:
                    break


_march_numba = njit(cache=True, nogil=True)(_march_py)


def march_counts(dims, s: float, grid_pose: Pose, cam: Camera, cam_pose: Pose,
                 img: DepthImage, eps: float = 1e-7, use_jit: bool | None = None):
    """Per-cell (free, occupied) ray counts for one view."""
    if use_jit is None:
        use_jit = jit_enabled()
    free = np.zeros(dims, dtype=np.int64)
    occ = np.zeros(dims, dtype=np.int64)
    cam_to_grid = compose(invert(grid_pose), cam_pose)
    kernel = _march_numba if use_jit else _march_py
    kernel(free, occ, float(s), np.ascontiguousarray(cam_to_grid.t),
           np.ascontiguousarray(cam_to_grid.R), _rays_cached(cam),
           np.ascontiguousarray(img.depths.reshape(-1)), float(img.far), float(eps))
    return free, occ


def voxel_posterior(
    map_shape: VoxelShape | None,
    poses: Sequence[Pose],
    images: Sequence[DepthImage],
    cam: Camera,
    p_occ: float = 0.5,
    object_pose: Pose = IDENTITY,
    dims=DEFAULT_DIMS,
    resolution: float = DEFAULT_RESOLUTION,
    map_pose: Pose = IDENTITY,
    conflict_tol: float = 0.9,
) -> VoxelPosterior:
    """Occupancy posterior of the object region given views with known poses.

    A cell marked both free and occupied is resolved as free. If more than
    ``conflict_tol`` of the hit cells are contradicted this way the views
    cannot belong to one static scene and InconsistentObservation is raised. ``map_shape`` is the known background; hits that
    land inside it are not attributed to the object.
    """
    if len(poses) != len(images):
        raise ValueError("need one camera pose per image")
    free = np.zeros(dims, dtype=np.int64)
    occ = np.zeros(dims, dtype=np.int64)
    for pose, img in zip(poses, images):
        f, o = march_counts(dims, resolution, object_pose, cam, pose, img)
        free += f
        occ += o
    if map_shape is not None and occ.any():
        occ[_inside_map(np.argwhere(occ > 0), resolution, object_pose, map_shape, map_pose)] = 0
    is_free = free > 0
    is_occ = (occ > 0) & ~is_free
    conflicts = int(np.count_nonzero((occ > 0) & is_free))
    if conflicts > conflict_tol * max(int(np.count_nonzero(occ > 0)), 1):
        raise InconsistentObservation(f"{conflicts} cells observed both free and occupied")
    probs = np.full(dims, float(p_occ))
    probs[is_free] = 0.0
    probs[is_occ] = 1.0
    status = np.full(dims, UNOBSERVED, dtype=np.int8)
    status[is_free] = FREE
    status[is_occ] = OCCUPIED
    return VoxelPosterior(probs, status, conflicts)


def _inside_map(cells, s, object_pose, map_shape, map_pose):
    """Boolean index (tuple form) of ``cells`` whose centres are map-occupied."""
    centres = object_pose.apply((cells + 0.5) * s)
    local = invert(map_pose).apply(centres)
    idx = np.floor(local / map_shape.resolution).astype(int)
    inside = np.all((idx >= 0) & (idx < np.array(map_shape.dims)), axis=1)
    hit = np.zeros(len(cells), dtype=bool)
    hit[inside] = map_shape.occupancy[tuple(idx[inside].T)]
    sel = cells[hit]
    return tuple(sel.T)


def collapse_mixture(posteriors: Sequence[VoxelPosterior], weights, resolution: float = DEFAULT_RESOLUTION) -> ShapeBelief:
    """Independent-Bernoulli fit minimising KL(mixture || q): the weighted mean."""
    w = np.asarray(weights, dtype=float)
    if len(w) != len(posteriors) or len(w) == 0:
        raise WeightMismatch("one weight per posterior required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise WeightMismatch("weights must be nonnegative and sum to 1")
    probs = np.tensordot(w, np.stack([p.probs for p in posteriors]), axes=1)
    return ShapeBelief(np.clip(probs, 0.0, 1.0), resolution)


@dataclass(frozen=True)
class LearnedShape:
    belief: ShapeBelief
    planes: tuple  # ContactPlane x 6 from the mode shape


def learn_shape(images: Sequence[DepthImage], belief: PoseBeliefParticles, cam: Camera,
                dims=DEFAULT_DIMS, resolution: float = DEFAULT_RESOLUTION,
                p_occ: float = 0.5) -> LearnedShape:
    posts = [
        voxel_posterior(p.map, p.camera_poses, images, cam, p_occ, p.object_pose, dims,
                        resolution, p.map_pose)
        for p in belief.particles
    ]
    qb = collapse_mixture(posts, belief.weights, resolution)
    return LearnedShape(qb, bounding_cuboid_planes(mode_shape(qb)))


def synth_pose_belief(true_poses: Sequence[Pose], K: int, rng, trans_std: float = 0.0,
                      rot_kappa: float | None = None, map_shape: VoxelShape | None = None,
                      map_pose: Pose = IDENTITY, object_pose: Pose = IDENTITY) -> PoseBeliefParticles:
    """Stand-in for a SLAM posterior: the truth plus K-1 perturbed copies."""
    if K < 1:
        raise ValueError("K must be at least 1")
    parts = []
    for k in range(K):
        poses = tuple(true_poses)
        if k > 0 and (trans_std > 0 or rot_kappa):
            noisy = []
            for p in true_poses:
                t = p.t + (rng.normal(0.0, trans_std, 3) if trans_std > 0 else 0.0)
                q = sample_vmf_s3(p.q, rot_kappa, rng) if rot_kappa else p.q
                noisy.append(Pose(t, q))
            poses = tuple(noisy)
        parts.append(PoseParticle(map_shape, map_pose, object_pose, poses, 1.0 / K))
    return PoseBeliefParticles(tuple(parts))


# ------------------------------------------------------ synthetic training rig


def make_room(half_extent: float = 60.0, resolution: float = 2.0) -> tuple[VoxelShape, Pose]:
    """Hollow box (floor, ceiling, four walls) centred on the world origin."""
    n = int(round(2 * half_extent / resolution))
    occ = np.zeros((n, n, n), dtype=bool)
    occ[[0, -1], :, :] = True
    occ[:, [0, -1], :] = True
    occ[:, :, [0, -1]] = True
    return VoxelShape(occ, resolution), Pose(np.full(3, -half_extent))


def training_cameras(target, T: int = 5, radius: float = 30.7) -> list[Pose]:
    """Default rig around ``target``.

    T <= 5: a ring slightly below the object plus one overhead view. Larger T
    adds a view from underneath and alternates ring elevations, which closes
    the observed surface on concave or tall objects.
    """
    target = np.asarray(target, dtype=float)
    if T < 1:
        return []
    poses = []
    if T <= 5:
        ring = T - 1 if T >= 2 else 1
        elevs = [np.deg2rad(-15.0)] * ring
    else:
        ring = T - 2
        elevs = [np.deg2rad(-35.0 if k % 2 == 0 else 35.0) for k in range(ring)]
    for k in range(ring):
        az = 2 * np.pi * k / ring + np.deg2rad(10.0)
        el = elevs[k]
        eye = target + radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        poses.append(look_at(eye, target))
    if T >= 2:
        # slightly off-axis so rays do not line up with voxel edges
        poses.append(look_at(target + np.array([0.37, 0.23, radius]), target, up=(0.0, 1.0, 0.0)))
    if T > 5:
        poses.append(look_at(target + np.array([0.29, -0.41, -radius]), target, up=(0.0, 1.0, 0.0)))
    return poses[:T]


def training_camera() -> Camera:
    """Finer than the scene camera so every surface cell is hit by some ray."""
    return Camera(fx=240.0, fy=240.0, cx=96.0, cy=96.0, width=192, height=192)


def render_training_views(shape: VoxelShape, object_pose: Pose, cam: Camera,
                          camera_poses: Sequence[Pose], room=None) -> list[DepthImage]:
    room_shape, room_pose = room if room is not None else make_room()
    out = []
    for cp in camera_poses:
        c = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, cp, cam.far)
        out.append(render_poses([room_shape, shape], [room_pose, object_pose], c))
    return out


def learn_from_shape(shape: VoxelShape, T: int = 5, cam: Camera | None = None,
                     K: int = 1, rng=None, trans_std: float = 0.0,
                     rot_kappa: float | None = None) -> LearnedShape:
    """Render T synthetic views of ``shape`` in the training room and learn it back."""
    cam = cam or training_camera()
    room = make_room()
    obj_pose = Pose(-shape.extent() / 2.0)  # grid centred on the origin
    cams = training_cameras(np.zeros(3), T)
    images = render_training_views(shape, obj_pose, cam, cams, room)
    rng = rng if rng is not None else np.random.default_rng(0)
    belief = synth_pose_belief(cams, K, rng, trans_std, rot_kappa, room[0], room[1], obj_pose)
    return learn_shape(images, belief, cam, shape.dims, shape.resolution)
