"""Rigid registration of a rendered object cloud onto observed points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DegenerateCorrespondences
from ..geometry import Pose, compose, invert, matrix_to_quat
from ..renderer import render_poses, unproject
from ..scenegraph import Camera
from ..shapes import VoxelShape


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation R and translation t with R @ src + t ~= dst."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def _check_pairs(src: np.ndarray, dst: np.ndarray) -> None:
    if len(src) < 3:
        raise DegenerateCorrespondences(f"only {len(src)} correspondences")
    for pts in (src, np.unique(dst, axis=0)):
        if len(pts) < 3:
            raise DegenerateCorrespondences("fewer than 3 distinct matched points")
        c = pts - pts.mean(axis=0)
        ev = np.linalg.eigvalsh(c.T @ c)  # squared singular values, ascending
        if ev[1] <= 1e-12 * max(ev[2], 1.0):
            raise DegenerateCorrespondences("correspondences are collinear")


def visible_model_points(shape: VoxelShape, pose: Pose, cam: Camera) -> np.ndarray:
    """Object-frame coordinates of the points the camera sees at ``pose``."""
    img = render_poses([shape], [pose], cam)
    return invert(pose).apply(unproject(img, cam))


@dataclass
class ICPResult:
    pose: Pose
    history: list = field(default_factory=list)  # mean correspondence distance


def icp_fixed_source(
    src_local: np.ndarray,
    init: Pose,
    target: np.ndarray,
    iters: int = 20,
    trim: float = 4.0,
    tree: cKDTree | None = None,
    tol: float = 1e-4,
) -> ICPResult:
    """Point-to-point ICP with a fixed object-frame source set.

    A step is kept only if it does not increase the mean correspondence
    distance, so the recorded history is non-increasing.
    """
    tree = tree or cKDTree(target)
    pose = init
    d, idx = tree.query(pose.apply(src_local))
    best = float(d.mean())
    history = [best]
    for _ in range(iters):
        keep = d <= max(trim * np.median(d), 1e-9)
        _check_pairs(src_local[keep], target[idx[keep]])
        world = pose.apply(src_local[keep])
        R, t = kabsch(world, target[idx[keep]])
        cand = compose(Pose(t, matrix_to_quat(R)), pose)
        d_new, idx_new = tree.query(cand.apply(src_local))
        score = float(d_new.mean())
        if score > best:
            break
        improved = best - score
        pose, d, idx, best = cand, d_new, idx_new, score
        history.append(best)
        if improved < tol:
            break
    return ICPResult(pose, history)


def icp_refine(
    shape: VoxelShape,
    init: Pose,
    target: np.ndarray,
    iters: int = 20,
    cam: Camera | None = None,
    rounds: int = 2,
) -> Pose:
    """Align the rendered visible surface of ``shape`` to ``target``.

    The source is re-rendered at the current estimate at the start of each
    round so self-occlusion follows the pose.
    """
    return icp_refine_full(shape, init, target, iters, cam, rounds).pose


def icp_refine_full(shape, init, target, iters=20, cam=None, rounds=2) -> ICPResult:
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(target) == 0:
        raise DegenerateCorrespondences("empty target")
    cam = cam or Camera()
    tree = cKDTree(target)
    pose = init
    result = ICPResult(init, [])
    for _ in range(max(1, rounds)):
        src = visible_model_points(shape, pose, cam)
        if len(src) < 3:
            raise DegenerateCorrespondences("object not visible from the camera")
        result = icp_fixed_source(src, pose, target, iters, tree=tree)
        if result.pose == pose:
            break
        pose = result.pose
    return result
