"""Data-driven pose hypotheses from clusters of unexplained points."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateCorrespondences
from ..geometry import Pose
from ..likelihood import CloudLikParams, cloud_loglik
from ..renderer import render_poses, unproject
from ..scenegraph import Camera
from ..shapes import VoxelShape
from .dbscan import dbscan
from .icp import icp_refine
from .kernels import KernelConfig, PoseProposal
from .orientations import CUBE_QUATERNIONS, CUBE_ROTATIONS


def nominal_poses(centre: np.ndarray, shape: VoxelShape) -> list[Pose]:
    """One pose per cube rotation placing the shape's box centre at ``centre``."""
    c_obj = shape.centre()
    return [Pose(centre - R @ c_obj, q) for R, q in zip(CUBE_ROTATIONS, CUBE_QUATERNIONS)]


def cluster_centre(points: np.ndarray, shape: VoxelShape, cam: Camera) -> np.ndarray:
    """Mean of the visible points pushed back along the view ray.

    Visible points lie on the near side of the object, so the centroid of the
    object sits roughly a quarter of its size further away.
    """
    m = points.mean(axis=0)
    ray = m - cam.pose.t
    ray /= np.linalg.norm(ray)
    lo, hi = shape.bounds()
    return m + ray * 0.25 * float(np.mean(hi - lo))


def pose_hypotheses(
    unexplained: np.ndarray,
    shape: VoxelShape,
    cfg: KernelConfig,
    cam: Camera,
    lik: CloudLikParams | None = None,
    refine: bool = True,
) -> list[tuple[Pose, float]]:
    """Cluster, seed 24 orientations per cluster, refine with ICP, score.

    Returns ``(pose, log-score)`` pairs sorted best first.
    """
    unexplained = np.asarray(unexplained, dtype=float).reshape(-1, 3)
    lik = lik or CloudLikParams()
    clusters, _ = dbscan(unexplained, cfg.dbscan_eps, cfg.dbscan_min_pts)
    if clusters:
        # edge slivers left by a nearly right render are not object candidates
        big = max(len(c) for c in clusters)
        clusters = [c for c in clusters if len(c) >= cfg.min_cluster_frac * big]
    out = []
    for idx in clusters:
        pts = unexplained[idx]
        for pose in nominal_poses(cluster_centre(pts, shape, cam), shape):
            if refine:
                try:
                    pose = icp_refine(shape, pose, pts, cfg.icp_iters, cam, cfg.icp_rounds)
                except DegenerateCorrespondences:
                    continue
            Ytil = unproject(render_poses([shape], [pose], cam), cam)
            out.append((pose, cloud_loglik(unexplained, Ytil, lik)))
    out.sort(key=lambda x: -x[1])
    return out


def hypotheses_proposal(hyps, cfg: KernelConfig) -> PoseProposal | None:
    """Mixture proposal over the best distinct hypotheses.

    Weights are a tempered softmax mixed with a uniform floor so lower-ranked
    placements keep some mass. Symmetric copies score identically and are
    dropped.
    """
    if not hyps:
        return None
    top = []
    for p, s in hyps:
        if all(abs(s - s2) > 1e-6 * max(1.0, abs(s)) for _, s2 in top):
            top.append((p, s))
        if len(top) == cfg.hyp_top_k:
            break
    scores = np.array([s for _, s in top])
    w = np.exp((scores - scores.max()) / cfg.hyp_temperature)
    w = (1.0 - cfg.hyp_floor) * w / w.sum() + cfg.hyp_floor / len(top)
    return PoseProposal(tuple(p for p, _ in top), w / w.sum(), cfg.dd_trans_std, cfg.dd_rot_kappa)
