"""Observation models: robust point-cloud mixture, per-pixel depth mixture,
and the pseudo-marginal estimator that integrates over uncertain shapes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .errors import DimMismatch
from ._jit import jit_enabled, njit
from .renderer import DepthImage, _rays_cached, render_depth, unproject
from .scenegraph import SceneContext, SceneGraph
from .shapes import ShapeBelief, VoxelShape, render_key, sample_shape


@dataclass(frozen=True)
class CloudLikParams:
    C: float = 0.01
    r_ball: float = 0.5
    bounds_volume: float = 1e6
    # "rendered": normalise by the number of rendered points; "pixels": by image size
    k_tilde: str = "rendered"

    def __post_init__(self):
        if not 0.0 < self.C < 1.0:
            raise ValueError("C must lie in (0, 1)")
        if self.r_ball <= 0.0:
            raise ValueError("r_ball must be positive")
        if self.k_tilde not in ("rendered", "pixels"):
            raise ValueError("k_tilde must be 'rendered' or 'pixels'")


def _ball_counts(Y: np.ndarray, Ytil: np.ndarray, r: float, method: str) -> np.ndarray:
    if method == "kdtree":
        return np.asarray(cKDTree(Ytil).query_ball_point(Y, r, return_length=True), dtype=float)
    if method == "naive":
        counts = np.empty(len(Y))
        r2 = r * r
        for start in range(0, len(Y), 512):
            chunk = Y[start : start + 512]
            d2 = ((chunk[:, None, :] - Ytil[None, :, :]) ** 2).sum(axis=-1)
            counts[start : start + 512] = (d2 <= r2).sum(axis=1)
        return counts
    raise ValueError(f"unknown method {method!r}")


def _window_counts_py(obs, obs_ok, ren, ren_ok, r, fx, fy, cx, cy, out):
    H, W = obs_ok.shape
    r2 = r * r
    n = 0
    for v in range(H):
        for u in range(W):
            if not obs_ok[v, u]:
                continue
            x, y, z = obs[v, u, 0], obs[v, u, 1], obs[v, u, 2]
            if z <= r:
                wu, wv = W, H
            else:
                wu = int(r * (fx + abs(u - cx)) / (z - r)) + 1
                wv = int(r * (fy + abs(v - cy)) / (z - r)) + 1
            c = 0
            for vv in range(max(0, v - wv), min(H, v + wv + 1)):
                for uu in range(max(0, u - wu), min(W, u + wu + 1)):
                    if ren_ok[vv, uu]:
                        dx = ren[vv, uu, 0] - x
                        dy = ren[vv, uu, 1] - y
                        dz = ren[vv, uu, 2] - z
                        if dx * dx + dy * dy + dz * dz <= r2:
                            c += 1
            out[n] = c
            n += 1


_window_counts_numba = njit(cache=True, nogil=True)(_window_counts_py)


def _window_counts_numpy(obs, obs_ok, ren, ren_ok, r, fx, fy, cx, cy):
    H, W = obs_ok.shape
    z = obs[..., 2]
    v, u = np.mgrid[0:H, 0:W]
    with np.errstate(divide="ignore", invalid="ignore"):
        wu = np.where(z > r, np.floor(r * (fx + np.abs(u - cx)) / (z - r)) + 1, W)
        wv = np.where(z > r, np.floor(r * (fy + np.abs(v - cy)) / (z - r)) + 1, H)
    wu = int(min(W, wu[obs_ok].max(initial=0)))
    wv = int(min(H, wv[obs_ok].max(initial=0)))
    counts = np.zeros((H, W), dtype=np.int64)
    pad = np.zeros((H + 2 * wv, W + 2 * wu, 3))
    pad_ok = np.zeros((H + 2 * wv, W + 2 * wu), dtype=bool)
    pad[wv : wv + H, wu : wu + W] = ren
    pad_ok[wv : wv + H, wu : wu + W] = ren_ok
    r2 = r * r
    for dv in range(-wv, wv + 1):
        for du in range(-wu, wu + 1):
            sl = (slice(wv + dv, wv + dv + H), slice(wu + du, wu + du + W))
            d2 = ((pad[sl] - obs) ** 2).sum(axis=-1)
            counts += pad_ok[sl] & (d2 <= r2)
    return counts[obs_ok].astype(float)


def image_ball_counts(obs: "DepthImage", ren: "DepthImage", cam, r: float,
                      use_jit: bool | None = None) -> np.ndarray:
    """Per observed pixel, rendered points within ``r``; same order as unproject.

    Both images come from ``cam``. A rendered point within r of an observed
    point at depth z lies at most r (f + |u - c|) / (z - r) pixels away, so a
    window of that size is exhaustive and the counts are exact.
    """
    if obs.depths.shape != ren.depths.shape or obs.depths.shape != (cam.height, cam.width):
        raise DimMismatch("images and camera differ in size")
    obs_ok = obs.depths < obs.far
    ren_ok = ren.depths < ren.far
    rays = _rays_cached(cam).reshape(cam.height, cam.width, 3)
    o = rays * np.where(obs_ok, obs.depths, 0.0)[..., None]
    q = rays * np.where(ren_ok, ren.depths, 0.0)[..., None]
    if use_jit is None:
        use_jit = jit_enabled()
    if not use_jit:
        return _window_counts_numpy(o, obs_ok, q, ren_ok, r, cam.fx, cam.fy, cam.cx, cam.cy)
    out = np.empty(int(obs_ok.sum()), dtype=np.int64)
    _window_counts_numba(o, obs_ok, q, ren_ok, float(r), float(cam.fx), float(cam.fy),
                         float(cam.cx), float(cam.cy), out)
    return out.astype(float)


def _loglik_from_counts(counts: np.ndarray, k: int, p: "CloudLikParams") -> float:
    ball = 4.0 / 3.0 * np.pi * p.r_ball**3
    inlier = (1.0 - p.C) / k * counts / ball
    return float(np.sum(np.log(p.C / p.bounds_volume + inlier)))


def image_cloud_loglik(obs: "DepthImage", ren: "DepthImage", cam, p: "CloudLikParams") -> float:
    """cloud_loglik for two depth images from the same camera, via window search."""
    n_obs = int(np.count_nonzero(obs.depths < obs.far))
    n_ren = int(np.count_nonzero(ren.depths < ren.far))
    if n_obs == 0:
        return 0.0
    if n_ren == 0:
        return float(n_obs * np.log(p.C / p.bounds_volume))
    k = n_ren if p.k_tilde == "rendered" else cam.width * cam.height
    return _loglik_from_counts(image_ball_counts(obs, ren, cam, p.r_ball), k, p)


def cloud_loglik(
    Y: np.ndarray,
    Ytil: np.ndarray,
    p: CloudLikParams,
    n_pixels: int | None = None,
    method: str = "kdtree",
) -> float:
    """Sum over observed points of log(C/|B| + (1-C)/K~ * n_i / ball volume)."""
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    Ytil = np.asarray(Ytil, dtype=float).reshape(-1, 3)
    floor = np.log(p.C / p.bounds_volume)
    if len(Y) == 0:
        return 0.0
    if len(Ytil) == 0:
        return float(len(Y) * floor)
    k = len(Ytil) if p.k_tilde == "rendered" or n_pixels is None else n_pixels
    return _loglik_from_counts(_ball_counts(Y, Ytil, p.r_ball, method), k, p)


def unexplained_mask(Y: np.ndarray, Ytil: np.ndarray, r: float) -> np.ndarray:
    """True for observed points with no rendered point within ``r``."""
    if len(Ytil) == 0:
        return np.ones(len(Y), dtype=bool)
    d, _ = cKDTree(Ytil).query(Y, k=1, distance_upper_bound=r)
    return ~np.isfinite(d)


def pixel_loglik(I: DepthImage, Itil: DepthImage, sigma: float = 0.5) -> float:
    """Per-pixel mixture of a uniform over [0, D] and a Gaussian around the render."""
    if I.depths.shape != Itil.depths.shape:
        raise DimMismatch("depth images differ in size")
    D = I.far
    r = (I.depths - Itil.depths) / sigma
    log_gauss = -0.5 * r * r - np.log(sigma) - 0.5 * np.log(2.0 * np.pi)
    return float(np.sum(np.logaddexp(np.log(0.1 / D), np.log(0.9) + log_gauss)))


# ---------------------------------------------------------- pseudo-marginal


@dataclass(frozen=True)
class PseudoMarginalState:
    R: int
    samples: tuple = ()  # R dicts type -> VoxelShape
    log_estimate: float = float("nan")
    keys: tuple = ()  # render-equivalence key per sample set

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")


@dataclass
class CloudObservation:
    """Observed cloud plus everything needed to score a scene against it."""

    Y: np.ndarray
    ctx: SceneContext
    params: CloudLikParams = field(default_factory=CloudLikParams)
    base: DepthImage | None = None
    # when the cloud came from a depth image of ctx.camera, scoring can use
    # the exact pixel-window search instead of a k-d tree
    image: DepthImage | None = None

    def __post_init__(self):
        if isinstance(self.Y, DepthImage):
            self.image = self.Y
            self.Y = unproject(self.Y, self.ctx.camera)
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, 3)

    def loglik(self, g: SceneGraph, shapes: Mapping[str, VoxelShape]) -> float:
        if self.base is not None:
            # fixed-pose objects are already baked into the background render
            shapes = {m: s for m, s in shapes.items() if m not in self.ctx.fixed_poses}
        img = render_depth(g, shapes, self.ctx, base=self.base)
        if self.image is not None:
            return image_cloud_loglik(self.image, img, self.ctx.camera, self.params)
        Ytil = unproject(img, self.ctx.camera)
        n_pix = self.ctx.camera.width * self.ctx.camera.height
        return cloud_loglik(self.Y, Ytil, self.params, n_pixels=n_pix)


def draw_shape_sets(beliefs: Mapping[str, ShapeBelief], types: Sequence[str], R: int, rng):
    """R independent joint shape draws plus their render-equivalence keys."""
    sets, keys = [], []
    for _ in range(R):
        s = {m: sample_shape(beliefs[m], rng) for m in types}
        sets.append(s)
        keys.append(tuple(render_key(s[m]) for m in types))
    return tuple(sets), tuple(keys)


def logmeanexp(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(logsumexp(x) - np.log(len(x)))


def pseudo_marginal_loglik(
    g: SceneGraph,
    beliefs: Mapping[str, ShapeBelief],
    ctx: SceneContext,
    state: PseudoMarginalState,
    rng,
    obs: CloudObservation,
    fixed_samples: bool = False,
):
    """Unbiased (on the exp scale) estimate of the shape-marginal likelihood.

    With ``fixed_samples`` the retained shape draws are reused instead of
    drawing fresh ones. Sample sets that render identically are scored once.
    """
    if fixed_samples and state.samples:
        sets, keys = state.samples, state.keys
    else:
        sets, keys = draw_shape_sets(beliefs, g.types, state.R, rng)
    scores: dict = {}
    vals = []
    for s, k in zip(sets, keys):
        if k not in scores:
            scores[k] = obs.loglik(g, s)
        vals.append(scores[k])
    est = logmeanexp(vals)
    return est, PseudoMarginalState(state.R, sets, est, keys)
