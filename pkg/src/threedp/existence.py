"""Presence and pose of possibly hidden objects under a binomial prior.

The graph is flat: every present object floats. Orientations are stored as
ZYZ Euler angles (alpha, beta, gamma); the prior over rotations is the
uniform (Haar) one, which has density proportional to sin(beta) in these
coordinates. Object positions refer to the centre of the shape's bounding
box rather than the grid corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .distributions import LOG_SO3_VOLUME, random_quaternion
from .geometry import Pose, compose
from .likelihood import pixel_loglik
from .renderer import DepthImage, render_poses
from .scenegraph import Camera
from .shapes import VoxelShape

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ExistencePrior:
    types: tuple
    p_pres: tuple

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "p_pres", tuple(float(p) for p in self.p_pres))
        if len(self.types) != len(self.p_pres):
            raise ValueError("one presence probability per type")
        if any(not 0.0 <= p <= 1.0 for p in self.p_pres):
            raise ValueError("presence probabilities must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class ExistenceContext:
    shapes: Mapping[str, VoxelShape]
    camera: Camera
    bounds_lo: np.ndarray  # box for object centres
    bounds_hi: np.ndarray
    base: DepthImage | None = None  # render of the known, visible scene
    sigma: float = 0.5

    def __post_init__(self):
        lo = np.asarray(self.bounds_lo, dtype=float)
        hi = np.asarray(self.bounds_hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("bounds must have positive volume")
        object.__setattr__(self, "bounds_lo", lo)
        object.__setattr__(self, "bounds_hi", hi)

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.bounds_hi - self.bounds_lo)))

    def in_bounds(self, c) -> bool:
        return bool(np.all(c >= self.bounds_lo) and np.all(c <= self.bounds_hi))


@dataclass(frozen=True)
class ExistenceState:
    present: tuple  # bool per type
    centres: tuple  # 3-vector or None per type
    eulers: tuple  # (alpha, beta, gamma) or None per type

    def __post_init__(self):
        for f, c, e in zip(self.present, self.centres, self.eulers):
            if bool(f) != (c is not None) or bool(f) != (e is not None):
                raise ValueError("pose must be set exactly when the object is present")

    @staticmethod
    def empty(n: int) -> "ExistenceState":
        return ExistenceState((False,) * n, (None,) * n, (None,) * n)

    def replace(self, i: int, present: bool, centre=None, euler=None) -> "ExistenceState":
        p, c, e = list(self.present), list(self.centres), list(self.eulers)
        p[i] = bool(present)
        c[i] = None if centre is None else np.asarray(centre, dtype=float)
        e[i] = None if euler is None else tuple(float(x) for x in euler)
        return ExistenceState(tuple(p), tuple(c), tuple(e))


@dataclass(frozen=True)
class ExistenceConfig:
    n_sweeps: int = 3000
    burn_in_frac: float = 0.2
    trans_std: float = 1.0
    euler_std: float = 0.3


# ---------------------------------------------------------------- geometry


def euler_to_quat(euler) -> np.ndarray:
    x, y, z, w = Rotation.from_euler("ZYZ", euler).as_quat()
    return np.array([w, x, y, z])


def quat_to_euler(q) -> tuple:
    w, x, y, z = q
    a, b, g = Rotation.from_quat([x, y, z, w]).as_euler("ZYZ")
    return (a % TWO_PI, b, g % TWO_PI)


def object_pose(shape: VoxelShape, centre, euler) -> Pose:
    """Grid pose putting the shape's box centre at ``centre``."""
    return compose(Pose(np.asarray(centre, dtype=float), euler_to_quat(euler)),
                   Pose(-shape.centre()))


def render_state(s: ExistenceState, prior: ExistencePrior, ctx: ExistenceContext) -> DepthImage:
    shapes, poses = [], []
    for m, f, c, e in zip(prior.types, s.present, s.centres, s.eulers):
        if f:
            shapes.append(ctx.shapes[m])
            poses.append(object_pose(ctx.shapes[m], c, e))
    return render_poses(shapes, poses, ctx.camera, ctx.base)


# ------------------------------------------------------------------- prior


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def existence_prior_logpdf(s: ExistenceState, prior: ExistencePrior, ctx: ExistenceContext) -> float:
    """Bernoulli presence terms plus uniform pose densities for present objects.

    Pose densities are with respect to Lebesgue measure on positions and the
    invariant measure on rotations (total mass pi^2), as for floating objects
    in a scene graph.
    """
    total = 0.0
    for p, f, c in zip(prior.p_pres, s.present, s.centres):
        if f:
            if not ctx.in_bounds(c):
                return -math.inf
            total += _log(p) - ctx.log_volume - LOG_SO3_VOLUME
        else:
            total += _log(1.0 - p)
    return total


def _log_sin_beta(euler) -> float:
    sb = math.sin(euler[1])
    return math.log(sb) if sb > 0 else -math.inf


# ------------------------------------------------------------------- moves


@dataclass
class _Chain:
    state: ExistenceState
    loglik: float
    stats: dict = field(default_factory=dict)

    def count(self, name: str, ok: bool) -> None:
        rec = self.stats.setdefault(name, [0, 0])
        rec[0] += 1
        rec[1] += int(ok)


def _loglik(s, prior, ctx, observed, constant):
    if constant:
        return 0.0
    return pixel_loglik(observed, render_state(s, prior, ctx), ctx.sigma)


def _sample_centre(ctx: ExistenceContext, rng) -> np.ndarray:
    return ctx.bounds_lo + rng.random(3) * (ctx.bounds_hi - ctx.bounds_lo)


def presence_move(chain: _Chain, i: int, prior: ExistencePrior, ctx: ExistenceContext,
                  observed: DepthImage | None, rng, constant: bool = False) -> _Chain:
    """Birth from the prior or death; pose densities cancel in the ratio."""
    s = chain.state
    p = prior.p_pres[i]
    if s.present[i]:
        new = s.replace(i, False)
        log_odds = _log(1.0 - p) - _log(p)
        name = "death"
    else:
        euler = quat_to_euler(random_quaternion(rng))
        new = s.replace(i, True, _sample_centre(ctx, rng), euler)
        log_odds = _log(p) - _log(1.0 - p)
        name = "birth"
    if not math.isfinite(log_odds) and log_odds < 0:
        chain.count(name, False)
        return chain
    ll = _loglik(new, prior, ctx, observed, constant)
    if math.log(rng.random()) < log_odds + ll - chain.loglik:
        chain.count(name, True)
        return _Chain(new, ll, chain.stats)
    chain.count(name, False)
    return chain


def _pose_mh(chain, i, centre, euler, log_q, prior, ctx, observed, rng, constant, name):
    s = chain.state
    if not ctx.in_bounds(centre) or not (0.0 <= euler[1] <= math.pi):
        chain.count(name, False)
        return chain
    new = s.replace(i, True, centre, euler)
    # target density in Euler coordinates carries sin(beta)
    log_jac = _log_sin_beta(euler) - _log_sin_beta(s.eulers[i])
    ll = _loglik(new, prior, ctx, observed, constant)
    if math.log(rng.random()) < ll - chain.loglik + log_jac + log_q:
        chain.count(name, True)
        return _Chain(new, ll, chain.stats)
    chain.count(name, False)
    return chain


def _reflect_beta(b: float) -> float:
    b = b % TWO_PI
    return TWO_PI - b if b > math.pi else b


def pose_moves(chain: _Chain, i: int, prior, ctx, cfg: ExistenceConfig, observed, rng,
               constant: bool = False) -> _Chain:
    """Prior translation, prior (Euler-uniform) rotation, then coordinate walks."""
    s = chain.state
    c, e = s.centres[i], s.eulers[i]
    chain = _pose_mh(chain, i, _sample_centre(ctx, rng), e, 0.0, prior, ctx, observed, rng,
                     constant, "prior-translation")
    c = chain.state.centres[i]
    # Euler-uniform independence proposal has constant density in Euler space
    e_new = (rng.uniform(0, TWO_PI), rng.uniform(0, math.pi), rng.uniform(0, TWO_PI))
    chain = _pose_mh(chain, i, c, e_new, 0.0, prior, ctx, observed, rng, constant,
                     "prior-rotation")
    e = chain.state.eulers[i]
    for ax in range(3):
        c = chain.state.centres[i].copy()
        c[ax] += rng.normal(0.0, cfg.trans_std)
        chain = _pose_mh(chain, i, c, chain.state.eulers[i], 0.0, prior, ctx, observed, rng,
                         constant, "walk-translation")
    for ax in range(3):
        e = list(chain.state.eulers[i])
        e[ax] += rng.normal(0.0, cfg.euler_std)
        e[ax] = _reflect_beta(e[ax]) if ax == 1 else e[ax] % TWO_PI
        chain = _pose_mh(chain, i, chain.state.centres[i], tuple(e), 0.0, prior, ctx, observed,
                         rng, constant, "walk-euler")
    return chain


@dataclass
class ExistenceResult:
    presence: dict  # type -> posterior presence frequency
    samples: list  # ExistenceState after burn-in
    stats: dict


def infer_existence(observed: DepthImage | None, prior: ExistencePrior, ctx: ExistenceContext,
                    cfg: ExistenceConfig, rng, constant_likelihood: bool = False,
                    init: ExistenceState | None = None) -> ExistenceResult:
    """Cycle over types: presence flip, then pose moves for present objects."""
    n = len(prior.types)
    s0 = init or ExistenceState.empty(n)
    chain = _Chain(s0, _loglik(s0, prior, ctx, observed, constant_likelihood))
    burn = int(cfg.burn_in_frac * cfg.n_sweeps)
    samples = []
    for sweep in range(cfg.n_sweeps):
        for i in range(n):
            chain = presence_move(chain, i, prior, ctx, observed, rng, constant_likelihood)
            if chain.state.present[i]:
                chain = pose_moves(chain, i, prior, ctx, cfg, observed, rng, constant_likelihood)
        if sweep >= burn:
            samples.append(chain.state)
    presence = {
        m: float(np.mean([s.present[i] for s in samples])) if samples else 0.0
        for i, m in enumerate(prior.types)
    }
    return ExistenceResult(presence, samples, chain.stats)


def visible_pixel_violations(s: ExistenceState, prior: ExistencePrior, ctx: ExistenceContext,
                             k_sigma: float = 3.0) -> int:
    """Pixels where the state's render departs from the known-scene render by > k sigma."""
    img = render_state(s, prior, ctx)
    ref = ctx.base.depths if ctx.base is not None else np.full(img.depths.shape, img.far)
    return int(np.count_nonzero(np.abs(img.depths - ref) > k_sigma * ctx.sigma))
