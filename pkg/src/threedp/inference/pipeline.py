"""Three-stage scene inference: known types, particle MAP initialisation, MCMC."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import NoHypotheses
from ..geometry import ContactParams, Pose
from ..likelihood import (
    CloudLikParams,
    CloudObservation,
    cloud_loglik,
    image_cloud_loglik,
    unexplained_mask,
)
from ..renderer import DepthImage, render_poses, unproject
from ..scenegraph import ROOT, Floating, SceneContext, SceneGraph, floating_logpdf
from ..shapes import VoxelShape, mode_shape
from .hypotheses import hypotheses_proposal, nominal_poses, pose_hypotheses
from .kernels import (
    CloudTarget,
    KernelConfig,
    PoseProposal,
    init_state,
    mh_contact_move,
    mh_contact_orientation_move,
    mh_pose_move,
    movable_objects,
    structure_move,
)


def observed_cloud(observed, ctx: SceneContext) -> np.ndarray:
    if isinstance(observed, DepthImage):
        return unproject(observed, ctx.camera)
    return np.asarray(observed, dtype=float).reshape(-1, 3)


def _as_image(observed, ctx: SceneContext) -> DepthImage | None:
    if isinstance(observed, DepthImage) and observed.depths.shape == (ctx.camera.height, ctx.camera.width):
        return observed
    return None


def background_image(types: Sequence[str], ctx: SceneContext) -> DepthImage | None:
    """Render of every fixed-pose object, or None when there are none."""
    fixed = [m for m in types if m in ctx.fixed_poses]
    if not fixed:
        return None
    shapes = [mode_shape(ctx.beliefs[m]) for m in fixed]
    return render_poses(shapes, [ctx.fixed_poses[m] for m in fixed], ctx.camera)


class _Scorer:
    """Scores joint placements with mode shapes against the observed cloud."""

    def __init__(self, Y, types, ctx, lik, base, image=None):
        self.Y, self.types, self.ctx, self.lik, self.base = Y, tuple(types), ctx, lik, base
        self.image = image
        self.modes = {m: mode_shape(ctx.beliefs[m]) for m in set(types)}
        self.n_pix = ctx.camera.width * ctx.camera.height

    def render(self, poses: dict) -> DepthImage:
        vs = sorted(poses)
        return render_poses([self.modes[self.types[v]] for v in vs], [poses[v] for v in vs],
                            self.ctx.camera, self.base)

    def render_cloud(self, poses: dict) -> np.ndarray:
        return unproject(self.render(poses), self.ctx.camera)

    def score(self, poses: dict) -> float:
        lp = 0.0
        for p in poses.values():
            lp += floating_logpdf(p, self.ctx)
        if not np.isfinite(lp):
            return -np.inf
        if self.image is not None:
            return lp + image_cloud_loglik(self.image, self.render(poses), self.ctx.camera, self.lik)
        return lp + cloud_loglik(self.Y, self.render_cloud(poses), self.lik, self.n_pix)

    def unexplained(self, poses: dict) -> np.ndarray:
        return unexplained_mask(self.Y, self.render_cloud(poses), self.lik.r_ball)


class _HypothesisCache:
    def __init__(self, scorer: _Scorer, cfg: KernelConfig):
        self.scorer, self.cfg, self.store = scorer, cfg, {}

    def proposal(self, m: str, mask: np.ndarray) -> PoseProposal | None:
        key = (m, np.packbits(mask).tobytes())
        if key not in self.store:
            hyps = pose_hypotheses(self.scorer.Y[mask], self.scorer.modes[m], self.cfg,
                                   self.scorer.ctx.camera, self.scorer.lik)
            self.store[key] = hypotheses_proposal(hyps, self.cfg)
        return self.store[key]


def map_initialize(observed, types: Sequence[str], ctx: SceneContext, cfg: KernelConfig, rng,
                   lik: CloudLikParams | None = None) -> list[Pose]:
    """Stage two: particle search over joint poses with the structure fixed flat.

    Each particle owns one object per sweep (cycling), proposes it from the
    hypotheses fitted to the points its other objects leave unexplained, and
    the population is resampled by score. Returns the best complete
    placement visited, one world pose per node.
    """
    types = tuple(types)
    lik = lik or CloudLikParams(bounds_volume=ctx.bounds_volume)
    Y = observed_cloud(observed, ctx)
    image = _as_image(observed, ctx)
    scorer = _Scorer(Y, types, ctx, lik, background_image(types, ctx), image)
    cache = _HypothesisCache(scorer, cfg)
    movable = [v for v in range(len(types)) if types[v] not in ctx.fixed_poses]
    out = [ctx.fixed_poses.get(m) for m in types]
    if not movable:
        return out
    if len(Y) == 0:
        raise NoHypotheses("no observed points")
    n = len(movable)
    P = max(1, cfg.particles_per_object * n)
    particles = [dict() for _ in range(P)]
    scores = np.full(P, scorer.score({}))
    best, best_score = None, -np.inf
    any_hyp = False
    for sweep in range(max(1, cfg.stage2_sweeps_per_object * n)):
        for i in range(P):
            v = movable[(i + sweep) % n]
            others = {w: p for w, p in particles[i].items() if w != v}
            prop = cache.proposal(types[v], scorer.unexplained(others))
            if prop is None:
                continue
            any_hyp = True
            new = prop.sample(rng)
            cand = dict(others)
            cand[v] = new
            s_new = scorer.score(cand)
            if v in particles[i]:
                cur = particles[i][v]
                log_a = s_new - scores[i] + prop.logpdf(cur) - prop.logpdf(new)
                accept = math.log(rng.random()) < log_a
            else:
                accept = np.isfinite(s_new)
            if accept:
                particles[i], scores[i] = cand, s_new
            if len(particles[i]) == n and scores[i] > best_score:
                best, best_score = dict(particles[i]), scores[i]
        w = np.exp(scores - scores.max()) if np.isfinite(scores.max()) else np.ones(P)
        idx = rng.choice(P, size=P, p=w / w.sum())
        particles = [dict(particles[j]) for j in idx]
        scores = scores[idx]
    if not any_hyp:
        raise NoHypotheses("no object produced a pose hypothesis")
    if best is None:
        # some object never got a hypothesis: park it on the leftover points
        best = max(zip(scores, particles), key=lambda x: x[0])[1]
        left = Y[scorer.unexplained(best)]
        centre = left.mean(axis=0) if len(left) else Y.mean(axis=0)
        for v in movable:
            best.setdefault(v, nominal_poses(centre, scorer.modes[types[v]])[0])
    for v in movable:
        out[v] = best[v]
    return out


@dataclass
class InferenceResult:
    samples: list  # thinned post-burn-in SceneGraphs
    best: SceneGraph
    best_score: float
    init_poses: list
    stats: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)  # score per sweep


def run_inference(observed, types: Sequence[str], ctx: SceneContext, cfg: KernelConfig, rng,
                  lik: CloudLikParams | None = None, init_poses: Sequence[Pose] | None = None
                  ) -> InferenceResult:
    """Full pipeline. ``cfg.ablate_structure`` keeps the graph flat throughout."""
    types = tuple(types)
    lik = lik or CloudLikParams(bounds_volume=ctx.bounds_volume)
    Y = observed_cloud(observed, ctx)
    image = _as_image(observed, ctx)
    if init_poses is None:
        init_poses = map_initialize(observed, types, ctx, cfg, rng, lik)
    base = background_image(types, ctx)
    obs = CloudObservation(Y, ctx, lik, base, image)
    g0 = SceneGraph(types, (ROOT,) * len(types), tuple(Floating(p) for p in init_poses))
    target = CloudTarget(obs, ctx.beliefs, cfg.fixed_samples)
    state = init_state(g0, ctx, target, rng, cfg.R)
    movable = movable_objects(g0, ctx)

    # data-driven proposals: hypotheses for each object on the points the
    # other initial placements leave unexplained; fixed for the whole chain
    scorer = _Scorer(Y, types, ctx, lik, base, image)
    cache = _HypothesisCache(scorer, cfg)
    dd = {}
    for v in movable:
        others = {w: init_poses[w] for w in movable if w != v}
        dd[v] = cache.proposal(types[v], scorer.unexplained(others))

    best = state
    samples, trace = [], []
    burn = int(cfg.burn_in_frac * cfg.n_sweeps)
    for sweep in range(cfg.n_sweeps):
        if not cfg.ablate_structure:
            for _ in range(cfg.structure_moves_per_sweep):
                state = structure_move(state, ctx, cfg, rng, target)
        for _ in range(len(movable)):
            v = movable[rng.integers(len(movable))]
            th = state.graph.params[v]
            if isinstance(th, ContactParams):
                if rng.random() < cfg.contact_orient_prob:
                    state = mh_contact_orientation_move(state, v, ctx, cfg, rng, target)
                else:
                    state = mh_contact_move(state, v, ctx, cfg, rng, target)
            elif dd[v] is not None and rng.random() < cfg.dd_prob:
                state = mh_pose_move(state, v, ctx, cfg, rng, "data-driven", target, dd[v])
            else:
                state = mh_pose_move(state, v, ctx, cfg, rng, "random-walk", target)
            if state.score > best.score:
                best = state
        trace.append(state.score)
        if sweep >= burn and (sweep - burn) % cfg.thin == 0:
            samples.append(state.graph)
    return InferenceResult(samples, best.graph, best.score, list(init_poses),
                           dict(state.stats), trace)
