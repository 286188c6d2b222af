"""Markov chain state and the Metropolis-Hastings / involutive kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..distributions import (
    normal_logpdf,
    sample_vmf_s2,
    sample_vmf_s3,
    vmf_rotation_logpdf,
)
from ..errors import SingularOrientation
from ..geometry import (
    ContactParams,
    HopfContactCoords,
    Pose,
    compose,
    relative_face_pose,
    xi,
)
from ..likelihood import CloudObservation, PseudoMarginalState, pseudo_marginal_loglik
from ..scenegraph import (
    ROOT,
    Floating,
    SceneContext,
    SceneGraph,
    node_logprior,
    prior_logpdf,
    structure_logprior,
    subtree,
    update_world_poses,
    world_poses,
)
from ..shapes import ShapeBelief

# Radon-Nikodym factor for floating -> contact; contact -> floating uses the
# reciprocal. Equals (4 pi * 2 pi) / pi^2 for the stated base measures.
RN_FLOAT_TO_CONTACT = 8.0
LOG_FACE_PAIRS = np.log(36.0)


@dataclass(frozen=True)
class KernelConfig:
    rw_trans_std: float = 0.5
    rw_rot_kappa: float = 2000.0
    contact_ab_std: float = 0.5
    contact_z_std: float = 0.2
    contact_eta_kappa: float = 4000.0
    contact_phi_std: float = 0.02
    # step multipliers for the walks, picked uniformly per move
    rw_scales: tuple = (1.0, 0.25, 0.05)
    dd_trans_std: float = 0.3
    dd_rot_kappa: float = 5000.0
    dd_prob: float = 0.3
    contact_orient_prob: float = 0.3
    dbscan_eps: float = 1.5
    dbscan_min_pts: int = 5
    min_cluster_frac: float = 0.1
    icp_iters: int = 20
    icp_rounds: int = 2
    hyp_top_k: int = 8
    hyp_temperature: float = 20.0
    hyp_floor: float = 0.3
    R: int = 5
    fixed_samples: bool = True
    n_sweeps: int = 400
    structure_moves_per_sweep: int = 10
    burn_in_frac: float = 0.25
    thin: int = 5
    particles_per_object: int = 2
    stage2_sweeps_per_object: int = 20
    ablate_structure: bool = False

    def __post_init__(self):
        for name in ("rw_trans_std", "contact_ab_std", "contact_z_std", "dd_trans_std",
                     "contact_phi_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "rw_scales", tuple(float(x) for x in self.rw_scales))
        if not self.rw_scales or min(self.rw_scales) <= 0:
            raise ValueError("rw_scales must be non-empty and positive")


# ------------------------------------------------------------------ targets


class ConstantTarget:
    """Likelihood that ignores the data; isolates prior preservation."""

    def estimate(self, g: SceneGraph, pm: PseudoMarginalState, rng):
        return 0.0, pm


@dataclass
class CloudTarget:
    obs: CloudObservation
    beliefs: Mapping[str, ShapeBelief]
    fixed_samples: bool = True

    def estimate(self, g: SceneGraph, pm: PseudoMarginalState, rng):
        return pseudo_marginal_loglik(
            g, self.beliefs, self.obs.ctx, pm, rng, self.obs, self.fixed_samples
        )


# -------------------------------------------------------------------- state


@dataclass(frozen=True)
class ChainState:
    graph: SceneGraph
    pm: PseudoMarginalState
    loglik: float
    logprior: float
    poses: tuple
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def score(self) -> float:
        return self.logprior + self.loglik


def init_state(g: SceneGraph, ctx: SceneContext, target, rng, R: int = 5) -> ChainState:
    loglik, pm = target.estimate(g, PseudoMarginalState(R), rng)
    return ChainState(g, pm, loglik, prior_logpdf(g, ctx), tuple(world_poses(g, ctx.planes)), {})


def _count(state: ChainState, name: str, accepted: bool) -> None:
    rec = state.stats.setdefault(name, [0, 0])
    rec[0] += 1
    rec[1] += int(accepted)


def movable_objects(g: SceneGraph, ctx: SceneContext) -> list[int]:
    return [v for v in range(g.n) if g.types[v] not in ctx.fixed_poses]


def _mh_step(state, v, g_new, ctx, target, rng, log_q_ratio, name):
    """MH accept/reject of ``g_new``, which differs from the current graph at ``v`` only."""
    node_new = node_logprior(g_new, v, ctx)
    if not np.isfinite(node_new):
        _count(state, name, False)
        return state
    lp_new = state.logprior - node_logprior(state.graph, v, ctx) + node_new
    ll_new, pm_new = target.estimate(g_new, state.pm, rng)
    log_alpha = lp_new + ll_new - state.score + log_q_ratio
    if math.log(rng.random()) < log_alpha:
        _count(state, name, True)
        poses = update_world_poses(g_new, state.poses, v, ctx.planes)
        return ChainState(g_new, pm_new, ll_new, lp_new, tuple(poses), state.stats)
    _count(state, name, False)
    return state


# ------------------------------------------------------------- pose moves


@dataclass(frozen=True)
class PoseProposal:
    """Mixture of Gaussian-position x vMF-orientation components."""

    poses: tuple
    weights: np.ndarray
    trans_std: float
    kappa: float

    def sample(self, rng) -> Pose:
        k = rng.choice(len(self.poses), p=self.weights)
        c = self.poses[k]
        t = c.t + rng.normal(0.0, self.trans_std, 3)
        return Pose(t, sample_vmf_s3(c.q, self.kappa, rng))

    def logpdf(self, p: Pose) -> float:
        terms = [
            np.log(w) + normal_logpdf(p.t, c.t, self.trans_std)
            + vmf_rotation_logpdf(p.q, c.q, self.kappa)
            for c, w in zip(self.poses, self.weights)
            if w > 0
        ]
        return float(np.logaddexp.reduce(terms))


def _step_scale(cfg: KernelConfig, rng) -> float:
    sc = cfg.rw_scales
    return sc[0] if len(sc) == 1 else sc[rng.integers(len(sc))]


def mh_pose_move(state: ChainState, v: int, ctx: SceneContext, cfg: KernelConfig, rng,
                 mode: str = "random-walk", target=None, proposal: PoseProposal | None = None
                 ) -> ChainState:
    """6-DoF move of floating object ``v``; descendants follow rigidly."""
    g = state.graph
    th = g.params[v]
    if not isinstance(th, Floating):
        raise ValueError("6-DoF pose moves apply to floating objects only")
    cur = th.pose
    if mode == "data-driven":
        if proposal is None:
            raise ValueError("data-driven mode needs a proposal")
        new = proposal.sample(rng)
        log_q = proposal.logpdf(cur) - proposal.logpdf(new)
    elif mode == "random-walk":
        # scale and which block moves are drawn independently of the state
        k = _step_scale(cfg, rng)
        which = rng.integers(3)  # 0: both, 1: translation, 2: rotation
        t = cur.t + rng.normal(0.0, cfg.rw_trans_std * k, 3) if which != 2 else cur.t
        q = sample_vmf_s3(cur.q, cfg.rw_rot_kappa / k**2, rng) if which != 1 else cur.q
        new = Pose(t, q)
        log_q = 0.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    g_new = g.with_node(v, ROOT, Floating(new), check=False)
    return _mh_step(state, v, g_new, ctx, target, rng, log_q, f"pose:{mode}")


def mh_contact_move(state: ChainState, v: int, ctx: SceneContext, cfg: KernelConfig, rng,
                    target=None) -> ChainState:
    """Symmetric Gaussian walk on the in-plane offset and gap of a contact child."""
    g = state.graph
    th = g.params[v]
    if not isinstance(th, ContactParams):
        raise ValueError("contact moves apply to contact children only")
    c = th.coords
    k = _step_scale(cfg, rng)
    da, db = rng.normal(0.0, cfg.contact_ab_std * k, 2)
    dz = rng.normal(0.0, cfg.contact_z_std * k)
    coords = HopfContactCoords(c.a + da, c.b + db, c.z + dz, c.eta, c.phi)
    g_new = g.with_node(v, g.parent[v], ContactParams(th.f, th.fp, coords), check=False)
    return _mh_step(state, v, g_new, ctx, target, rng, 0.0, "contact:offset")


def mh_contact_orientation_move(state: ChainState, v: int, ctx: SceneContext,
                                cfg: KernelConfig, rng, target=None) -> ChainState:
    """Symmetric walk on the normal deviation and in-plane angle of a contact child."""
    g = state.graph
    th = g.params[v]
    if not isinstance(th, ContactParams):
        raise ValueError("contact moves apply to contact children only")
    c = th.coords
    k = _step_scale(cfg, rng)
    eta = sample_vmf_s2(c.eta, cfg.contact_eta_kappa / k**2, rng)
    phi = c.phi + rng.normal(0.0, cfg.contact_phi_std * k)
    try:
        coords = HopfContactCoords(c.a, c.b, c.z, eta, phi)
        if coords.eta[2] <= -1.0 + 1e-6:
            raise SingularOrientation("eta at the south pole")
    except SingularOrientation:
        _count(state, "contact:orient", False)
        return state
    g_new = g.with_node(v, g.parent[v], ContactParams(th.f, th.fp, coords), check=False)
    return _mh_step(state, v, g_new, ctx, target, rng, 0.0, "contact:orient")


# ---------------------------------------------------------- structure move


def involution(g: SceneGraph, poses: Sequence[Pose], planes, v: int, u: int,
               faces: tuple | None):
    """Apply the sever/graft involution.

    Returns ``(g_new, (v, u_prev, faces_prev), case, log_rn)``. World poses are
    unchanged by construction. Raises SingularOrientation when the new
    contact coordinates fall in the excised set.
    """
    prev = g.parent[v]
    th = g.params[v]
    faces_prev = (th.f, th.fp) if isinstance(th, ContactParams) else None
    if u == ROOT:
        new_param = Floating(poses[v])
    else:
        f, fp = faces
        wpf = compose(poses[u], planes[g.types[u]][fp].pose_in_object)
        wcf = compose(poses[v], planes[g.types[v]][f].pose_in_object)
        new_param = ContactParams(f, fp, xi(relative_face_pose(wpf, wcf)))
    src = "f" if prev == ROOT else "c"
    dst = "f" if u == ROOT else "c"
    case = f"{src}->{dst}"
    if case == "f->c":
        log_rn = np.log(RN_FLOAT_TO_CONTACT)
    elif case == "c->f":
        log_rn = -np.log(RN_FLOAT_TO_CONTACT)
    else:
        log_rn = 0.0
    if case == "f->f":
        return g, (v, prev, faces_prev), case, 0.0
    return g.with_node(v, u, new_param, check=False), (v, prev, faces_prev), case, log_rn


def allowed_parents(g: SceneGraph, v: int) -> list[int]:
    banned = subtree(g.parent, v)
    return [ROOT] + [u for u in range(g.n) if u not in banned]


def structure_move(state: ChainState, ctx: SceneContext, cfg: KernelConfig, rng,
                   target=None) -> ChainState:
    """Sever ``v`` from its parent and graft it elsewhere, keeping world poses."""
    g = state.graph
    movable = movable_objects(g, ctx)
    if not movable:
        return state
    v = movable[rng.integers(len(movable))]
    parents = allowed_parents(g, v)
    u = parents[rng.integers(len(parents))]
    faces = None
    if u != ROOT:
        faces = (int(rng.integers(6)), int(rng.integers(6)))
    try:
        g_new, _, case, log_rn = involution(g, state.poses, ctx.planes, v, u, faces)
    except SingularOrientation:
        _count(state, "structure:singular", False)
        return state
    name = f"structure:{case}"
    if case == "f->f":
        _count(state, name, True)
        return state
    # forward picks faces with prob 1/36 iff u != ROOT; reverse iff old parent != ROOT
    log_q = 0.0
    if case == "f->c":
        log_q = LOG_FACE_PAIRS
    elif case == "c->f":
        log_q = -LOG_FACE_PAIRS
    lp_new = (state.logprior - node_logprior(g, v, ctx) + node_logprior(g_new, v, ctx)
              - structure_logprior(g, ctx) + structure_logprior(g_new, ctx))
    if not np.isfinite(lp_new):
        _count(state, name, False)
        return state
    # world poses unchanged, so the retained likelihood estimate carries over
    log_alpha = lp_new - state.logprior + log_q + log_rn
    if math.log(rng.random()) < log_alpha:
        _count(state, name, True)
        return ChainState(g_new, state.pm, state.loglik, lp_new, state.poses, state.stats)
    _count(state, name, False)
    return state
