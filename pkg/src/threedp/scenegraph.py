"""Scene-graph latent state, its prior, pose traversal and sever/graft."""

from __future__ import annotations

import itertools
import math
import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np

from .distributions import (
    LOG_S1_LENGTH,
    LOG_SO3_VOLUME,
    normal_logpdf,
    random_quaternion,
    sample_vmf_s2,
    vmf_s2_logpdf,
)
from .errors import InvalidGraft
from .geometry import (
    IDENTITY,
    N_FACES,
    ContactParams,
    ContactPlane,
    HopfContactCoords,
    Pose,
    compose,
    contact_relative_pose,
)
from .shapes import ShapeBelief, bounding_cuboid_planes, mode_shape

ROOT = -1
_LOG_36 = math.log(36.0)
NORTH = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Floating:
    pose: Pose


Contact = ContactParams
Param = Union[Floating, ContactParams]


@dataclass(frozen=True)
class Camera:
    fx: float = 64.0
    fy: float = 64.0
    cx: float = 32.0
    cy: float = 32.0
    width: int = 64
    height: int = 64
    pose: Pose = IDENTITY  # camera frame -> world; +z looks forward, +y down
    far: float = 500.0


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at ``eye`` looking at ``target`` (image y axis points down)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose.from_matrix(
        np.block([[np.column_stack([right, down, fwd]), eye[:, None]], [np.zeros((1, 3)), 1.0]])
    )


@dataclass(frozen=True)
class ContactPrior:
    """Hyperparameters of the contact-parameter prior."""

    ab_half_width: float = 50.0
    z_std: float = 1.0
    kappa: float = 250.0


@dataclass(frozen=True)
class SceneContext:
    beliefs: Mapping[str, ShapeBelief]
    bounds_lo: np.ndarray = field(default_factory=lambda: np.full(3, -50.0))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.full(3, 50.0))
    camera: Camera = field(default_factory=Camera)
    contact_prior: ContactPrior = field(default_factory=ContactPrior)
    # Types whose pose is known and never moved (e.g. the table).
    fixed_poses: Mapping[str, Pose] = field(default_factory=dict)
    planes: Mapping[str, tuple] = field(default=None)
    structure_prior: str = "uniform"  # or "g0"

    def __post_init__(self):
        lo = np.asarray(self.bounds_lo, dtype=float)
        hi = np.asarray(self.bounds_hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("scene bounds must have positive volume")
        object.__setattr__(self, "bounds_lo", lo)
        object.__setattr__(self, "bounds_hi", hi)
        object.__setattr__(self, "_volume", float(np.prod(hi - lo)))
        if self.planes is None:
            object.__setattr__(
                self,
                "planes",
                {m: bounding_cuboid_planes(mode_shape(b)) for m, b in self.beliefs.items()},
            )

    @property
    def bounds_volume(self) -> float:
        return self._volume

    def in_bounds(self, t) -> bool:
        lo, hi = self.bounds_lo, self.bounds_hi
        return all(lo[i] <= t[i] <= hi[i] for i in range(3))


@dataclass(frozen=True)
class SceneGraph:
    types: tuple
    parent: tuple
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))
        object.__setattr__(self, "params", tuple(self.params))
        n = len(self.types)
        if len(self.parent) != n or len(self.params) != n:
            raise ValueError("types, parent and params must have equal length")
        if len(set(self.types)) != n:
            raise ValueError("each object type may appear at most once")
        if not is_tree(self.parent):
            raise ValueError(f"parent vector {self.parent} is not a tree rooted at ROOT")
        for p, th in zip(self.parent, self.params):
            if (p == ROOT) != isinstance(th, Floating):
                raise ValueError("floating parameters iff parent is the root")

    @property
    def n(self) -> int:
        return len(self.types)

    def with_node(self, v: int, parent: int, param: Param, check: bool = True) -> "SceneGraph":
        """Copy with node ``v`` re-parented and re-parametrised.

        ``check=False`` skips validation; callers must guarantee the tree
        invariant (e.g. the parent is unchanged or is not a descendant).
        """
        par = list(self.parent)
        prm = list(self.params)
        par[v] = parent
        prm[v] = param
        if check:
            return replace(self, parent=tuple(par), params=tuple(prm))
        if (parent == ROOT) != isinstance(param, Floating):
            raise ValueError("floating parameters iff parent is the root")
        obj = object.__new__(SceneGraph)
        object.__setattr__(obj, "types", self.types)
        object.__setattr__(obj, "parent", tuple(par))
        object.__setattr__(obj, "params", tuple(prm))
        return obj


# ------------------------------------------------------------ tree utilities


def is_tree(parent: Sequence[int]) -> bool:
    n = len(parent)
    for v in range(n):
        seen = 0
        u = v
        while u != ROOT:
            if not -1 <= u < n:
                return False
            u = parent[u]
            seen += 1
            if seen > n:
                return False
    return True


def subtree(parent: Sequence[int], v: int) -> set[int]:
    """``v`` together with all of its descendants."""
    out = {v}
    changed = True
    while changed:
        changed = False
        for w, p in enumerate(parent):
            if p in out and w not in out:
                out.add(w)
                changed = True
    return out


def topological_order(parent: Sequence[int]) -> list[int]:
    order, placed = [], {ROOT}
    while len(order) < len(parent):
        for v, p in enumerate(parent):
            if v not in placed and p in placed:
                order.append(v)
                placed.add(v)
    return order


def sever_graft(parent: Sequence[int], v: int, u: int) -> tuple[tuple, int]:
    """Detach ``v`` and attach it under ``u``; returns (new parents, old parent)."""
    if u in subtree(parent, v):
        raise InvalidGraft(f"cannot graft {v} under its own descendant {u}")
    new = list(parent)
    prev = new[v]
    new[v] = u
    return tuple(new), prev


def candidate_pairs(parent: Sequence[int]) -> set[tuple[int, int]]:
    pairs = set()
    for v in range(len(parent)):
        banned = subtree(parent, v)
        pairs.add((v, ROOT))
        pairs.update((v, u) for u in range(len(parent)) if u not in banned)
    return pairs


def count_structures(n: int) -> int:
    if n < 1:
        raise ValueError("need at least one object")
    return (n + 1) ** (n - 1)


def enumerate_structures(n: int) -> list[tuple]:
    """All parent vectors forming a tree rooted at ROOT (brute force)."""
    choices = [ROOT] + list(range(n))
    return [
        p
        for p in itertools.product(choices, repeat=n)
        if all(p[v] != v for v in range(n)) and is_tree(p)
    ]


# ------------------------------------------------------------------ poses


def world_poses(g: SceneGraph, planes: Mapping[str, Sequence[ContactPlane]]) -> list[Pose]:
    poses: list[Pose | None] = [None] * g.n
    for v in topological_order(g.parent):
        th = g.params[v]
        if isinstance(th, Floating):
            poses[v] = th.pose
        else:
            u = g.parent[v]
            rel = contact_relative_pose(th, planes[g.types[u]], planes[g.types[v]])
            poses[v] = compose(poses[u], rel)
    return poses


def update_world_poses(g: SceneGraph, poses: Sequence[Pose], v: int, planes) -> list[Pose]:
    """Recompute world poses after node ``v`` changed; only its subtree moves."""
    out = list(poses)
    moved = subtree(g.parent, v)
    for w in topological_order(g.parent):
        if w not in moved:
            continue
        th = g.params[w]
        if isinstance(th, Floating):
            out[w] = th.pose
        else:
            u = g.parent[w]
            out[w] = compose(out[u], contact_relative_pose(th, planes[g.types[u]], planes[g.types[w]]))
    return out


# ------------------------------------------------------------------- prior


def floating_logpdf(pose: Pose, ctx: SceneContext) -> float:
    if not ctx.in_bounds(pose.t):
        return -np.inf
    return -math.log(ctx.bounds_volume) - LOG_SO3_VOLUME


def contact_logpdf(theta: ContactParams, cp: ContactPrior) -> float:
    c = theta.coords
    h = cp.ab_half_width
    if abs(c.a) > h or abs(c.b) > h:
        return -np.inf
    return (
        -_LOG_36
        - 2.0 * math.log(2.0 * h)
        + normal_logpdf(c.z, 0.0, cp.z_std)
        + vmf_s2_logpdf(c.eta, NORTH, cp.kappa)
        - LOG_S1_LENGTH
    )


def structure_logprior(g: SceneGraph, ctx: SceneContext) -> float:
    if ctx.structure_prior == "g0":
        return 0.0 if all(p == ROOT for p in g.parent) else -np.inf
    return -(g.n - 1) * np.log(g.n + 1)


def node_logprior(g: SceneGraph, v: int, ctx: SceneContext) -> float:
    th = g.params[v]
    if isinstance(th, Floating):
        if g.types[v] in ctx.fixed_poses:
            return 0.0
        return floating_logpdf(th.pose, ctx)
    return contact_logpdf(th, ctx.contact_prior)


def prior_logpdf(g: SceneGraph, ctx: SceneContext) -> float:
    """Log prior density; the type-assignment term is constant and omitted.

    Objects whose type has a fixed pose contribute nothing (point mass).
    """
    total = structure_logprior(g, ctx)
    for v in range(g.n):
        total += node_logprior(g, v, ctx)
    return float(total)


def sample_floating(ctx: SceneContext, rng) -> Floating:
    t = ctx.bounds_lo + rng.random(3) * (ctx.bounds_hi - ctx.bounds_lo)
    return Floating(Pose(t, random_quaternion(rng)))


def sample_contact(cp: ContactPrior, rng) -> ContactParams:
    f, fp = (int(x) for x in rng.integers(0, N_FACES, size=2))
    a, b = rng.uniform(-cp.ab_half_width, cp.ab_half_width, size=2)
    z = rng.normal(0.0, cp.z_std)
    eta = sample_vmf_s2(NORTH, cp.kappa, rng)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return ContactParams(f, fp, HopfContactCoords(a, b, z, eta, phi))


def sample_structure(n: int, rng) -> tuple:
    """Uniform rooted tree by rejection over parent vectors."""
    while True:
        p = tuple(int(x) for x in rng.integers(-1, n, size=n))
        if all(p[v] != v for v in range(n)) and is_tree(p):
            return p


def sample_prior(ctx: SceneContext, n: int, types: Sequence[str], rng, mode: str | None = None) -> SceneGraph:
    mode = mode or ctx.structure_prior
    parent = (ROOT,) * n if mode == "g0" else sample_structure(n, rng)
    params = [
        sample_floating(ctx, rng) if p == ROOT else sample_contact(ctx.contact_prior, rng)
        for p in parent
    ]
    return SceneGraph(tuple(types[:n]), parent, tuple(params))


# -------------------------------------------------------------------- JSON


def graph_to_dict(g: SceneGraph) -> dict:
    nodes = []
    for v in range(g.n):
        th = g.params[v]
        if isinstance(th, Floating):
            param = {"kind": "floating", "t": th.pose.t.tolist(), "q": th.pose.q.tolist()}
        else:
            c = th.coords
            param = {
                "kind": "contact", "f": th.f, "fp": th.fp, "a": c.a, "b": c.b, "z": c.z,
                "eta": c.eta.tolist(), "phi": c.phi,
            }
        p = g.parent[v]
        nodes.append({"id": v, "parent": "root" if p == ROOT else p, "param": param})
    return {"n": g.n, "types": list(g.types), "nodes": nodes}


def graph_from_dict(d: dict) -> SceneGraph:
    n = int(d["n"])
    nodes = sorted(d["nodes"], key=lambda x: x["id"])
    if len(nodes) != n or [x["id"] for x in nodes] != list(range(n)):
        raise ValueError("node ids must be 0..n-1")
    parent, params = [], []
    for node in nodes:
        parent.append(ROOT if node["parent"] == "root" else int(node["parent"]))
        p = node["param"]
        if p["kind"] == "floating":
            params.append(Floating(Pose(p["t"], p["q"])))
        elif p["kind"] == "contact":
            params.append(ContactParams(
                int(p["f"]), int(p["fp"]),
                HopfContactCoords(p["a"], p["b"], p["z"], p["eta"], p["phi"]),
            ))
        else:
            raise ValueError(f"unknown param kind {p['kind']!r}")
    return SceneGraph(tuple(d["types"]), tuple(parent), tuple(params))


def dumps_graph(g: SceneGraph) -> str:
    return json.dumps(graph_to_dict(g), sort_keys=True)
