"""Synthetic desk scenes in four categories, plus their on-disk format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import binary_dilation

from ..errors import PlacementFailure
from ..geometry import ContactParams, HopfContactCoords, Pose
from ..renderer import DepthImage, read_depth, render_poses, write_depth
from ..scenegraph import (
    NORTH,
    ROOT,
    Camera,
    Floating,
    SceneContext,
    SceneGraph,
    graph_from_dict,
    graph_to_dict,
    look_at,
    world_poses,
)
from ..shapes import ShapeBelief, bounding_cuboid_planes
from .objects import OBJECT_TYPES, TABLE, TABLE_POSE, learned_belief, object_shape, table_belief

CATEGORIES = ("single", "stacked", "partial_view", "partially_occluded")
TOP_FACE = 5  # +z face of a cuboid
MAX_TRIES = 300


def default_camera() -> Camera:
    return Camera(pose=look_at((0.0, -32.0, 26.0), (0.0, 0.0, 2.0)))


def make_context(types: Sequence[str], camera: Camera | None = None, learned: bool = True,
                 **kw) -> SceneContext:
    """Scene context for a type list that includes the fixed table."""
    beliefs = {}
    for m in set(types):
        if m == TABLE:
            beliefs[m] = table_belief()
        elif learned:
            beliefs[m] = learned_belief(m)
        else:
            beliefs[m] = ShapeBelief.from_shape(object_shape(m))
    return SceneContext(beliefs, camera=camera or default_camera(),
                        fixed_poses={TABLE: TABLE_POSE}, **kw)


def true_planes(types: Sequence[str]) -> dict:
    return {m: bounding_cuboid_planes(object_shape(m)) for m in set(types)}


@dataclass(frozen=True)
class SceneSpec:
    category: str
    types: tuple  # index 0 is the table
    seed: int
    graph: SceneGraph
    observation: DepthImage
    camera: Camera

    def true_poses(self) -> list[Pose]:
        return world_poses(self.graph, true_planes(self.types))


def render_scene(g: SceneGraph, cam: Camera, return_labels: bool = False):
    poses = world_poses(g, true_planes(g.types))
    shapes = [object_shape(m) for m in g.types]
    return render_poses(shapes, poses, cam, return_labels=return_labels)


def _on(parent_face: int, child_face: int, a: float, b: float, phi: float) -> ContactParams:
    return ContactParams(child_face, parent_face, HopfContactCoords(a, b, 0.0, NORTH, phi))


def _pixel_counts(g: SceneGraph, cam: Camera) -> np.ndarray:
    _, labels = render_scene(g, cam, return_labels=True)
    return np.bincount(labels.reshape(-1) + 2, minlength=g.n + 2)[2:]


def _alone_pixels(g: SceneGraph, v: int, cam: Camera) -> np.ndarray:
    poses = world_poses(g, true_planes(g.types))
    _, lab = render_poses([object_shape(g.types[v])], [poses[v]], cam, return_labels=True)
    return lab == 0


def _separated(g: SceneGraph, u: int, v: int, margin: int = 1) -> bool:
    """No cell of ``u`` falls inside ``v`` dilated by ``margin`` cells."""
    poses = world_poses(g, true_planes(g.types))
    su, sv = object_shape(g.types[u]), object_shape(g.types[v])
    pts = poses[u].apply((np.argwhere(su.occupancy) + 0.5) * su.resolution)
    local = (pts - poses[v].t) @ poses[v].R
    idx = np.floor(local / sv.resolution).astype(int)
    occ = binary_dilation(sv.occupancy, iterations=margin) if margin else sv.occupancy
    inside = np.all((idx >= 0) & (idx < np.array(sv.dims)), axis=1)
    return not occ[tuple(idx[inside].T)].any()


def _touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def generate_scene(category: str, types: Sequence[str] | None = None, rng=None, seed: int = 0,
                   camera: Camera | None = None, noise_std: float = 0.0) -> SceneSpec:
    """Sample a ground-truth scene graph and render its depth observation."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    cam = camera or default_camera()
    n_obj = 1 if category in ("single", "partial_view") else 2
    if types is None:
        types = tuple(rng.choice(OBJECT_TYPES, size=n_obj, replace=n_obj > len(OBJECT_TYPES)))
    types = tuple(str(t) for t in types)
    if len(types) != n_obj:
        raise ValueError(f"category {category!r} needs {n_obj} object types")
    all_types = (TABLE,) + types
    table = Floating(TABLE_POSE)

    for _ in range(MAX_TRIES):
        faces = [int(f) for f in rng.integers(0, 6, size=n_obj)]
        phis = rng.uniform(0.0, 2.0 * np.pi, size=n_obj)
        if category == "single":
            a, b = rng.uniform(-6.0, 6.0, size=2)
            g = SceneGraph(all_types, (ROOT, 0), (table, _on(TOP_FACE, faces[0], a, b, phis[0])))
        elif category == "partial_view":
            a = rng.choice([-1.0, 1.0]) * rng.uniform(14.0, 22.0)
            b = rng.uniform(-4.0, 8.0)
            g = SceneGraph(all_types, (ROOT, 0), (table, _on(TOP_FACE, faces[0], a, b, phis[0])))
        elif category == "stacked":
            a, b = rng.uniform(-5.0, 5.0, size=2)
            ta, tb = rng.uniform(-1.0, 1.0, size=2)
            g = SceneGraph(all_types, (ROOT, 0, 1), (
                table,
                _on(TOP_FACE, faces[0], a, b, phis[0]),
                _on(faces[0] ^ 1, faces[1], ta, tb, phis[1]),
            ))
        else:
            fa = rng.uniform(-6.0, 6.0)
            fb = rng.uniform(3.0, 9.0)
            na = fa + rng.uniform(-3.0, 3.0)
            nb = fb - rng.uniform(5.0, 11.0)
            g = SceneGraph(all_types, (ROOT, 0, 0), (
                table,
                _on(TOP_FACE, faces[0], fa, fb, phis[0]),
                _on(TOP_FACE, faces[1], na, nb, phis[1]),
            ))
        if _acceptable(category, g, cam):
            img = render_scene(g, cam)
            if noise_std > 0:
                hit = img.hit_mask()
                d = img.depths.copy()
                d[hit] += rng.normal(0.0, noise_std, size=int(hit.sum()))
                img = DepthImage(d, img.far)
            return SceneSpec(category, all_types, int(seed), g, img, cam)
    raise PlacementFailure(f"no valid {category} scene after {MAX_TRIES} tries")


def _acceptable(category: str, g: SceneGraph, cam: Camera) -> bool:
    counts = _pixel_counts(g, cam)
    if category == "single":
        return counts[1] >= 40 and not _touches_border(_alone_pixels(g, 1, cam))
    if category == "partial_view":
        alone = _alone_pixels(g, 1, cam)
        return counts[1] >= 30 and _touches_border(alone)
    if category == "stacked":
        return (counts[1] >= 40 and counts[2] >= 40
                and not any(_touches_border(_alone_pixels(g, v, cam)) for v in (1, 2)))
    # partially occluded: object 2 is the near occluder, object 1 the far one
    if not _separated(g, 1, 2):
        return False
    alone = int(_alone_pixels(g, 1, cam).sum())
    if alone < 60 or any(_touches_border(_alone_pixels(g, v, cam)) for v in (1, 2)):
        return False
    frac = counts[1] / alone
    return 0.2 <= frac <= 0.7 and counts[2] >= 40


# ------------------------------------------------------------------ on disk


def pose_to_dict(p: Pose) -> dict:
    return {"t": p.t.tolist(), "q": p.q.tolist()}


def pose_from_dict(d: dict) -> Pose:
    return Pose(d["t"], d["q"])


def camera_to_dict(c: Camera) -> dict:
    return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width,
            "height": c.height, "far": c.far, "pose": pose_to_dict(c.pose)}


def camera_from_dict(d: dict) -> Camera:
    d = dict(d)
    pose = pose_from_dict(d.pop("pose")) if "pose" in d else default_camera().pose
    return Camera(pose=pose, **{k: (int(v) if k in ("width", "height") else float(v))
                                for k, v in d.items()})


def save_scene(spec: SceneSpec, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "category": spec.category,
        "seed": spec.seed,
        "types": list(spec.types),
        "camera": camera_to_dict(spec.camera),
        "graph": graph_to_dict(spec.graph),
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    write_depth(out / "observed.dpt", spec.observation)


def load_scene(scene_dir) -> SceneSpec:
    d = Path(scene_dir)
    meta = json.loads((d / "scene.json").read_text())
    return SceneSpec(
        meta["category"], tuple(meta["types"]), int(meta["seed"]),
        graph_from_dict(meta["graph"]), read_depth(d / "observed.dpt"),
        camera_from_dict(meta["camera"]),
    )
