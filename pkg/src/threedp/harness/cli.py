"""``threedp`` command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 inference failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import (
    DimMismatch,
    InconsistentObservation,
    NoHypotheses,
    PlacementFailure,
    WeightMismatch,
)
from ..existence import ExistenceConfig, infer_existence
from ..inference.kernels import KernelConfig
from ..inference.pipeline import run_inference
from ..likelihood import CloudLikParams
from ..renderer import read_depth, write_depth
from ..scenegraph import dumps_graph, graph_from_dict, graph_to_dict
from ..shape_learning import (
    learn_shape,
    make_room,
    render_training_views,
    synth_pose_belief,
    training_camera,
    training_cameras,
)
from ..shapes import DEFAULT_DIMS, DEFAULT_RESOLUTION, write_vox
from .evaluate import THRESHOLDS, read_rows, report_from_rows, scene_errors
from .objects import OBJECT_TYPES, object_shape
from .occlusion import OCCLUDER_LEVELS, existence_setup
from .scenes import (
    CATEGORIES,
    camera_from_dict,
    camera_to_dict,
    default_camera,
    generate_scene,
    load_scene,
    make_context,
    pose_from_dict,
    pose_to_dict,
    render_scene,
    save_scene,
)

EXIT_OK, EXIT_INPUT, EXIT_FAILURE = 0, 2, 3


class InputError(Exception):
    pass


def _seed(arg) -> int:
    env = os.environ.get("THREEDP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"THREEDP_SEED must be an integer, got {env!r}") from None
    return int(arg)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None


def load_config(path) -> tuple[KernelConfig, CloudLikParams, dict]:
    """Overrides for KernelConfig, CloudLikParams and the camera.

    Keys may be grouped under "kernel", "likelihood" and "camera", or given
    flat, in which case they are matched to whichever holds that field name.
    """
    raw = _read_json(path) if path else {}
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    kfields = {f.name for f in dataclasses.fields(KernelConfig)}
    lfields = {f.name for f in dataclasses.fields(CloudLikParams)}
    cfields = {"fx", "fy", "cx", "cy", "width", "height", "far", "pose"}
    kern, lik, cam = dict(raw.get("kernel", {})), dict(raw.get("likelihood", {})), dict(raw.get("camera", {}))
    for k, v in raw.items():
        if k in ("kernel", "likelihood", "camera"):
            continue
        if k in kfields:
            kern[k] = v
        elif k in lfields:
            lik[k] = v
        elif k in cfields:
            cam[k] = v
        else:
            raise InputError(f"unknown config key {k!r}")
    for name, d, allowed in (("kernel", kern, kfields), ("likelihood", lik, lfields),
                             ("camera", cam, cfields)):
        bad = set(d) - allowed
        if bad:
            raise InputError(f"unknown {name} keys: {sorted(bad)}")
    try:
        return KernelConfig(**kern), CloudLikParams(**lik), cam
    except (TypeError, ValueError) as e:
        raise InputError(f"bad config value: {e}") from None


def _lik_keys(path) -> set:
    if not path:
        return set()
    raw = _read_json(path)
    return set(raw.get("likelihood", {})) | set(raw)


# -------------------------------------------------------------- subcommands


def cmd_make_views(a) -> int:
    """Render training views of a library object (input for learn-shapes)."""
    shape = object_shape(a.object)
    cam = training_camera()
    poses = training_cameras(np.zeros(3), a.views)
    imgs = render_training_views(shape, _object_grid_pose(), cam, poses, make_room())
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(imgs):
        write_depth(out / f"view_{i:03d}.dpt", img)
    (out / "poses.json").write_text(json.dumps({"poses": [pose_to_dict(p) for p in poses]}, indent=2))
    return EXIT_OK


def _object_grid_pose():
    from ..geometry import Pose

    return Pose(-np.array(DEFAULT_DIMS, dtype=float) * DEFAULT_RESOLUTION / 2.0)


def cmd_learn_shapes(a) -> int:
    views = sorted(Path(a.views).glob("*.dpt"))
    if not views:
        raise InputError(f"no .dpt files in {a.views}")
    meta = _read_json(a.poses)
    try:
        poses = [pose_from_dict(p) for p in meta["poses"]]
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"bad pose file: {e}") from None
    if len(poses) != len(views):
        raise InputError(f"{len(views)} views but {len(poses)} poses")
    imgs = [read_depth(v) for v in views]
    cam = training_camera()
    room, room_pose = make_room()
    rng = np.random.default_rng(_seed(a.seed))
    belief = synth_pose_belief(poses, a.particles, rng, a.trans_noise, a.rot_kappa or None,
                               room, room_pose, _object_grid_pose())
    learned = learn_shape(imgs, belief, cam, DEFAULT_DIMS, DEFAULT_RESOLUTION)
    write_vox(a.out, learned.belief)
    return EXIT_OK


def cmd_generate(a) -> int:
    seed = _seed(a.seed)
    out = Path(a.out)
    if a.category == "hidden":
        level = None if a.level < 0 else a.level
        if level is not None and level >= len(OCCLUDER_LEVELS):
            raise InputError(f"level must be < {len(OCCLUDER_LEVELS)}")
        observed, ctx, prior = existence_setup(level, p_pres=a.p_pres)
        out.mkdir(parents=True, exist_ok=True)
        write_depth(out / "observed.dpt", observed)
        write_depth(out / "base.dpt", ctx.base)
        meta = {"kind": "hidden", "level": level, "seed": seed, "types": list(prior.types),
                "p_pres": list(prior.p_pres), "bounds_lo": ctx.bounds_lo.tolist(),
                "bounds_hi": ctx.bounds_hi.tolist(), "camera": camera_to_dict(ctx.camera)}
        (out / "existence.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return EXIT_OK
    types = tuple(a.types.split(",")) if a.types else None
    if types and any(t not in OBJECT_TYPES for t in types):
        raise InputError(f"object types must be among {OBJECT_TYPES}")
    spec = generate_scene(a.category, types, seed=seed, noise_std=a.noise)
    save_scene(spec, out)
    return EXIT_OK


def cmd_infer(a) -> int:
    spec = load_scene(a.scene)
    cfg, lik, cam_over = load_config(a.config)
    if a.ablate_structure:
        cfg = dataclasses.replace(cfg, ablate_structure=True)
    cam = spec.camera
    if cam_over:
        d = camera_to_dict(cam)
        d.update(cam_over)
        cam = camera_from_dict(d)
    seed = _seed(a.seed if a.seed is not None else spec.seed)
    ctx = make_context(spec.types, camera=cam)
    if not _lik_keys(a.config) & {"bounds_volume"}:
        lik = dataclasses.replace(lik, bounds_volume=ctx.bounds_volume)
    res = run_inference(spec.observation, spec.types, ctx, cfg, np.random.default_rng(seed), lik)
    method = "3dp3*" if cfg.ablate_structure else "3dp3"
    doc = {
        "method": method,
        "seed": seed,
        "best": graph_to_dict(res.best),
        "best_score": res.best_score,
        "samples": [graph_to_dict(g) for g in res.samples],
        "stats": {k: list(v) for k, v in sorted(res.stats.items())},
    }
    out = Path(a.samples) if a.samples else Path(a.scene) / f"samples_{method.replace('*', '_ablated')}.json"
    out.write_text(json.dumps(doc, sort_keys=True))
    print(json.dumps({"best": json.loads(dumps_graph(res.best)), "best_score": res.best_score}))
    return EXIT_OK


def cmd_infer_existence(a) -> int:
    d = Path(a.scene)
    meta = _read_json(d / "existence.json")
    level = meta.get("level")
    observed = read_depth(d / "observed.dpt")
    _, ctx, prior = existence_setup(level, tuple(meta["types"]), tuple(meta["p_pres"]),
                                    camera_from_dict(meta["camera"]))
    if observed.depths.shape != (ctx.camera.height, ctx.camera.width):
        raise InputError("observation does not match the camera")
    seed = _seed(a.seed if a.seed is not None else meta.get("seed", 0))
    cfg = ExistenceConfig(n_sweeps=a.sweeps)
    res = infer_existence(observed, prior, ctx, cfg, np.random.default_rng(seed))
    doc = {"presence": res.presence, "n_samples": len(res.samples), "seed": seed}
    text = json.dumps(doc, sort_keys=True)
    (d / "existence_result.json").write_text(text)
    print(text)
    return EXIT_OK


def cmd_evaluate(a) -> int:
    root = Path(a.results)
    if not root.is_dir():
        raise InputError(f"no such directory: {root}")
    rows = []
    for scene_dir in sorted(p for p in root.iterdir() if (p / "scene.json").exists()):
        spec = load_scene(scene_dir)
        for sfile in sorted(scene_dir.glob("samples*.json")):
            doc = _read_json(sfile)
            est = graph_from_dict(doc["best"])
            for m, e in scene_errors(est, spec):
                rows.append((scene_dir.name, spec.category, m, doc.get("method", "3dp3"), e))
    for f in sorted(root.glob("*.csv")):
        if f.resolve() != Path(a.report).resolve():
            rows.extend(read_rows(f))
    if not rows:
        raise InputError("no results found")
    rep = report_from_rows(rows, THRESHOLDS)
    rep.write_csv(a.report)
    rep.write_curves(Path(a.report).with_suffix(".curves.csv"))
    summary = {f"{m}/{c}": acc for (m, c), acc in sorted(rep.accuracy.items())}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_render(a) -> int:
    doc = _read_json(a.scene)
    try:
        g = graph_from_dict(doc["graph"] if "graph" in doc else doc)
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"bad scene graph: {e}") from None
    unknown = [m for m in g.types if m not in OBJECT_TYPES + ("table",)]
    if unknown:
        raise InputError(f"unknown object types {unknown}")
    cam = camera_from_dict(doc["camera"]) if "camera" in doc else default_camera()
    write_depth(a.out, render_scene(g, cam))
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="threedp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("learn-shapes", help="learn a voxel belief from depth views")
    s.add_argument("--views", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--particles", type=int, default=1)
    s.add_argument("--trans-noise", type=float, default=0.0)
    s.add_argument("--rot-kappa", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_learn_shapes)

    s = sub.add_parser("make-views", help="render training views of a library object")
    s.add_argument("--object", required=True, choices=OBJECT_TYPES)
    s.add_argument("--views", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_views)

    s = sub.add_parser("generate", help="generate a synthetic scene")
    s.add_argument("--category", required=True, choices=CATEGORIES + ("hidden",))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--types", default=None, help="comma-separated object types")
    s.add_argument("--noise", type=float, default=0.0, help="depth noise std (cm)")
    s.add_argument("--level", type=int, default=1, help="occluder level for 'hidden' (-1: none)")
    s.add_argument("--p-pres", type=float, default=0.9)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("infer", help="infer a scene graph for a generated scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--ablate-structure", action="store_true")
    s.add_argument("--samples", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("infer-existence", help="presence inference for a hidden-object scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--sweeps", type=int, default=3000)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_infer_existence)

    s = sub.add_parser("evaluate", help="ADD-S report over inferred scenes")
    s.add_argument("--results", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render", help="render a scene-graph JSON to a depth file")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, DimMismatch, WeightMismatch, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NoHypotheses, PlacementFailure, InconsistentObservation) as e:
        print(f"inference failed: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
