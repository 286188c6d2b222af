#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--csv out.csv]

Each row first checks that both paths agree to 1e-9.
"""

from __future__ import annotations

import argparse
import csv
import sys
import timeit

import numpy as np

from threedp.geometry import Pose
from threedp.harness.objects import TABLE_POSE, object_shape, table_shape
from threedp.harness.scenes import default_camera
from threedp.likelihood import image_ball_counts
from threedp.renderer import render_poses
from threedp.shape_learning import march_counts, render_training_views, training_camera, training_cameras


def _scene():
    cam = default_camera()
    shapes = [table_shape(), object_shape("l_shape"), object_shape("cylinder")]
    poses = [TABLE_POSE, Pose([-9.0, -4.0, 0.0]), Pose([2.0, 0.0, 0.0])]
    return cam, shapes, poses


def bench_render(use_jit):
    cam, shapes, poses = _scene()
    return lambda: render_poses(shapes, poses, cam, use_jit=use_jit).depths


def bench_window(use_jit):
    cam, shapes, poses = _scene()
    obs = render_poses(shapes, poses, cam)
    moved = [poses[0], Pose([-8.6, -4.2, 0.0]), Pose([2.3, 0.1, 0.0])]
    ren = render_poses(shapes, moved, cam)
    return lambda: image_ball_counts(obs, ren, cam, 0.5, use_jit=use_jit)


def bench_march(use_jit):
    shape = object_shape("box")
    cam = training_camera()
    grid_pose = Pose(-shape.extent() / 2.0)
    view = training_cameras(np.zeros(3), 5)[0]
    img = render_training_views(shape, grid_pose, cam, [view])[0]
    return lambda: np.stack(march_counts(shape.dims, shape.resolution, grid_pose, cam, view, img,
                                         use_jit=use_jit))


KERNELS = {"render_dda": bench_render, "window_counts": bench_window, "voxel_march": bench_march}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", default=None)
    a = ap.parse_args(argv)
    rows = []
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  same")
    for name, make in KERNELS.items():
        fj, fn = make(True), make(False)
        same = bool(np.allclose(fj(), fn(), rtol=0.0, atol=1e-9))  # also warms the jit cache
        tj = min(timeit.repeat(fj, number=1, repeat=a.repeat)) * 1e3
        tn = min(timeit.repeat(fn, number=1, repeat=max(1, a.repeat // 2))) * 1e3
        rows.append((name, tj, tn, tn / tj, same))
        print(f"{name:<14}{tj:>10.3f}{tn:>10.2f}{tn / tj:>8.1f}x  {same}")
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("kernel", "numba_ms", "numpy_ms", "speedup", "agree"))
            w.writerows(rows)
    return 0 if all(r[4] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
