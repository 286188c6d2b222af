"""ADD-S pose error and suite-level accuracy / quartile reports."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyModel
from ..geometry import Pose
from ..scenegraph import SceneGraph, world_poses
from ..shapes import surface_cloud
from .objects import TABLE, object_shape
from .scenes import SceneSpec, true_planes

THRESHOLDS = (0.5, 1.0, 2.0)
CSV_HEADER = ("scene_id", "category", "object_type", "method", "add_s_cm")


def add_s(est: Pose, truth: Pose, model_points: np.ndarray) -> float:
    """Mean distance from each truth-placed point to the closest est-placed point."""
    pts = np.asarray(model_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("model has no points")
    d, _ = cKDTree(est.apply(pts)).query(truth.apply(pts))
    return float(d.mean())


def model_points(object_type: str) -> np.ndarray:
    return surface_cloud(object_shape(object_type))


def scene_errors(est: SceneGraph, spec: SceneSpec) -> list[tuple[str, float]]:
    """(type, ADD-S) for every non-table object, matched by node index."""
    planes = true_planes(spec.types)
    est_poses = world_poses(est, planes)
    true_poses = spec.true_poses()
    return [
        (m, add_s(est_poses[v], true_poses[v], model_points(m)))
        for v, m in enumerate(spec.types)
        if m != TABLE
    ]


@dataclass
class EvalReport:
    rows: list  # (scene_id, category, object_type, method, add_s_cm)
    thresholds: tuple = THRESHOLDS
    accuracy: dict = field(default_factory=dict)  # (method, category) -> {thr: acc}
    quartiles: dict = field(default_factory=dict)  # (method, category, type) -> (q1,q2,q3)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow(list(r[:4]) + [f"{r[4]:.6f}"])

    def curve(self, method: str, category: str = "all", grid=None) -> tuple[np.ndarray, np.ndarray]:
        """Accuracy as a function of ADD-S threshold, for plotting."""
        grid = np.linspace(0.0, 5.0, 51) if grid is None else np.asarray(grid)
        errs = np.array([r[4] for r in self.rows
                         if r[3] == method and category in ("all", r[1])])
        if len(errs) == 0:
            return grid, np.zeros_like(grid)
        return grid, np.array([(errs < t).mean() for t in grid])

    def write_curves(self, path) -> None:
        methods = sorted({r[3] for r in self.rows})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("method", "threshold_cm", "accuracy"))
            for m in methods:
                for t, a in zip(*self.curve(m)):
                    w.writerow((m, f"{t:.3f}", f"{a:.6f}"))


def _quartiles(x) -> tuple:
    q = np.percentile(np.asarray(x, dtype=float), [25, 50, 75])
    return tuple(float(v) for v in q)


def evaluate_suite(results: Sequence, thresholds: Sequence[float] = THRESHOLDS,
                   method: str = "3dp3") -> EvalReport:
    """``results`` holds (est_graph, spec) or (est_graph, spec, method) items."""
    if not results:
        raise ValueError("no results to evaluate")
    rows = []
    for item in results:
        est, spec = item[0], item[1]
        meth = item[2] if len(item) > 2 else method
        for m, e in scene_errors(est, spec):
            rows.append((spec.seed, spec.category, m, meth, e))
    return report_from_rows(rows, thresholds)


def report_from_rows(rows, thresholds: Sequence[float] = THRESHOLDS) -> EvalReport:
    rep = EvalReport(list(rows), tuple(thresholds))
    by_cat = defaultdict(list)
    by_type = defaultdict(list)
    for sid, cat, m, meth, e in rep.rows:
        for c in (cat, "all"):
            by_cat[(meth, c)].append(e)
            by_type[(meth, c, m)].append(e)
            by_type[(meth, c, "all")].append(e)
    for key, errs in by_cat.items():
        errs = np.asarray(errs)
        rep.accuracy[key] = {t: float((errs < t).mean()) for t in rep.thresholds}
    for key, errs in by_type.items():
        rep.quartiles[key] = _quartiles(errs)
    return rep


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(row["scene_id"], row["category"], row["object_type"], row["method"],
                 float(row["add_s_cm"])) for row in r]
