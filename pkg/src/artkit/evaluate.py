"""Evaluation of predicted articulated objects against ground truth."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ArtkitError, CategoryMismatch, DegenerateExtent, NonUnitVector
from .geometry import aabb_iou
from .kinematics import ArticulatedObject, Joint, JointKind, build_graph, transform_object

__all__ = [
    "UP_AXIS_MAPS",
    "PartMatching",
    "ObjectMetrics",
    "EvalReport",
    "align",
    "match_parts",
    "part_miou",
    "match_joints",
    "joint_type_acc",
    "axis_angle_err",
    "pivot_err",
    "interval_iou",
    "range_iou",
    "graph_acc",
    "evaluate_object",
    "evaluate",
    "METRIC_COLUMNS",
]

# rotation applied to the prediction before scale/offset alignment
UP_AXIS_MAPS = {
    "identity": np.eye(3),
    "z-to-y": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
    "y-to-z": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
}

METRIC_COLUMNS = (
    ("miou", "mIoU"),
    ("type_acc", "Type Acc"),
    ("axis_err", "Joint-Axis-Err"),
    ("pivot_err", "Joint-Pivot-Err"),
    ("range_iou", "Range-IoU"),
    ("graph_acc", "Graph Acc"),
)

PARALLEL_EPS = 1e-6


def align(pred: ArticulatedObject, gt: ArticulatedObject, up_axis: str = "identity") -> ArticulatedObject:
    """Re-axis ``pred`` then scale and shift it so its union box matches ``gt``'s.

    The scale matches the longest extents and the offset matches box centres.
    """
    rot = UP_AXIS_MAPS[up_axis]
    rotated = transform_object(pred, rotation=rot) if up_axis != "identity" else pred
    pb, gb = rotated.union_aabb(prefer_mesh=False), gt.union_aabb(prefer_mesh=False)
    ps, gs = float(pb.extent.max()), float(gb.extent.max())
    if ps <= 0 or gs <= 0:
        raise DegenerateExtent("cannot align objects with zero extent")
    scale = gs / ps
    offset = gb.center - scale * pb.center
    return transform_object(rotated, scale=scale, offset=offset)


@dataclass(frozen=True)
class PartMatching:
    pairs: tuple[tuple[int, int], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]
    cost: float = 0.0


def match_parts(pred: ArticulatedObject, gt: ArticulatedObject) -> PartMatching:
    """Optimal assignment of parts by distance between box centres.

    Indices refer to positions in ``pred.links`` and ``gt.links``.
    """
    n_p, n_g = len(pred.links), len(gt.links)
    if n_p == 0 or n_g == 0:
        return PartMatching((), tuple(range(n_p)), tuple(range(n_g)))
    cp = np.array([l.aabb.center for l in pred.links])
    cg = np.array([l.aabb.center for l in gt.links])
    cost = np.linalg.norm(cp[:, None] - cg[None], axis=2)
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(sorted(zip(rows.tolist(), cols.tolist())))
    return PartMatching(
        pairs,
        tuple(sorted(set(range(n_p)) - set(rows.tolist()))),
        tuple(sorted(set(range(n_g)) - set(cols.tolist()))),
        float(cost[rows, cols].sum()),
    )


def part_miou(matching: PartMatching, pred: ArticulatedObject, gt: ArticulatedObject) -> float:
    """Mean box IoU; unmatched parts count as 0 over ``max(n_pred, n_gt)`` parts."""
    n = max(len(pred.links), len(gt.links))
    if n == 0:
        return 1.0
    total = sum(aabb_iou(pred.links[p].aabb, gt.links[g].aabb) for p, g in matching.pairs)
    return total / n


def match_joints(matching: PartMatching, pred: ArticulatedObject, gt: ArticulatedObject
                 ) -> list[tuple[Joint, Joint]]:
    """Pair joints whose child parts were matched to each other."""
    pred_pos = {l.id: i for i, l in enumerate(pred.links)}
    gt_pos = {l.id: i for i, l in enumerate(gt.links)}
    part_map = dict(matching.pairs)
    gt_by_child = {gt_pos[j.child]: j for j in gt.joints}
    out = []
    for j in pred.joints:
        g_child = part_map.get(pred_pos[j.child])
        if g_child is not None and g_child in gt_by_child:
            out.append((j, gt_by_child[g_child]))
    return out


def joint_type_acc(pairs: Sequence[tuple[Joint, Joint]], n_pred: int, n_gt: int) -> float:
    """Share of joints with the right kind; unmatched joints count as wrong."""
    n = max(n_pred, n_gt)
    if n == 0:
        return 1.0
    return sum(1 for p, g in pairs if p.kind == g.kind) / n


def _unit(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(a)
    if abs(n - 1.0) > 1e-6:
        raise NonUnitVector(f"{a.tolist()} is not a unit vector")
    return a


def axis_angle_err(a_p, a_g) -> float:
    """Angle between two axis lines, ignoring direction sign; in ``[0, pi/2]``."""
    d = float(np.clip(np.dot(_unit(a_p), _unit(a_g)), -1.0, 1.0))
    return min(math.acos(d), math.acos(-d))


def pivot_err(x_p, a_p, x_g, a_g) -> float:
    """Distance between the predicted and ground-truth axis lines.

    For (near-)parallel axes this is the distance from ``x_p`` to the
    ground-truth line.
    """
    x_p, x_g = np.asarray(x_p, dtype=np.float64), np.asarray(x_g, dtype=np.float64)
    a_p, a_g = _unit(a_p), _unit(a_g)
    p = x_p - x_g
    cross = np.cross(a_p, a_g)
    norm = np.linalg.norm(cross)
    if norm < PARALLEL_EPS:
        return float(np.linalg.norm(p - np.dot(p, a_g) * a_g))
    return float(abs(np.dot(p, cross)) / norm)


def interval_iou(a, b) -> float:
    lo_a, hi_a = sorted(a)
    lo_b, hi_b = sorted(b)
    inter = max(0.0, min(hi_a, hi_b) - max(lo_a, lo_b))
    union = max(hi_a, hi_b) - min(lo_a, lo_b)
    if union <= 0:
        return 1.0 if (lo_a, hi_a) == (lo_b, hi_b) else 0.0
    return inter / union


def range_iou(r_p, r_g) -> float:
    """Interval IoU, also trying the predicted interval negated; the larger wins."""
    neg = (-r_p[1], -r_p[0])
    return max(interval_iou(r_p, r_g), interval_iou(neg, r_g))


def _graph(obj: ArticulatedObject) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(l.id for l in obj.links)
    g.add_edges_from((j.parent, j.child) for j in obj.joints)
    return g


def _degree_signature(g: nx.DiGraph):
    return sorted((g.in_degree(n), g.out_degree(n)) for n in g.nodes)


def graph_acc(pred: ArticulatedObject, gt: ArticulatedObject) -> int:
    """1 when the kinematic graphs are isomorphic as unlabeled directed graphs."""
    try:
        build_graph(pred)
    except ArtkitError:
        return 0
    gp, gg = _graph(pred), _graph(gt)
    if gp.number_of_nodes() != gg.number_of_nodes() or gp.number_of_edges() != gg.number_of_edges():
        return 0
    if _degree_signature(gp) != _degree_signature(gg):
        return 0
    return int(nx.is_isomorphic(gp, gg))


@dataclass(frozen=True)
class ObjectMetrics:
    object_id: str
    category: str
    miou: float
    type_acc: float
    axis_err: Optional[float]
    pivot_err: Optional[float]
    range_iou: Optional[float]
    graph_acc: int


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def evaluate_object(pred: ArticulatedObject, gt: ArticulatedObject, object_id: str = "",
                    category: str = "", up_axis: str = "identity") -> ObjectMetrics:
    aligned = align(pred, gt, up_axis)
    matching = match_parts(aligned, gt)
    pairs = match_joints(matching, aligned, gt)
    movable = [(p, g) for p, g in pairs
               if p.kind != JointKind.FIXED and g.kind != JointKind.FIXED]
    axis = [axis_angle_err(p.axis, g.axis) for p, g in movable]
    pivot = [pivot_err(p.origin, p.axis, g.origin, g.axis) for p, g in movable
             if p.axis_origin is not None and g.axis_origin is not None]
    ranges = [range_iou(p.limit, g.limit) for p, g in movable
              if p.limit is not None and g.limit is not None
              and p.kind.translational_limit == g.kind.translational_limit]
    return ObjectMetrics(
        object_id,
        category,
        part_miou(matching, aligned, gt),
        joint_type_acc(pairs, len(pred.joints), len(gt.joints)),
        _mean(axis),
        _mean(pivot),
        _mean(ranges),
        graph_acc(pred, gt),
    )


@dataclass
class EvalReport:
    objects: list[ObjectMetrics]
    categories: dict[str, dict[str, Optional[float]]]
    overall: dict[str, Optional[float]]

    def to_dict(self) -> dict:
        return {
            "objects": [asdict(o) for o in self.objects],
            "categories": self.categories,
            "overall": self.overall,
        }

    def table(self) -> str:
        """Plain-text table: one row per category plus the overall row."""
        header = ["Category"] + [title for _, title in METRIC_COLUMNS]
        rows = [[c] + [_cell(m[k]) for k, _ in METRIC_COLUMNS] for c, m in self.categories.items()]
        rows.append(["Overall"] + [_cell(self.overall[k]) for k, _ in METRIC_COLUMNS])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
        sep = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(header), sep] + [fmt(r) for r in rows]) + "\n"


def _cell(v):
    return "-" if v is None else f"{v:.4f}"


def evaluate(pred_set: Sequence[ArticulatedObject], gt_set: Sequence[ArticulatedObject],
             categories: Sequence[str], object_ids: Sequence[str] = None,
             up_axis: str = "identity") -> EvalReport:
    """Per-object metrics, averaged within each category, then across categories."""
    if not (len(pred_set) == len(gt_set) == len(categories)):
        raise CategoryMismatch(
            f"{len(pred_set)} predictions, {len(gt_set)} ground truths, {len(categories)} labels")
    ids = list(object_ids) if object_ids is not None else [str(i) for i in range(len(gt_set))]
    records = []
    for oid, p, g, cat in zip(ids, pred_set, gt_set, categories):
        if g.category is not None and g.category != cat:
            raise CategoryMismatch(f"object {oid}: labelled {cat!r}, ground truth says {g.category!r}")
        records.append(evaluate_object(p, g, oid, cat, up_axis))
    per_cat: dict[str, dict[str, Optional[float]]] = {}
    for cat in sorted(set(categories)):
        rows = [r for r in records if r.category == cat]
        per_cat[cat] = {k: _mean(getattr(r, k) for r in rows) for k, _ in METRIC_COLUMNS}
    overall = {k: _mean(m[k] for m in per_cat.values()) for k, _ in METRIC_COLUMNS}
    return EvalReport(records, per_cat, overall)
