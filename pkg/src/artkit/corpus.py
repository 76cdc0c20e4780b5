"""Training-corpus curation: filtering, augmentation and conversation samples."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .codec import ArticulationScript, AxisCodebook, build_axis_codebook, encode_object
from .kinematics import ArticulatedObject, build_graph, merge_links, transform_object

__all__ = [
    "FilterPolicy",
    "FilterDecision",
    "AugmentParams",
    "ConversationSample",
    "CorpusEntry",
    "TASK_PROMPTS",
    "REFERENCE_TEMPLATE",
    "TASK_RATIO",
    "load_policy",
    "filter_object",
    "augment",
    "sample_augmentation",
    "apply_augmentation",
    "y_rotation",
    "emit_sample",
    "assign_tasks",
    "dataset_stats",
    "object_rng",
    "MAX_LINKS_BIN",
]

TASK_PROMPTS = {
    1: "Detect part boxes.",
    2: "Given part boxes, detect joints.",
    3: "Detect part boxes and joints.",
}
TASK_RATIO = (3, 2, 5)
AUGMENT_PROBABILITY = 0.75
SCALE_RANGE = (0.8, 1.05)
ROTATION_CHOICES = (90, 180, 270)
MAX_LINKS_BIN = 21
POINT_CLOUD_PLACEHOLDER = "<point_cloud>"

REFERENCE_TEMPLATE = """The reference code is as followed:
@dataclass
class BBox:
    min_x: int
    min_y: int
    min_z: int
    max_x: int
    max_y: int
    max_z: int

@dataclass
class RevoluteJoint:
    parent_box_id: int
    child_box_id: int
    axis_direction: int
    axis_position: [int, int, int]
    rotation_limit: [int, int]

@dataclass
class ContinuousJoint:
    parent_box_id: int
    child_box_id: int
    axis_direction: int
    axis_position: [int, int, int]

@dataclass
class ScrewJoint:
    parent_box_id: int
    child_box_id: int
    axis_direction: int
    axis_position: [int, int, int]
    translation_limit: [int, int]

@dataclass
class PrismaticJoint:
    parent_box_id: int
    child_box_id: int
    axis_direction: int
    translation_limit: [int, int]"""


# -- filtering -----------------------------------------------------------------------

@dataclass(frozen=True)
class FilterPolicy:
    max_joints: int = 20
    min_part_volume_fraction: float = 1e-4
    excluded_categories: frozenset = frozenset({"keyboard", "remote"})

    def __post_init__(self):
        if self.max_joints < 1:
            raise ValueError("max_joints must be at least 1")
        if not 0 < self.min_part_volume_fraction < 1:
            raise ValueError("min_part_volume_fraction must lie in (0, 1)")
        object.__setattr__(self, "excluded_categories",
                           frozenset(c.lower() for c in self.excluded_categories))


def load_policy(text: str, base: FilterPolicy = FilterPolicy()) -> FilterPolicy:
    """``key = value`` lines; ``excluded_categories`` takes a comma-separated list."""
    kw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"policy line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "max_joints":
            kw[k] = int(v)
        elif k == "min_part_volume_fraction":
            kw[k] = float(v)
        elif k == "excluded_categories":
            kw[k] = frozenset(c.strip() for c in v.split(",") if c.strip())
        else:
            raise ValueError(f"unknown policy key {k!r}")
    return FilterPolicy(**{**base.__dict__, **kw})


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reasons: tuple[str, ...]
    object: ArticulatedObject


def filter_object(obj: ArticulatedObject, policy: FilterPolicy = FilterPolicy()) -> FilterDecision:
    """Drop over-complex or excluded objects; fold tiny parts into their parents."""
    reasons = []
    if obj.category is not None and obj.category.lower() in policy.excluded_categories:
        reasons.append("ExcludedCategory")
    graph = build_graph(obj)
    total = obj.union_aabb(prefer_mesh=False).volume()
    if total > 0:
        while True:
            parent_of = {j.child: j.parent for j in obj.joints}
            small = [l for l in obj.links
                     if l.id != graph.root and l.id in parent_of
                     and l.aabb.volume() < policy.min_part_volume_fraction * total]
            if not small:
                break
            tiny = small[0]
            obj = merge_links(obj, keep=parent_of[tiny.id], absorb=tiny.id)
            graph = build_graph(obj)
            reasons.append(f"MergedSmallPart:{tiny.name}")
    if len(obj.joints) > policy.max_joints:
        reasons.append("TooManyJoints")
    keep = not any(r in ("ExcludedCategory", "TooManyJoints") for r in reasons)
    return FilterDecision(keep, tuple(reasons), obj)


# -- augmentation --------------------------------------------------------------------

def y_rotation(degrees: float) -> np.ndarray:
    """Right-handed rotation about +y (counter-clockwise seen from +y)."""
    quarter = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}
    c, s = quarter.get(int(degrees) % 360, (math.cos(math.radians(degrees)),
                                              math.sin(math.radians(degrees))))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=np.float64)


@dataclass(frozen=True)
class AugmentParams:
    applied: bool
    scale: float = 1.0
    rotation_deg: int = 0

    def matrix(self) -> np.ndarray:
        return self.scale * y_rotation(self.rotation_deg)


def sample_augmentation(rng: np.random.Generator) -> AugmentParams:
    """One coin (p = 0.75) gates both the scale and the quarter-turn rotation."""
    if rng.random() >= AUGMENT_PROBABILITY:
        return AugmentParams(False)
    scale = float(rng.uniform(*SCALE_RANGE))
    theta = int(rng.choice(ROTATION_CHOICES))
    return AugmentParams(True, scale, theta)


def apply_augmentation(obj: ArticulatedObject, params: AugmentParams) -> ArticulatedObject:
    if not params.applied:
        return obj
    return transform_object(obj, rotation=y_rotation(params.rotation_deg), scale=params.scale)


def augment(obj: ArticulatedObject, rng: np.random.Generator) -> ArticulatedObject:
    """Randomly scale and quarter-turn the object about y; layout and joints follow."""
    return apply_augmentation(obj, sample_augmentation(rng))


def object_rng(seed: int, object_id: str) -> np.random.Generator:
    """Independent generator per object, derived from the run seed and the object id."""
    digest = hashlib.sha256(object_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


# -- samples -------------------------------------------------------------------------

@dataclass(frozen=True)
class ConversationSample:
    task: int
    human: str
    gpt: str
    point_cloud: str

    def to_record(self) -> dict:
        return {
            "conversations": [
                {"from": "human", "value": self.human},
                {"from": "gpt", "value": self.gpt},
            ],
            "point_clouds": [self.point_cloud],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False)


def emit_sample(obj_or_script, task: int, codebook: Optional[AxisCodebook] = None,
                point_cloud: str = "") -> ConversationSample:
    """Build one conversation record for task 1 (layout), 2 (joints) or 3 (both)."""
    if task not in TASK_PROMPTS:
        raise ValueError(f"unknown task {task}")
    if isinstance(obj_or_script, ArticulationScript):
        script = obj_or_script
    else:
        script = encode_object(obj_or_script, codebook or build_axis_codebook())
    layout = script.render_layout()
    art = script.render_articulation()
    human = f"{POINT_CLOUD_PLACEHOLDER}\n{TASK_PROMPTS[task]}\n{REFERENCE_TEMPLATE}"
    if task == 1:
        gpt = layout
    elif task == 2:
        human = f"{human}\n{layout}"
        gpt = art
    else:
        gpt = f"{layout}\n{art}"
    return ConversationSample(task, human, gpt, point_cloud)


def assign_tasks(n: int, seed: int = 0, ratio: Sequence[int] = TASK_RATIO) -> list[int]:
    """Task label per sample so that counts follow ``ratio`` within one sample.

    Counts come from largest-remainder apportionment; positions are shuffled
    deterministically from ``seed``.
    """
    total = sum(ratio)
    exact = [n * r / total for r in ratio]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(ratio)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    labels = [t + 1 for t, c in enumerate(counts) for _ in range(c)]
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x7A5C,)))
    perm = rng.permutation(n)
    return [labels[i] for i in perm]


# -- statistics ----------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusEntry:
    object_id: str
    object: ArticulatedObject
    source: str = "unknown"


def dataset_stats(entries: Iterable[CorpusEntry]) -> dict:
    """Object counts per category and source, plus a histogram of link counts.

    Link counts above 21 land in a single overflow bin ``">21"``.
    """
    entries = list(entries)
    cats = Counter((e.object.category or "unknown") for e in entries)
    sources = Counter(e.source for e in entries)
    hist = {str(k): 0 for k in range(1, MAX_LINKS_BIN + 1)}
    hist[f">{MAX_LINKS_BIN}"] = 0
    for e in entries:
        n = len(e.object.links)
        key = str(n) if 1 <= n <= MAX_LINKS_BIN else f">{MAX_LINKS_BIN}"
        if n >= 1:
            hist[key] += 1
    return {
        "objects": len(entries),
        "categories": dict(sorted(cats.items())),
        "sources": dict(sorted(sources.items())),
        "link_histogram": hist,
        "max_links": max((len(e.object.links) for e in entries), default=0),
    }
