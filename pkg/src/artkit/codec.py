"""Quantized articulation language.

Covers the bin quantizers for boxes, joint origins and limits, the 128-entry
joint-axis codebook, canonical ordering of parts and joints, and reading and
writing articulation scripts in both their token form (``<P_k>``, ``<D_k>``,
``<LR_k>``, ``<LT_k>``) and a plain-integer human form.
"""

from __future__ import annotations

import functools
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    BinOutOfRange,
    GraphError,
    GraphInvalid,
    IndexOutOfRange,
    NonUnitVector,
    ScriptSyntaxError,
    TooManyParts,
    UnencodableJoint,
)
from .kinematics import Aabb, ArticulatedObject, Joint, JointKind, Link, build_graph

log = logging.getLogger(__name__)

__all__ = [
    "POS_BINS",
    "ROT_BINS",
    "TRANS_BINS",
    "CODEBOOK_SIZE",
    "QuantBox",
    "QuantJoint",
    "ArticulationScript",
    "AxisCodebook",
    "quantize_box",
    "dequantize_box",
    "quantize_rot_limit",
    "dequantize_rot_limit",
    "quantize_trans_limit",
    "dequantize_trans_limit",
    "quantize_origin",
    "dequantize_origin",
    "build_axis_codebook",
    "encode_axis",
    "encode_object",
    "decode_script",
    "parse_script_text",
    "parse_script",
]

POS_BINS = 128
ROT_BINS = 48
TRANS_BINS = 64
CODEBOOK_SIZE = 128
MAX_PARTS = 128
ROT_RANGE = 2.0 * math.pi
TRANS_RANGE = 2.0

# -- scalar quantizers -------------------------------------------------------------


def _clamp(values, lo, hi, what):
    arr = np.asarray(values, dtype=np.float64)
    clipped = np.clip(arr, lo, hi)
    if np.any(clipped != arr):
        log.warning("%s outside [%g, %g] clamped", what, lo, hi)
    return clipped


def _bin_edge(k):
    """Continuous coordinate of box bin edge ``k``; exact in binary floating point."""
    return np.asarray(k, dtype=np.float64) / 64.0 - 1.0


def _floor_bins(c: np.ndarray) -> np.ndarray:
    """Largest k with edge(k) <= c, i.e. floor((c + 1) / 2 * 128) evaluated exactly."""
    k = np.floor((c + 1.0) * 64.0)
    k = np.where(_bin_edge(k) > c, k - 1, k)
    k = np.where(_bin_edge(k + 1) <= c, k + 1, k)
    return np.clip(k, 0, POS_BINS).astype(np.int64)


def _ceil_bins(c: np.ndarray) -> np.ndarray:
    """Smallest k with edge(k) >= c, i.e. ceil((c + 1) / 2 * 128) evaluated exactly."""
    k = np.ceil((c + 1.0) * 64.0)
    k = np.where(_bin_edge(k) < c, k + 1, k)
    k = np.where(_bin_edge(k - 1) >= c, k - 1, k)
    return np.clip(k, 0, POS_BINS).astype(np.int64)


def _round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def quantize_rot_limit(theta):
    t = _clamp(theta, -ROT_RANGE, ROT_RANGE, "rotation limit")
    out = _round_half_up((t + ROT_RANGE) / (2 * ROT_RANGE) * ROT_BINS)
    return int(out) if out.ndim == 0 else out


def dequantize_rot_limit(bins):
    out = -ROT_RANGE + np.asarray(bins, dtype=np.float64) * (2 * ROT_RANGE / ROT_BINS)
    return float(out) if out.ndim == 0 else out


def quantize_trans_limit(d):
    t = _clamp(d, -TRANS_RANGE, TRANS_RANGE, "translation limit")
    out = _round_half_up((t + TRANS_RANGE) / (2 * TRANS_RANGE) * TRANS_BINS)
    return int(out) if out.ndim == 0 else out


def dequantize_trans_limit(bins):
    out = -TRANS_RANGE + np.asarray(bins, dtype=np.float64) * (2 * TRANS_RANGE / TRANS_BINS)
    return float(out) if out.ndim == 0 else out


def quantize_origin(p) -> tuple[int, int, int]:
    c = _clamp(p, -1.0, 1.0, "joint origin")
    return tuple(int(k) for k in _round_half_up((c + 1.0) / 2.0 * POS_BINS))


def dequantize_origin(bins) -> tuple[float, float, float]:
    return tuple(float(x) for x in _bin_edge(bins))


# -- script values -----------------------------------------------------------------

def _check_bins(values, hi, what):
    for v in values:
        if not (0 <= v <= hi):
            raise BinOutOfRange(f"{what} bin {v} outside [0, {hi}]")


@dataclass(frozen=True)
class QuantBox:
    min_bins: tuple[int, int, int]
    max_bins: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.min_bins)
        hi = tuple(int(v) for v in self.max_bins)
        _check_bins(lo + hi, POS_BINS, "position")
        if any(a > b for a, b in zip(lo, hi)):
            raise BinOutOfRange(f"box min bins {lo} exceed max bins {hi}")
        object.__setattr__(self, "min_bins", lo)
        object.__setattr__(self, "max_bins", hi)

    def sort_key(self):
        (x0, y0, z0), (x1, y1, z1) = self.min_bins, self.max_bins
        return (z0, y0, x0, z1, y1, x1)


def quantize_box(aabb: Aabb) -> QuantBox:
    """Floor the minimum corner and ceil the maximum corner onto 128 bins."""
    lo = _clamp(aabb.lo, -1.0, 1.0, "box coordinate")
    hi = _clamp(aabb.hi, -1.0, 1.0, "box coordinate")
    return QuantBox(tuple(_floor_bins(lo).tolist()), tuple(_ceil_bins(hi).tolist()))


def dequantize_box(q: QuantBox) -> Aabb:
    return Aabb(tuple(_bin_edge(q.min_bins)), tuple(_bin_edge(q.max_bins)))


_LIMIT_HI = {
    JointKind.REVOLUTE: ROT_BINS,
    JointKind.PRISMATIC: TRANS_BINS,
    JointKind.SCREW: TRANS_BINS,
}

_CLASS_NAMES = {
    JointKind.REVOLUTE: "RevoluteJoint",
    JointKind.CONTINUOUS: "ContinuousJoint",
    JointKind.SCREW: "ScrewJoint",
    JointKind.PRISMATIC: "PrismaticJoint",
}
_KIND_BY_CLASS = {v: k for k, v in _CLASS_NAMES.items()}


@dataclass(frozen=True)
class QuantJoint:
    kind: JointKind
    parent: int
    child: int
    axis_code: int
    origin_bins: Optional[tuple[int, int, int]] = None
    limit_bins: Optional[tuple[int, int]] = None

    def __post_init__(self):
        kind = JointKind(self.kind)
        if kind not in _CLASS_NAMES:
            raise UnencodableJoint(f"{kind.value} joints have no script form")
        object.__setattr__(self, "kind", kind)
        _check_bins([self.axis_code], CODEBOOK_SIZE - 1, "direction")
        if kind.has_origin != (self.origin_bins is not None):
            raise ValueError(f"{kind.value} joint origin presence mismatch")
        if kind.has_limit != (self.limit_bins is not None):
            raise ValueError(f"{kind.value} joint limit presence mismatch")
        if self.origin_bins is not None:
            o = tuple(int(v) for v in self.origin_bins)
            _check_bins(o, POS_BINS, "position")
            object.__setattr__(self, "origin_bins", o)
        if self.limit_bins is not None:
            lim = tuple(int(v) for v in self.limit_bins)
            _check_bins(lim, _LIMIT_HI[kind], "rotation" if kind == JointKind.REVOLUTE else "translation")
            object.__setattr__(self, "limit_bins", lim)


@dataclass(frozen=True)
class ArticulationScript:
    boxes: tuple[QuantBox, ...]
    joints: tuple[QuantJoint, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "joints", tuple(self.joints))
        n = len(self.boxes)
        for i, j in enumerate(self.joints):
            for ref in (j.parent, j.child):
                if not 0 <= ref < n:
                    raise IndexOutOfRange(f"joint_{i} references box {ref}; only {n} boxes")

    def render_layout(self, form: str = "token") -> str:
        p = _token_fn(form)
        lines = ["<|layout_start|>"]
        for i, b in enumerate(self.boxes):
            lines += [
                f"    bbox_{i} = BBox(",
                "        " + ", ".join(p("P", v) for v in b.min_bins) + ",",
                "        " + ", ".join(p("P", v) for v in b.max_bins),
                "    )",
            ]
        lines.append("<|layout_end|>")
        return "\n".join(lines)

    def render_articulation(self, form: str = "token") -> str:
        p = _token_fn(form)
        lines = ["<|art_start|>"]
        for i, j in enumerate(self.joints):
            fields = [f"{j.parent}, {j.child}, {p('D', j.axis_code)}"]
            if j.origin_bins is not None:
                fields.append("[" + ", ".join(p("P", v) for v in j.origin_bins) + "]")
            if j.limit_bins is not None:
                tag = "LR" if j.kind == JointKind.REVOLUTE else "LT"
                fields.append("[" + ", ".join(p(tag, v) for v in j.limit_bins) + "]")
            lines.append(f"    joint_{i} = {_CLASS_NAMES[j.kind]}(")
            lines += ["        " + f + "," for f in fields[:-1]]
            lines.append("        " + fields[-1])
            lines.append("    )")
        lines.append("<|art_end|>")
        return "\n".join(lines)

    def render(self, form: str = "token") -> str:
        return self.render_layout(form) + "\n" + self.render_articulation(form) + "\n"


def _token_fn(form):
    if form == "token":
        return lambda tag, v: f"<{tag}_{v}>"
    if form == "human":
        return lambda tag, v: str(v)
    raise ValueError(f"unknown script form {form!r}")


# -- axis codebook -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AxisCodebook:
    entries: np.ndarray
    sources: tuple[str, ...]

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index: int) -> tuple[float, float, float]:
        return tuple(float(x) for x in self.entries[index])

    def encode(self, direction) -> int:
        return encode_axis(direction, self)

    def to_csv(self) -> str:
        rows = ["index,x,y,z,source"]
        for i, (v, s) in enumerate(zip(self.entries, self.sources)):
            rows.append(f"{i},{float(v[0])!r},{float(v[1])!r},{float(v[2])!r},{s}")
        return "\n".join(rows) + "\n"


def _snap(v: np.ndarray) -> np.ndarray:
    v = np.where(np.abs(v) < 1e-12, 0.0, v)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    y = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(1.0 - y * y)
    theta = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(theta), y, r * np.sin(theta)])


def _angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(a @ b.T, -1.0, 1.0))


@functools.lru_cache(maxsize=None)
def build_axis_codebook(per_circle: int = 24, sphere_points: int = 512) -> AxisCodebook:
    """Deterministic 128-direction codebook.

    Entries 0-5 are +X, -X, +Y, -Y, +Z, -Z. The remaining samples of three
    great circles (XY, YZ, XZ planes, ``per_circle`` each, starting at angle 0)
    follow, then farthest-point sampling over a Fibonacci sphere fills the rest,
    measuring distance by angle.
    """
    axes = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                    dtype=np.float64)
    entries = list(axes)
    sources = ["circle-xy", "circle-xy", "circle-xy", "circle-xy", "circle-yz", "circle-yz"]
    a = 2.0 * math.pi * np.arange(per_circle) / per_circle
    c, s, z = np.cos(a), np.sin(a), np.zeros_like(a)
    circles = {
        "circle-xy": np.column_stack([c, s, z]),
        "circle-yz": np.column_stack([z, c, s]),
        "circle-xz": np.column_stack([c, z, s]),
    }
    for tag, pts in circles.items():
        for p in _snap(pts):
            if min(np.abs(np.array(entries) - p).max(axis=1)) > 1e-9:
                entries.append(p)
                sources.append(tag)
    chosen = np.array(entries)
    candidates = fibonacci_sphere(sphere_points)
    min_angle = _angles(candidates, chosen).min(axis=1)
    picked = []
    while len(chosen) + len(picked) < CODEBOOK_SIZE:
        k = int(np.argmax(min_angle))
        picked.append(candidates[k])
        min_angle = np.minimum(min_angle, _angles(candidates, candidates[k:k + 1])[:, 0])
    out = np.concatenate([chosen, np.array(picked).reshape(-1, 3)])
    sources += ["fibonacci"] * len(picked)
    out.setflags(write=False)
    return AxisCodebook(out, tuple(sources))


def encode_axis(direction, codebook: AxisCodebook) -> int:
    """Index of the entry with the largest dot product; ties go to the lowest index."""
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise NonUnitVector(f"axis {d.tolist()} is not unit length")
    return int(np.argmax(codebook.entries @ d))


# -- object <-> script -------------------------------------------------------------

def encode_object(obj: ArticulatedObject, codebook: Optional[AxisCodebook] = None) -> ArticulationScript:
    """Quantize an object and put boxes and joints into canonical order."""
    codebook = codebook or build_axis_codebook()
    if len(obj.links) > MAX_PARTS:
        raise TooManyParts(f"{len(obj.links)} parts exceed the {MAX_PARTS}-part limit")
    warnings = []
    handler = _WarningCollector(warnings)
    log.addHandler(handler)
    try:
        quant = {l.id: quantize_box(l.aabb) for l in obj.links}
        order = sorted(
            obj.links,
            key=lambda l: (quant[l.id].sort_key(), l.aabb.min[::-1], l.aabb.max[::-1],
                           _natural(l.name), l.id),
        )
        index = {l.id: i for i, l in enumerate(order)}
        joints = []
        for j in obj.joints:
            if j.kind == JointKind.FIXED:
                raise UnencodableJoint(f"joint {j.id} is fixed; simplify the object first")
            origin = quantize_origin(j.origin) if j.kind.has_origin else None
            limit = None
            if j.kind == JointKind.REVOLUTE:
                limit = tuple(sorted(quantize_rot_limit(v) for v in j.limit))
            elif j.kind.translational_limit:
                limit = tuple(sorted(quantize_trans_limit(v) for v in j.limit))
            joints.append(QuantJoint(j.kind, index[j.parent], index[j.child],
                                     encode_axis(j.axis, codebook), origin, limit))
    finally:
        log.removeHandler(handler)
    joints.sort(key=lambda q: (q.child, q.parent))
    return ArticulationScript(tuple(quant[l.id] for l in order), tuple(joints), tuple(warnings))


def _natural(name: Optional[str]):
    # "bbox_2" before "bbox_10", so decoded objects keep their script order on ties
    return tuple((0, int(t), "") if t.isdigit() else (1, 0, t)
                 for t in re.split(r"(\d+)", name or ""))


class _WarningCollector(logging.Handler):
    def __init__(self, sink):
        super().__init__(logging.WARNING)
        self.sink = sink

    def emit(self, record):
        self.sink.append(record.getMessage())


def decode_script(script: ArticulationScript, codebook: Optional[AxisCodebook] = None,
                  category: Optional[str] = None) -> ArticulatedObject:
    """Dequantize a script into a validated :class:`ArticulatedObject`."""
    codebook = codebook or build_axis_codebook()
    links = tuple(Link(i, f"bbox_{i}", dequantize_box(b)) for i, b in enumerate(script.boxes))
    joints = []
    for i, q in enumerate(script.joints):
        if q.parent == q.child:
            raise GraphInvalid(f"joint_{i} connects box {q.parent} to itself")
        origin = dequantize_origin(q.origin_bins) if q.origin_bins is not None else None
        limit = None
        if q.kind == JointKind.REVOLUTE:
            limit = tuple(dequantize_rot_limit(b) for b in q.limit_bins)
        elif q.limit_bins is not None:
            limit = tuple(dequantize_trans_limit(b) for b in q.limit_bins)
        joints.append(Joint(i, q.kind, q.parent, q.child, codebook[q.axis_code], origin, limit))
    obj = ArticulatedObject(links, tuple(joints), category)
    try:
        build_graph(obj)
    except GraphError as exc:
        raise GraphInvalid(f"{type(exc).__name__}: {exc}") from exc
    return obj


# -- parsing -----------------------------------------------------------------------

_DELIMS = {
    "layout_s": "LAYOUT_START", "layout_start": "LAYOUT_START",
    "layout_e": "LAYOUT_END", "layout_end": "LAYOUT_END",
    "art_s": "ART_START", "art_start": "ART_START",
    "art_e": "ART_END", "art_end": "ART_END",
}
_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|<\|(?P<delim>[a-z_]+)\|>"
    r"|<(?P<stag>P|D|LR|LT)_(?P<sval>-?\d+)>"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<int>-?\d+)"
    r"|(?P<punct>[=()\[\],])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # DELIM name, "SPECIAL", "IDENT", "INT", or the punctuation char
    text: str
    line: int
    col: int
    tag: Optional[str] = None
    value: Optional[int] = None


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ScriptSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        s = m.group(0)
        if m.group("delim") is not None:
            name = _DELIMS.get(m.group("delim"))
            if name is None:
                raise ScriptSyntaxError(f"unknown delimiter {s!r}", line, col, "a block delimiter")
            toks.append(_Tok(name, s, line, col))
        elif m.group("stag") is not None:
            toks.append(_Tok("SPECIAL", s, line, col, m.group("stag"), int(m.group("sval"))))
        elif m.group("ident") is not None:
            toks.append(_Tok("IDENT", s, line, col))
        elif m.group("int") is not None:
            toks.append(_Tok("INT", s, line, col, value=int(s)))
        elif m.group("punct") is not None:
            toks.append(_Tok(s, s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            line_start = pos + s.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("EOF", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: str):
        t = self.cur
        found = "end of input" if t.kind == "EOF" else repr(t.text)
        raise ScriptSyntaxError(f"unexpected {found}", t.line, t.col, expected)

    def expect(self, kind: str, expected: Optional[str] = None) -> _Tok:
        if self.cur.kind != kind:
            self.fail(expected or repr(kind))
        t = self.cur
        self.i += 1
        return t

    def accept(self, kind: str) -> bool:
        if self.cur.kind == kind:
            self.i += 1
            return True
        return False

    def value(self, tag: str) -> int:
        """A bin slot: either ``<tag_k>`` or a bare integer."""
        t = self.cur
        if t.kind == "SPECIAL" and t.tag == tag:
            self.i += 1
            return t.value
        if t.kind == "INT":
            self.i += 1
            return t.value
        self.fail(f"<{tag}_k> or an integer")

    def integer(self, what: str) -> int:
        return self.expect("INT", what).value

    def indexed_name(self, prefix: str, index: int):
        t = self.expect("IDENT", f"{prefix}{index}")
        m = re.fullmatch(re.escape(prefix) + r"(\d+)", t.text)
        if m is None:
            raise ScriptSyntaxError(f"unexpected name {t.text!r}", t.line, t.col, f"{prefix}{index}")
        if int(m.group(1)) != index:
            raise IndexOutOfRange(f"{t.text} declared at position {index} (line {t.line})")

    def triple(self, tag: str) -> tuple[int, int, int]:
        a = self.value(tag)
        self.expect(",", "','")
        b = self.value(tag)
        self.expect(",", "','")
        c = self.value(tag)
        return (a, b, c)

    def bracket(self, tag: str, n: int) -> tuple:
        self.expect("[", "'['")
        vals = [self.value(tag)]
        for _ in range(n - 1):
            self.expect(",", "','")
            vals.append(self.value(tag))
        self.expect("]", "']'")
        return tuple(vals)

    def script(self):
        self.expect("LAYOUT_START", "<|layout_start|>")
        boxes = []
        while self.cur.kind == "IDENT":
            boxes.append(self.box(len(boxes)))
        self.expect("LAYOUT_END", "a bbox definition or <|layout_end|>")
        joints = []
        if self.accept("ART_START"):
            while self.cur.kind == "IDENT":
                joints.append(self.joint(len(joints)))
            self.expect("ART_END", "a joint definition or <|art_end|>")
        self.expect("EOF", "end of script")
        return boxes, joints

    def box(self, index: int):
        self.indexed_name("bbox_", index)
        self.expect("=", "'='")
        t = self.expect("IDENT", "BBox")
        if t.text != "BBox":
            raise ScriptSyntaxError(f"unexpected {t.text!r}", t.line, t.col, "BBox")
        self.expect("(", "'('")
        lo = self.triple("P")
        self.expect(",", "','")
        hi = self.triple("P")
        self.accept(",")
        self.expect(")", "')'")
        _check_bins(lo + hi, POS_BINS, "position")
        return lo, hi

    def joint(self, index: int):
        self.indexed_name("joint_", index)
        self.expect("=", "'='")
        t = self.expect("IDENT", "a joint class")
        kind = _KIND_BY_CLASS.get(t.text)
        if kind is None:
            raise ScriptSyntaxError(f"unknown joint class {t.text!r}", t.line, t.col,
                                    "/".join(_KIND_BY_CLASS))
        self.expect("(", "'('")
        parent = self.integer("parent box id")
        self.expect(",", "','")
        child = self.integer("child box id")
        self.expect(",", "','")
        axis = self.value("D")
        origin = limit = None
        if kind.has_origin:
            self.expect(",", "','")
            origin = self.bracket("P", 3)
        if kind.has_limit:
            self.expect(",", "','")
            limit = self.bracket("LR" if kind == JointKind.REVOLUTE else "LT", 2)
        self.accept(",")
        self.expect(")", "')'")
        return kind, parent, child, axis, origin, limit


def parse_script_text(text: str) -> ArticulationScript:
    """Parse either rendering into an :class:`ArticulationScript`.

    Raises:
        ScriptSyntaxError: malformed text (with line, column and expectation).
        BinOutOfRange, IndexOutOfRange: well-formed text with invalid values.
    """
    boxes, joints = _Parser(text).script()
    qboxes = [QuantBox(lo, hi) for lo, hi in boxes]
    qjoints = []
    for i, (kind, parent, child, axis, origin, limit) in enumerate(joints):
        for ref in (parent, child):
            if not 0 <= ref < len(qboxes):
                raise IndexOutOfRange(f"joint_{i} references box {ref}; only {len(qboxes)} boxes")
        qjoints.append(QuantJoint(kind, parent, child, axis, origin, limit))
    return ArticulationScript(tuple(qboxes), tuple(qjoints))


def parse_script(text: str, codebook: Optional[AxisCodebook] = None,
                 category: Optional[str] = None) -> ArticulatedObject:
    """Parse script text and dequantize it into an articulated object."""
    return decode_script(parse_script_text(text), codebook, category)
