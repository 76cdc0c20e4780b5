"""Collision-sweep correction of joint limits.

Each limited joint is articulated through its predicted range while all other
joints stay at zero. The overlap volume between the moving subtree and the
remaining static parts is sampled on a voxel grid; the first sharp rise of
that volume on either side of the rest pose brackets the contact, which is
then pinned down by bisection on a finer local grid.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .errors import ArtkitError, MissingGeometry, NoLimit
from .geometry import GridSpec, VoxelGrid, grid_for_bounds, rasterize
from .kinematics import Aabb, ArticulatedObject, JointKind, pose_part, subtree_links
from .mesh import TriMesh, box_mesh

log = logging.getLogger(__name__)

__all__ = [
    "RefineConfig",
    "SweepProfile",
    "RefinedLimit",
    "load_config",
    "sweep",
    "detect_contact",
    "refine_limit",
    "refine_all",
    "collision_volume",
    "report_records",
]


@dataclass(frozen=True)
class RefineConfig:
    steps: int = 32
    grid_resolution: int = 64
    spike_tau: float = 0.05
    volume_floor: float = 0.01
    rot_tolerance: float = math.radians(0.25)
    trans_tolerance: float = 0.001
    fine_factor: int = 8
    rest_factor: float = 5.0
    jobs: int = 1

    def tolerance_for(self, kind: JointKind) -> float:
        return self.rot_tolerance if kind == JointKind.REVOLUTE else self.trans_tolerance


def load_config(text: str, base: RefineConfig = RefineConfig()) -> RefineConfig:
    """Read overrides from JSON or ``key = value`` lines (``#`` starts a comment)."""
    text = text.strip()
    if text.startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key = value")
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
    types = {f.name: f.type for f in fields(RefineConfig)}
    changes = {}
    for k, v in raw.items():
        if k not in types:
            raise ValueError(f"unknown refine option {k!r}")
        changes[k] = int(v) if types[k] in ("int", int) else float(v)
    return replace(base, **changes)


@dataclass(frozen=True)
class SweepProfile:
    joint_id: int
    samples: tuple[tuple[float, float], ...]
    step: float

    @property
    def q(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def volumes(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])


@dataclass(frozen=True)
class RefinedLimit:
    joint_id: int
    original: tuple[float, float]
    corrected: tuple[float, float]
    contact_found: bool = False
    contact_q: Optional[float] = None
    contacts: tuple[float, ...] = ()
    diagnostics: tuple[str, ...] = ()
    error: Optional[str] = None


# -- scene ---------------------------------------------------------------------------

@dataclass
class _Part:
    mesh: TriMesh
    thin: bool


class _Scene:
    """Geometry of one joint's moving subtree against everything else."""

    def __init__(self, obj: ArticulatedObject, joint_id: int, config: RefineConfig):
        self.obj = obj
        self.joint = obj.joint(joint_id)
        if not self.joint.kind.has_limit:
            raise NoLimit(f"joint {joint_id} ({self.joint.kind.value}) has no finite limit")
        self.config = config
        self.diagnostics: list[str] = []
        moving = set(subtree_links(obj, self.joint.child))
        whole = obj.union_aabb(prefer_mesh=False)
        self.spacing = float(whole.extent.max()) / config.grid_resolution
        self.child: list[_Part] = []
        self.static: list[_Part] = []
        for l in obj.links:
            mesh = l.mesh
            if mesh is None or len(mesh.faces) == 0:
                if l.aabb.volume() <= 0:
                    continue
                mesh = box_mesh(l.aabb.lo, l.aabb.hi)
                self.diagnostics.append(f"link {l.id} has no mesh; using its box as a solid proxy")
            part = _Part(mesh, self._is_thin(mesh))
            (self.child if l.id in moving else self.static).append(part)
        self.child_volume = sum(p.mesh.volume() for p in self.child)
        if not self.child:
            raise MissingGeometry(f"joint {joint_id}: moving parts have no geometry")
        if self.child_volume <= 0:
            # open meshes: fall back to voxel volume at rest
            self.child_volume = sum(self._own_grid(p.mesh, True).volume() for p in self.child)
        if self.child_volume <= 0:
            raise MissingGeometry(f"joint {joint_id}: moving parts have zero volume")
        self.static_bounds = None
        if self.static:
            verts = np.concatenate([p.mesh.vertices for p in self.static])
            self.static_bounds = Aabb.from_points(verts).inflate(self.spacing)
            self.spec = grid_for_bounds(self.static_bounds, 0, spacing=self.spacing)
            self.static_occ = self._raster(self.spec, self.static)

    def _own_grid(self, mesh: TriMesh, surface: bool) -> VoxelGrid:
        box = Aabb.from_points(mesh.vertices).inflate(self.spacing)
        return rasterize(grid_for_bounds(box, 0, spacing=self.spacing), mesh, surface=surface)

    def _is_thin(self, mesh: TriMesh) -> bool:
        if not mesh.is_closed():
            return True
        return self._own_grid(mesh, surface=False).count() == 0

    @staticmethod
    def _raster(spec: GridSpec, parts, transform=None) -> np.ndarray:
        occ = np.zeros(spec.dims, dtype=bool)
        for p in parts:
            mesh = p.mesh
            if transform is not None:
                mesh = mesh.transformed(transform.rotation, transform.translation)
            occ |= rasterize(spec, mesh, surface=p.thin).occupancy
        return occ

    def volume(self, q: float, spec: GridSpec = None, static_occ: np.ndarray = None) -> float:
        if self.static_bounds is None:
            return 0.0
        spec = spec or self.spec
        static_occ = self.static_occ if static_occ is None else static_occ
        moved = self._raster(spec, self.child, pose_part(self.obj, self.joint.id, q))
        return int(np.count_nonzero(moved & static_occ)) * spec.cell_volume

    def overlap_cells(self, q: float) -> np.ndarray:
        moved = self._raster(self.spec, self.child, pose_part(self.obj, self.joint.id, q))
        return np.argwhere(moved & self.static_occ)

    def fine_region(self, q_hit: float):
        """Local fine grid around the overlap seen at ``q_hit``."""
        cells = self.overlap_cells(q_hit)
        if len(cells) == 0:
            return None
        o = np.array(self.spec.origin)
        lo = o + (cells.min(axis=0) - 2) * self.spacing
        hi = o + (cells.max(axis=0) + 3) * self.spacing
        lo = np.maximum(lo, self.static_bounds.lo)
        hi = np.minimum(hi, self.static_bounds.hi)
        fine = self.spacing / max(1, self.config.fine_factor)
        spec = grid_for_bounds(Aabb(tuple(lo), tuple(hi)), 0, spacing=fine)
        return spec, self._raster(spec, self.static)


def collision_volume(obj: ArticulatedObject, joint_id: int, q: float,
                     config: RefineConfig = RefineConfig()) -> float:
    """Overlap volume between a joint's moving subtree at ``q`` and the static parts."""
    return _Scene(obj, joint_id, config).volume(q)


def sweep(obj: ArticulatedObject, joint_id: int, steps: int = 32, grid_resolution: int = 64,
          config: RefineConfig = None, _scene: _Scene = None) -> SweepProfile:
    """Collision volume at ``steps`` evenly spaced values across the joint limit."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    config = config or RefineConfig(steps=steps, grid_resolution=grid_resolution)
    scene = _scene or _Scene(obj, joint_id, replace(config, grid_resolution=grid_resolution))
    lo, hi = scene.joint.ordered_limit()
    qs = np.linspace(lo, hi, steps)
    samples = tuple((float(q), scene.volume(float(q))) for q in qs)
    step = (hi - lo) / (steps - 1)
    return SweepProfile(joint_id, samples, step)


def _start_index(q: np.ndarray) -> int:
    if q[0] <= 0 <= q[-1]:
        return int(np.argmin(np.abs(q)))
    return 0 if q[0] > 0 else len(q) - 1


def detect_contact(profile: SweepProfile, child_volume: float, tau: float = 0.05,
                   floor: float = 0.01, direction: int = 1) -> Optional[tuple[float, float]]:
    """First coarse window, scanning away from the rest pose, that holds a volume spike.

    A window ``(q_a, q_b)`` qualifies when the finite-difference slope exceeds
    ``tau * child_volume / step`` and the volume at ``q_b`` exceeds
    ``floor * child_volume``. ``q_a`` is the side nearer the rest pose.
    """
    q, v = profile.q, profile.volumes
    if len(q) < 3:
        raise ValueError("profile needs at least 3 samples")
    if profile.step <= 0:
        return None
    i = _start_index(q)
    rate = tau * child_volume / profile.step
    while 0 <= i + direction < len(q):
        j = i + direction
        slope = (v[j] - v[i]) / abs(q[j] - q[i])
        if slope > rate and v[j] > floor * child_volume:
            return float(q[i]), float(q[j])
        i = j
    return None


def _refine_side(scene: _Scene, profile: SweepProfile, direction: int, tol: float):
    """Contact value on one side of the rest pose, or ``None``."""
    cfg = scene.config
    cv = scene.child_volume
    window = detect_contact(profile, cv, cfg.spike_tau, cfg.volume_floor, direction)
    if window is None:
        return None
    q_a, q_b = window
    region = scene.fine_region(q_b)
    if region is None:
        def collides(q):
            return scene.volume(q) > cfg.volume_floor * cv
    else:
        spec, static_occ = region

        def collides(q):
            return scene.volume(q, spec, static_occ) > cfg.volume_floor * cv

    qs = profile.q
    start = float(qs[_start_index(qs)])
    # the fine predicate may disagree with the coarse one at the window ends
    while collides(q_a) and (q_a - start) * direction > 0:
        q_b = q_a
        q_a = max(start, q_a - profile.step) if direction > 0 else min(start, q_a + profile.step)
    if collides(q_a):
        return q_a
    end = float(qs[-1] if direction > 0 else qs[0])
    while not collides(q_b):
        if q_b == end:
            return None
        q_a = q_b
        q_b = min(end, q_b + profile.step) if direction > 0 else max(end, q_b - profile.step)
    while abs(q_b - q_a) > tol:
        mid = 0.5 * (q_a + q_b)
        if collides(mid):
            q_b = mid
        else:
            q_a = mid
    return q_b


def refine_limit(obj: ArticulatedObject, joint_id: int, tolerance: float = None,
                 config: RefineConfig = RefineConfig()) -> RefinedLimit:
    """Shrink one joint's limit to the collision-free range around the rest pose."""
    scene = _Scene(obj, joint_id, config)
    joint = scene.joint
    tol = config.tolerance_for(joint.kind) if tolerance is None else tolerance
    original = joint.limit
    lo, hi = joint.ordered_limit()
    diagnostics = list(scene.diagnostics)
    profile = sweep(obj, joint_id, config.steps, config.grid_resolution, config, _scene=scene)

    rest = 0.0 if lo <= 0 <= hi else (lo if lo > 0 else hi)
    rest_volume = scene.volume(rest)
    if rest_volume > config.rest_factor * config.volume_floor * scene.child_volume:
        diagnostics.append(
            f"rest pose collides: overlap {rest_volume:.3g} is "
            f"{rest_volume / scene.child_volume:.1%} of the moving volume")

    new_lo, new_hi = lo, hi
    contacts = []
    upper = _refine_side(scene, profile, +1, tol) if hi > rest else None
    if upper is not None:
        contacts.append(upper)
        new_hi = min(hi, max(upper - tol, rest))
    lower = _refine_side(scene, profile, -1, tol) if lo < rest else None
    if lower is not None:
        contacts.append(lower)
        new_lo = max(lo, min(lower + tol, rest))
    new_lo, new_hi = min(new_lo, new_hi), max(new_lo, new_hi)
    corrected = (new_lo, new_hi) if original[0] <= original[1] else (new_hi, new_lo)
    return RefinedLimit(
        joint_id, original, corrected, bool(contacts),
        contacts[0] if contacts else None, tuple(contacts), tuple(diagnostics))


def refine_all(obj: ArticulatedObject, config: RefineConfig = RefineConfig()
               ) -> tuple[ArticulatedObject, list[RefinedLimit]]:
    """Refine every limited joint independently; per-joint failures are recorded, not raised."""
    targets = [j for j in obj.joints if j.kind.has_limit]

    def work(joint):
        try:
            return refine_limit(obj, joint.id, config=config)
        except ArtkitError as exc:
            log.warning("joint %s not refined: %s", joint.id, exc)
            return RefinedLimit(joint.id, joint.limit, joint.limit,
                                error=f"{type(exc).__name__}: {exc}")

    if config.jobs > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(work, targets))
    else:
        results = [work(j) for j in targets]
    by_id = {r.joint_id: r for r in results}
    joints = tuple(replace(j, limit=by_id[j.id].corrected) if j.id in by_id else j
                   for j in obj.joints)
    return obj.replace(joints=joints), results


def report_records(results) -> list[dict]:
    out = []
    for r in results:
        d = asdict(r)
        d["original"] = list(r.original)
        d["corrected"] = list(r.corrected)
        d["contacts"] = list(r.contacts)
        d["diagnostics"] = list(r.diagnostics)
        out.append(d)
    return out
