"""Surface sampling, voxel occupancy, box expansion and box IoU."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateMesh, MeshFormatError, OpenMeshWarning
from .kinematics import Aabb
from .mesh import TriMesh, read_ply, write_ply

__all__ = [
    "PointCloud",
    "GridSpec",
    "VoxelGrid",
    "sample_surface",
    "grid_for_bounds",
    "voxelize",
    "rasterize",
    "expand_boxes",
    "assign_points",
    "point_box_sqdist",
    "aabb_iou",
    "DEFAULT_CLOUD_SIZE",
]

DEFAULT_CLOUD_SIZE = 32768


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if p.shape != n.shape:
            raise ValueError("points and normals differ in shape")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.points)

    def to_ply(self, binary: bool = True) -> bytes:
        return write_ply(self.points, normals=self.normals, binary=binary)

    @classmethod
    def from_ply(cls, data: bytes) -> "PointCloud":
        props, _ = read_ply(data)
        try:
            pts = np.column_stack([props["x"], props["y"], props["z"]])
        except KeyError:
            raise MeshFormatError("PLY point cloud lacks x/y/z") from None
        if all(k in props for k in ("nx", "ny", "nz")):
            nrm = np.column_stack([props["nx"], props["ny"], props["nz"]])
        else:
            nrm = np.zeros_like(pts)
        return cls(pts, nrm)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_ply())

    @classmethod
    def load(cls, path) -> "PointCloud":
        with open(path, "rb") as fh:
            return cls.from_ply(fh.read())


def sample_surface(mesh: TriMesh, n: int = DEFAULT_CLOUD_SIZE, seed=None) -> PointCloud:
    """Area-weighted uniform surface samples with flat (per-face) normals."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateMesh("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s1 = np.sqrt(r1)
    tri = mesh.triangles[face]
    w0, w1, w2 = 1.0 - s1, s1 * (1.0 - r2), s1 * r2
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm)


# -- voxels --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]

    def centers_axis(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    def bounds(self) -> Aabb:
        lo = np.array(self.origin)
        return Aabb(tuple(lo), tuple(lo + np.array(self.dims) * self.spacing))


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    spec: GridSpec
    occupancy: np.ndarray  # bool, shape == spec.dims

    @property
    def origin(self):
        return self.spec.origin

    @property
    def spacing(self):
        return self.spec.spacing

    @property
    def dims(self):
        return self.spec.dims

    def count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def volume(self) -> float:
        return self.count() * self.spec.cell_volume

    def intersection_count(self, other: "VoxelGrid") -> int:
        if self.spec != other.spec:
            raise ValueError("grids differ")
        return int(np.count_nonzero(self.occupancy & other.occupancy))

    def intersection_volume(self, other: "VoxelGrid") -> float:
        return self.intersection_count(other) * self.spec.cell_volume

    def union(self, other: "VoxelGrid") -> "VoxelGrid":
        if self.spec != other.spec:
            raise ValueError("grids differ")
        return VoxelGrid(self.spec, self.occupancy | other.occupancy)


def grid_for_bounds(bounds: Aabb, resolution: int, spacing: float = None) -> GridSpec:
    """Grid covering ``bounds``; ``resolution`` cells along the longest axis."""
    ext = bounds.extent
    if spacing is None:
        if resolution < 4:
            raise ValueError("resolution must be at least 4")
        longest = float(ext.max())
        if not longest > 0:
            raise ValueError("bounds are degenerate")
        spacing = longest / resolution
    dims = tuple(max(1, int(math.ceil(e / spacing - 1e-9))) for e in ext)
    return GridSpec(tuple(float(x) for x in bounds.lo), float(spacing), dims)


# ray-parity columns are nudged off the cell centres so rays avoid mesh edges
_RAY_JITTER = (1.2345678e-4, 2.3456789e-4)


def _interior(spec: GridSpec, mesh: TriMesh) -> np.ndarray:
    nx, ny, nz = spec.dims
    s = spec.spacing
    ox, oy, oz = spec.origin
    jx, jy = _RAY_JITTER[0] * s, _RAY_JITTER[1] * s
    toggles = np.zeros((nx, ny, nz + 1), dtype=np.int32)
    for a, b, c in mesh.triangles:
        # signed doubled area of the xy projection
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if abs(det) < 1e-18:
            continue
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        i0 = max(0, int(math.ceil((lo[0] - ox - jx) / s - 0.5)))
        i1 = min(nx - 1, int(math.floor((hi[0] - ox - jx) / s - 0.5)))
        j0 = max(0, int(math.ceil((lo[1] - oy - jy) / s - 0.5)))
        j1 = min(ny - 1, int(math.floor((hi[1] - oy - jy) / s - 0.5)))
        if i1 < i0 or j1 < j0:
            continue
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        px = ox + (ii + 0.5) * s + jx
        py = oy + (jj + 0.5) * s + jy
        # barycentric coordinates in the projection
        l1 = ((px - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (py - a[1])) / det
        l2 = ((b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1])) / det
        l0 = 1.0 - l1 - l2
        hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not hit.any():
            continue
        z = l0[hit] * a[2] + l1[hit] * b[2] + l2[hit] * c[2]
        k = np.clip(np.ceil((z - oz) / s - 0.5), 0, nz).astype(np.int64)
        hi_, hj = ii[hit], jj[hit]
        np.add.at(toggles, (hi_, hj, np.zeros_like(k)), 1)
        np.add.at(toggles, (hi_, hj, k), -1)
    crossings = np.cumsum(toggles[:, :, :nz], axis=2)
    return (crossings % 2) == 1


def _surface(spec: GridSpec, mesh: TriMesh) -> np.ndarray:
    """Cells whose closed box intersects some triangle (separating-axis test)."""
    dims = np.array(spec.dims)
    s = spec.spacing
    h = 0.5 * s
    o = np.array(spec.origin)
    occ = np.zeros(spec.dims, dtype=bool)
    unit = np.eye(3)
    for tri in mesh.triangles:
        lo = np.floor((tri.min(axis=0) - o) / s).astype(np.int64)
        hi = np.floor((tri.max(axis=0) - o) / s).astype(np.int64)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, dims - 1)
        if np.any(hi < lo):
            continue
        idx = np.stack(np.meshgrid(*[np.arange(l, u + 1) for l, u in zip(lo, hi)],
                                   indexing="ij"), axis=-1).reshape(-1, 3)
        centers = o + (idx + 0.5) * s
        e0, e1, e2 = tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]
        normal = np.cross(e0, -e2)
        keep = np.abs((tri[0] - centers) @ normal) <= h * np.abs(normal).sum() * (1 + 1e-9)
        idx, centers = idx[keep], centers[keep]
        if len(idx) == 0:
            continue
        v = tri[None, :, :] - centers[:, None, :]  # (K, 3, 3)
        ok = np.ones(len(idx), dtype=bool)
        for e in (e0, e1, e2):
            for u in unit:
                axis = np.cross(e, u)
                r = h * np.abs(axis).sum()
                if r == 0:
                    continue
                p = v @ axis
                ok &= ~((p.min(axis=1) > r * (1 + 1e-9)) | (p.max(axis=1) < -r * (1 + 1e-9)))
        idx = idx[ok]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return occ


def rasterize(spec: GridSpec, geometry: Union[TriMesh, np.ndarray], surface: bool = True) -> VoxelGrid:
    """Occupancy of ``geometry`` on a given grid.

    Meshes: a cell is occupied when its centre lies inside the closed mesh
    (ray parity) or, with ``surface=True``, when the surface touches the cell.
    Open meshes fall back to surface cells with an :class:`OpenMeshWarning`.
    Point sets: a cell is occupied when it holds at least one point.
    """
    if isinstance(geometry, TriMesh):
        if len(geometry.faces) == 0:
            return VoxelGrid(spec, np.zeros(spec.dims, dtype=bool))
        closed = geometry.is_closed()
        if not closed:
            warnings.warn("mesh is open; using surface occupancy only", OpenMeshWarning, stacklevel=2)
            return VoxelGrid(spec, _surface(spec, geometry))
        occ = _interior(spec, geometry)
        if surface:
            occ |= _surface(spec, geometry)
        return VoxelGrid(spec, occ)
    pts = np.asarray(geometry, dtype=np.float64).reshape(-1, 3)
    occ = np.zeros(spec.dims, dtype=bool)
    if len(pts):
        idx = np.floor((pts - np.array(spec.origin)) / spec.spacing).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(spec.dims)), axis=1)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(spec, occ)


def voxelize(geometry, bounds: Aabb, resolution: int = 64, surface: bool = True) -> VoxelGrid:
    """Voxelize a mesh or point set over ``bounds`` (``resolution`` cells on the longest axis)."""
    return rasterize(grid_for_bounds(bounds, resolution), geometry, surface=surface)


# -- boxes ---------------------------------------------------------------------------

def _box_arrays(boxes: Sequence[Aabb]):
    lo = np.array([b.min for b in boxes], dtype=np.float64).reshape(-1, 3)
    hi = np.array([b.max for b in boxes], dtype=np.float64).reshape(-1, 3)
    return lo, hi


def point_box_sqdist(points, boxes: Sequence[Aabb]) -> np.ndarray:
    """(N, B) squared Euclidean distance from each point to each box (0 inside)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = _box_arrays(boxes)
    d = np.maximum(np.maximum(lo[None] - p[:, None], p[:, None] - hi[None]), 0.0)
    return np.einsum("nbk,nbk->nb", d, d)


def assign_points(points, boxes: Sequence[Aabb]) -> np.ndarray:
    """Box index for every point outside all boxes, ``-1`` for covered points.

    Nearest box by squared distance, ties to the lower index.
    """
    d = point_box_sqdist(points, boxes)
    out = np.argmin(d, axis=1)
    covered = np.any(d == 0.0, axis=1)
    out[covered] = -1
    return out


def expand_boxes(cloud, boxes: Sequence[Aabb]) -> list[Aabb]:
    """Grow boxes just enough that every point is covered.

    Each uncovered point joins its nearest box, and each box becomes the
    bounding box of itself and its newly assigned points.
    """
    if not boxes:
        raise ValueError("need at least one box")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    owner = assign_points(pts, boxes)
    out = []
    for b, box in enumerate(boxes):
        mine = pts[owner == b]
        if len(mine):
            out.append(box.union(Aabb.from_points(mine)))
        else:
            out.append(box)
    return out


def aabb_iou(a: Aabb, b: Aabb) -> float:
    """Volume IoU of two boxes.

    When both boxes have zero volume the result is 1 for identical boxes and 0
    otherwise.
    """
    va, vb = a.volume(), b.volume()
    if va == 0 and vb == 0:
        return 1.0 if (a.min == b.min and a.max == b.max) else 0.0
    inter = np.clip(np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo), 0.0, None)
    vi = float(np.prod(inter))
    union = va + vb - vi
    return float(min(1.0, max(0.0, vi / union)))
