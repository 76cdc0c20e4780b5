"""On-disk assets: URDF with OBJ meshes plus a JSON sidecar for metadata."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Optional

from .errors import IoFailure
from .kinematics import ArticulatedObject, Link
from .mesh import box_mesh, load_mesh, save_mesh
from .urdf import emit_urdf, globalize, normalize, parse_urdf, simplify

__all__ = ["ingest_urdf", "ingest_text", "save_asset", "load_asset", "meta_path", "file_resolver"]


def meta_path(urdf_path) -> Path:
    p = Path(urdf_path)
    return p.with_name(p.stem + ".meta.json")


def file_resolver(base_dir):
    """Resolve mesh filenames relative to ``base_dir``; ``package://`` prefixes are stripped."""
    base = Path(base_dir)

    def resolve(filename: str):
        name = re.sub(r"^(package|file)://", "", filename)
        path = Path(name) if os.path.isabs(name) else base / name
        if not path.exists():
            path = base / Path(name).name
        return load_mesh(path)

    return resolve


def ingest_text(xml_text: str, base_dir=".", category: Optional[str] = None):
    """Parse, globalize, simplify and normalize a URDF document.

    Returns ``(object, transform, warnings)``.
    """
    model = parse_urdf(xml_text, file_resolver(base_dir))
    obj = simplify(globalize(model, category))
    obj, transform = normalize(obj)
    return obj, transform, list(model.warnings)


def ingest_urdf(path, category: Optional[str] = None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return ingest_text(text, path.parent, category)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "link"


def save_asset(obj: ArticulatedObject, urdf_path, meta: Optional[dict] = None) -> Path:
    """Write ``urdf_path``, its meshes under ``<stem>_meshes/`` and the sidecar file.

    Links without a mesh but with a non-empty box are written as box meshes so
    the URDF alone carries all geometry.
    """
    urdf_path = Path(urdf_path)
    urdf_path.parent.mkdir(parents=True, exist_ok=True)
    mesh_dir = urdf_path.parent / f"{urdf_path.stem}_meshes"
    used = set()

    def writer(link: Link):
        mesh = link.mesh
        if mesh is None:
            if link.aabb.volume() <= 0:
                return None
            mesh = box_mesh(link.aabb.lo, link.aabb.hi)
        name = _safe(link.name or f"link_{link.id}")
        while name in used:
            name += "_"
        used.add(name)
        mesh_dir.mkdir(exist_ok=True)
        save_mesh(mesh, mesh_dir / f"{name}.obj")
        return f"{mesh_dir.name}/{name}.obj"

    try:
        urdf_path.write_text(emit_urdf(obj, writer), encoding="utf-8")
        meta = dict(meta or {})
        meta.setdefault("category", obj.category)
        meta_path(urdf_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write asset {urdf_path}: {exc}") from exc
    return urdf_path


def load_asset(urdf_path) -> tuple[ArticulatedObject, dict]:
    """Read an asset written by :func:`save_asset` (or any URDF in the supported subset)."""
    urdf_path = Path(urdf_path)
    try:
        text = urdf_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {urdf_path}: {exc}") from exc
    meta = {}
    mp = meta_path(urdf_path)
    if mp.exists():
        meta = json.loads(mp.read_text(encoding="utf-8"))
    model = parse_urdf(text, file_resolver(urdf_path.parent))
    obj = simplify(globalize(model, meta.get("category")))
    return obj, meta
