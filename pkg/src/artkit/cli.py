"""Command-line entry point: ``artkit <subcommand> ...``.

Every flag can also be supplied through an ``ARTKIT_<FLAG>`` environment
variable (dashes become underscores), e.g. ``ARTKIT_SEED=7`` or
``ARTKIT_GRID_RES=96``. Command-line values win over the environment.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .assets import ingest_urdf, load_asset, save_asset
from .codec import build_axis_codebook, encode_object, parse_script
from .corpus import (
    CorpusEntry,
    FilterPolicy,
    apply_augmentation,
    assign_tasks,
    dataset_stats,
    emit_sample,
    filter_object,
    load_policy,
    object_rng,
    sample_augmentation,
)
from .errors import ArtkitError, CategoryMismatch, IoFailure, XmlMalformed
from .evaluate import UP_AXIS_MAPS, evaluate
from .geometry import PointCloud, expand_boxes, sample_surface
from .mesh import box_mesh, concatenate
from .refine import RefineConfig, load_config, refine_all, report_records

log = logging.getLogger("artkit")

ENV_PREFIX = "ARTKIT_"


def _env(name: str, default=None, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    return cast(raw)


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--up-axis", choices=sorted(UP_AXIS_MAPS), default=_env("up-axis", "identity"))
    p.add_argument("--grid-res", type=int, default=_env("grid-res", 64, int))
    p.add_argument("--jobs", type=int, default=_env("jobs", 1, int))
    p.add_argument("--out", default=_env("out"))
    p.add_argument("-v", "--verbose", action="count", default=_env("verbose", 0, int))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="artkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"artkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="URDF -> normalized asset")
    p.add_argument("urdf")
    p.add_argument("--category", default=_env("category"))

    p = sub.add_parser("encode", parents=[common], help="asset -> articulation script")
    p.add_argument("asset")
    p.add_argument("--form", choices=("token", "human"), default=_env("form", "token"))

    p = sub.add_parser("decode", parents=[common], help="articulation script -> asset")
    p.add_argument("script")
    p.add_argument("--cloud", default=_env("cloud"), help="PLY point cloud for box expansion")
    p.add_argument("--category", default=_env("category"))

    p = sub.add_parser("refine", parents=[common], help="collision-sweep joint-limit correction")
    p.add_argument("asset")
    p.add_argument("--config", default=_env("config"))
    p.add_argument("--report", default=_env("report"))

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("manifest")

    p = sub.add_parser("corpus", parents=[common], help="build the training corpus")
    p.add_argument("dataset_dir")
    p.add_argument("--policy", default=_env("policy"))
    p.add_argument("--points", type=int, default=_env("points", 32768, int))

    sub.add_parser("codebook-dump", parents=[common], help="write the axis codebook as CSV")
    return parser


def _require_out(args) -> Path:
    if not args.out:
        raise IoFailure("--out is required for this command")
    return Path(args.out)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- subcommands ---------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _require_out(args)
    try:
        obj, transform, warnings = ingest_urdf(args.urdf, args.category)
    except XmlMalformed as exc:
        where = f"{args.urdf}:{exc.line}" if exc.line else args.urdf
        raise XmlMalformed(f"{where}: {exc}", exc.line, exc.column) from None
    for w in warnings:
        log.warning("%s: %s", args.urdf, w)
    save_asset(obj, out, {"normalization": transform.to_dict(), "source_urdf": str(args.urdf)})
    print(f"{out}: {len(obj.links)} links, {len(obj.joints)} joints")
    return 0


def cmd_encode(args) -> int:
    obj, _ = load_asset(args.asset)
    script = encode_object(obj, build_axis_codebook())
    for w in script.warnings:
        log.warning("%s: %s", args.asset, w)
    text = script.render(args.form)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_decode(args) -> int:
    out = _require_out(args)
    try:
        text = Path(args.script).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {args.script}: {exc}") from exc
    obj = parse_script(text, build_axis_codebook(), args.category)
    if args.cloud:
        cloud = PointCloud.load(args.cloud)
        boxes = expand_boxes(cloud, [l.aabb for l in obj.links])
        obj = obj.replace(links=tuple(dataclasses.replace(l, aabb=b)
                                      for l, b in zip(obj.links, boxes)))
    save_asset(obj, out, {"decoded_from": str(args.script)})
    print(f"{out}: {len(obj.links)} links, {len(obj.joints)} joints")
    return 0


def cmd_refine(args) -> int:
    out = _require_out(args)
    config = RefineConfig(grid_resolution=args.grid_res, jobs=args.jobs)
    if args.config:
        config = load_config(Path(args.config).read_text(encoding="utf-8"), config)
    obj, meta = load_asset(args.asset)
    if any(l.mesh is None for l in obj.links if l.aabb.volume() > 0):
        log.warning("some links have no mesh; their boxes are used as solid proxies")
    refined, results = refine_all(obj, config)
    for r in results:
        for d in r.diagnostics:
            log.warning("joint %d: %s", r.joint_id, d)
    save_asset(refined, out, {**meta, "refine_config": dataclasses.asdict(config)})
    report = Path(args.report) if args.report else out.with_name(out.stem + ".report.json")
    _write_text(report, json.dumps({"joints": report_records(results)}, indent=2) + "\n")
    changed = sum(1 for r in results if r.corrected != r.original)
    print(f"{out}: {changed} of {len(results)} limits corrected; report {report}")
    return 0


def _read_manifest(path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return {str(k): str(v) for k, v in json.loads(text).items()}
    rows = csv.reader(io.StringIO(text))
    out = {}
    for row in rows:
        if not row or row[0].startswith("#") or row[0] == "id":
            continue
        out[row[0].strip()] = row[1].strip()
    return out


def _load_any(directory: Path, object_id: str):
    for ext in (".urdf", ".txt"):
        p = directory / f"{object_id}{ext}"
        if p.exists():
            if ext == ".urdf":
                return load_asset(p)[0]
            return parse_script(p.read_text(encoding="utf-8"), build_axis_codebook())
    raise CategoryMismatch(f"object {object_id!r} listed in the manifest has no file in {directory}")


def cmd_eval(args) -> int:
    out = _require_out(args)
    manifest = _read_manifest(args.manifest)
    ids = sorted(manifest)
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    for d in (pred_dir, gt_dir):
        listed = {p.stem for p in d.iterdir() if p.suffix in (".urdf", ".txt")}
        extra = sorted(listed - set(ids))
        if extra:
            raise CategoryMismatch(f"{d} holds objects missing from the manifest: {extra}")
    preds = [_load_any(pred_dir, i) for i in ids]
    gts = [_load_any(gt_dir, i).replace(category=None) for i in ids]
    report = evaluate(preds, gts, [manifest[i] for i in ids], ids, args.up_axis)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _write_text(out / "report.txt", report.table())
    sys.stdout.write(report.table())
    return 0


def _corpus_sources(dataset_dir: Path):
    """Yield ``(object_id, urdf_path, meta)`` sorted by object id."""
    found = []
    for urdf in sorted(dataset_dir.rglob("*.urdf")):
        rel = urdf.relative_to(dataset_dir)
        object_id = rel.parts[0] if len(rel.parts) > 1 else urdf.stem
        meta = {}
        for cand in (urdf.parent / "meta.json", urdf.with_name(urdf.stem + ".meta.json")):
            if cand.exists():
                meta = json.loads(cand.read_text(encoding="utf-8"))
                break
        found.append((object_id, urdf, meta))
    return sorted(found, key=lambda t: t[0])


def _object_cloud(obj, n: int, rng) -> PointCloud:
    meshes = [l.mesh if l.mesh is not None else box_mesh(l.aabb.lo, l.aabb.hi)
              for l in obj.links if l.mesh is not None or l.aabb.volume() > 0]
    return sample_surface(concatenate(meshes), n, rng)


def cmd_corpus(args) -> int:
    out = _require_out(args)
    policy = FilterPolicy()
    if args.policy:
        policy = load_policy(Path(args.policy).read_text(encoding="utf-8"))
    sources = _corpus_sources(Path(args.dataset_dir))
    codebook = build_axis_codebook()

    def work(item):
        object_id, urdf, meta = item
        try:
            obj, _, _ = ingest_urdf(urdf, meta.get("category"))
        except ArtkitError as exc:
            return object_id, None, f"{type(exc).__name__}: {exc}"
        decision = filter_object(obj, policy)
        if not decision.keep:
            return object_id, None, ",".join(decision.reasons)
        rng = object_rng(args.seed, object_id)
        params = sample_augmentation(rng)
        aug = apply_augmentation(decision.object, params)
        cloud = _object_cloud(aug, args.points, rng)
        entry = CorpusEntry(object_id, aug, meta.get("source", "unknown"))
        return object_id, (entry, cloud, params), None

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, sources))
    else:
        results = [work(s) for s in sources]
    results.sort(key=lambda r: r[0])
    kept = [(oid, payload) for oid, payload, _ in results if payload is not None]
    dropped = {oid: why for oid, payload, why in results if payload is None}
    tasks = assign_tasks(len(kept), args.seed)
    (out / "pcd").mkdir(parents=True, exist_ok=True)
    lines = []
    for (oid, (entry, cloud, _params)), task in zip(kept, tasks):
        rel = f"pcd/{oid}.ply"
        cloud.save(out / rel)
        lines.append(emit_sample(entry.object, task, codebook, rel).to_json())
    _write_text(out / "corpus.jsonl", "".join(l + "\n" for l in lines))
    stats = dataset_stats(entry for _, (entry, _, _) in kept)
    stats["dropped"] = dict(sorted(dropped.items()))
    stats["tasks"] = {str(t): tasks.count(t) for t in (1, 2, 3)}
    _write_text(out / "stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(f"{out}: {len(kept)} samples, {len(dropped)} dropped")
    return 0


def cmd_codebook_dump(args) -> int:
    text = build_axis_codebook().to_csv()
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "corpus": cmd_corpus,
    "codebook-dump": cmd_codebook_dump,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    effective = {k: v for k, v in vars(args).items()}
    print("config: " + json.dumps(effective, sort_keys=True), file=sys.stderr)
    np.seterr(invalid="ignore")
    try:
        return COMMANDS[args.command](args)
    except ArtkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: IoFailure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
