"""Command-line entry points: synth, decode, refine, eval.

Exit codes: 0 success, 2 configuration error (bad JSON, bad values),
3 I/O error (missing or unreadable files). All randomness is seeded from
the inputs, so rerunning a command with identical inputs reproduces its
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

from . import __version__
from .camera import load_cameras
from .evaluation import albedo_rmse, geometry_report, illumination_rmse
from .io import read_pfm, read_ply, write_ply
from .mesh import TriMesh
from .optimizer import Stage, StageSchedule, run_pipeline
from .polarimetry import MosaicPattern, demosaic, derive_planes
from .shading import Illumination, load_illuminations, save_illuminations
from .synth import SyntheticScene, load_views, save_dataset

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(Exception):
    pass


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    scene = SyntheticScene() if args.scene is None else SyntheticScene.from_dict(_load_json(args.scene))
    if args.seed is not None:
        scene.seed = args.seed
    save_dataset(scene, args.out_dir)
    print(f"wrote dataset to {args.out_dir}")
    return EXIT_OK


def cmd_decode(args) -> int:
    pattern = MosaicPattern(_load_json(args.pattern))
    raws = sorted(f for f in os.listdir(args.raw_dir) if f.endswith(".pfm"))
    if not raws:
        raise FileNotFoundError(f"no .pfm raw mosaics in {args.raw_dir}")
    for i, name in enumerate(raws):
        raw = read_pfm(os.path.join(args.raw_dir, name))
        if raw.ndim != 2:
            raise ConfigError(f"{name}: raw mosaic must be single-channel")
        imgset = derive_planes(demosaic(raw, pattern))
        imgset.save(os.path.join(args.out_dir, "views", f"view_{i:03d}"))
    print(f"decoded {len(raws)} view(s) to {args.out_dir}")
    return EXIT_OK


def _schedule_from_config(cfg: dict, args) -> StageSchedule:
    solver = cfg.get("solver", {})
    stages = []
    for s in cfg.get("stages", []):
        stages.append(Stage(
            tau1=s.get("tau1", 60.0), tau2=s.get("tau2", 0.1), tau3=s.get("tau3", 2.0),
            t=s.get("t", 2.2), k=s.get("k", 0.5),
            max_iterations=s.get("max_iterations", solver.get("max_iterations", 100)),
            convergence_tol=s.get("convergence_tol", solver.get("tol", 1e-6))))
    schedule = StageSchedule(stages) if stages else StageSchedule.default()
    if args.tau1 is not None:
        for s in schedule.stages:
            s.tau1 = args.tau1
    if args.max_iterations is not None:
        for s in schedule.stages:
            s.max_iterations = args.max_iterations
    return schedule


def cmd_refine(args) -> int:
    cfg = _load_json(args.config)
    paths = cfg.get("paths", {})
    base = os.path.dirname(os.path.abspath(args.config))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        images_dir = resolve(paths["images"])
        cameras_path = resolve(paths["cameras"])
        mesh_path = resolve(paths["initial_mesh"])
    except KeyError as e:
        raise ConfigError(f"config paths section missing {e}")
    out_dir = resolve(args.output_dir or paths.get("output_dir", "output"))

    cameras = load_cameras(cameras_path)
    verts, faces, albedo, _ = read_ply(mesh_path)
    mesh = TriMesh(verts, faces, albedo=albedo)
    # accept either a dataset root (containing views/) or the views dir itself
    root = images_dir if os.path.isdir(os.path.join(images_dir, "views")) \
        else os.path.dirname(images_dir)
    image_sets = load_views(root)
    if len(image_sets) != len(cameras):
        raise ConfigError(f"{len(image_sets)} views but {len(cameras)} cameras")

    schedule = _schedule_from_config(cfg, args)
    max_px = cfg.get("subdivision", {}).get("max_pixel_area", 16.0)
    os.makedirs(out_dir, exist_ok=True)
    refined, state, report = run_pipeline(
        mesh, cameras, image_sets, schedule=schedule, max_pixel_area=max_px,
        use_min=not args.use_int, use_dop_weight=not args.no_dop_weight,
        subdivide=not args.no_subdivide,
        jsonl_path=os.path.join(out_dir, "report.jsonl"))

    ply_path = os.path.join(out_dir, "refined.ply")
    illum_path = os.path.join(out_dir, "illuminations.json")
    write_ply(ply_path, refined.vertices, refined.faces, albedo=refined.albedo)
    save_illuminations(illum_path, [Illumination(row[:9], row[9:]) for row in state.illum])

    manifest = {
        "version": __version__,
        "config_sha256": _sha256(args.config),
        "inputs": {p: _sha256(p) for p in (cameras_path, mesh_path)},
        "overrides": {"tau1": args.tau1, "use_int": args.use_int,
                      "no_dop_weight": args.no_dop_weight},
        "stages": report.to_dict()["stages"],
        "outputs": {"mesh": ply_path, "illuminations": illum_path},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"refined mesh written to {ply_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est_v = read_ply(args.est)[0]
    gt_v = read_ply(args.gt)[0]
    rep = geometry_report(est_v, gt_v)
    out = rep.to_dict()
    if args.albedo:
        ev, ef, ea, _ = read_ply(args.est)
        gv, gf, ga, _ = read_ply(args.gt)
        if ea is None or ga is None:
            raise ConfigError("--albedo requires albedo in both PLY files")
        cams = load_cameras(args.albedo)
        out["albedo_rmse"] = albedo_rmse(TriMesh(ev, ef), ea, TriMesh(gv, gf), ga, cams)
    if args.illum_est and args.illum_gt:
        out["illumination_rmse"] = illumination_rmse(
            load_illuminations(args.illum_est), load_illuminations(args.illum_gt))
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polarmesh",
                                description="Polarimetric multi-view mesh refinement")
    p.add_argument("--threads", type=int, default=None,
                   help="cap the numeric worker thread count")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="render a synthetic polarized dataset")
    ps.add_argument("scene", nargs="?", help="scene JSON (default: built-in sphere)")
    ps.add_argument("out_dir")
    ps.add_argument("--seed", type=int, default=None)
    ps.set_defaults(func=cmd_synth)

    pd = sub.add_parser("decode", help="demosaic raw sensor images into plane sets")
    pd.add_argument("raw_dir")
    pd.add_argument("pattern", help="mosaic pattern JSON")
    pd.add_argument("out_dir")
    pd.set_defaults(func=cmd_decode)

    pr = sub.add_parser("refine", help="run the refinement pipeline")
    pr.add_argument("config", help="refinement config JSON")
    pr.add_argument("--output-dir", default=None)
    pr.add_argument("--tau1", type=float, default=None,
                    help="override the polarimetric weight in every stage (0 disables it)")
    pr.add_argument("--no-dop-weight", action="store_true",
                    help="drop the DoP reliability weighting")
    pr.add_argument("--use-int", action="store_true",
                    help="fit total intensity instead of the unpolarized component")
    pr.add_argument("--no-subdivide", action="store_true")
    pr.add_argument("--max-iterations", type=int, default=None)
    pr.set_defaults(func=cmd_refine)

    pe = sub.add_parser("eval", help="geometry/albedo/illumination error report")
    pe.add_argument("est", help="estimated mesh PLY")
    pe.add_argument("gt", help="ground-truth mesh PLY")
    pe.add_argument("--albedo", metavar="CAMERAS_JSON", default=None,
                    help="also report albedo RMSE using these cameras")
    pe.add_argument("--illum-est", default=None)
    pe.add_argument("--illum-gt", default=None)
    pe.add_argument("--out", default=None, help="write the report JSON here too")
    pe.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        try:
            import numba
            numba.set_num_threads(args.threads)
        except (ImportError, ValueError):
            pass
    try:
        return args.func(args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
