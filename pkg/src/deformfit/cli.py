"""Command-line interface covering every pipeline stage.

Exit codes: 0 success, 1 generic error, 2 missing/unreadable input,
3 point-count mismatch, 4 fit failure, 5 config error, 6 empty database.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ffd, fit, geometry, io, metrics, retrieval


def _fmt(v):
    return f"{v:.9f}"


def _say(args, message):
    if not args.quiet:
        print(message)


def cmd_sample(args):
    mesh = io.load_mesh(args.mesh)
    pts = geometry.sample_surface(mesh, args.n, seed=args.seed)
    io.write_points(args.out, pts)
    _say(args, f"wrote {len(pts)} points to {args.out}")
    return 0


def cmd_resample(args):
    pts = io.read_points(args.cloud)
    out = geometry.resample(pts, args.n, seed=args.seed)
    io.write_points(args.out, out)
    _say(args, f"wrote {len(out)} points to {args.out}")
    return 0


def cmd_normalize(args):
    pts = io.read_points(args.cloud)
    normalized, tf = geometry.normalize_for_eval(pts)
    io.write_points(args.out, normalized)
    t = tf.translation
    _say(args, f"{_fmt(tf.scale)} {_fmt(t[0])} {_fmt(t[1])} {_fmt(t[2])}")
    return 0


def cmd_voxelize(args):
    pts = io.read_points(args.cloud)
    if args.extent is not None:
        lo, hi = np.array(args.extent[:3]), np.array(args.extent[3:])
    else:
        lo, hi = geometry.default_extent(pts)
    grid = geometry.voxelize(pts, args.resolution, lo, hi)
    io.write_voxel_grid(args.out, grid)
    _say(args, f"{int(grid.occupancy.sum())} occupied cells of {args.resolution ** 3}")
    return 0


def cmd_metric(args):
    a = io.read_points(args.cloud_a)
    b = io.read_points(args.cloud_b)
    if args.resample is not None:
        a = geometry.resample(a, args.resample, seed=args.seed)
        b = geometry.resample(b, args.resample, seed=args.seed + 1)
    if args.kind == "cd":
        total = metrics.chamfer_fast(a, b)
        avg = metrics.chamfer_average(a, b)
        print(f"{_fmt(total)} {_fmt(avg)}")
    else:
        if len(a) != len(b):
            raise metrics.SizeMismatchError(
                f"emd needs equal point counts ({len(a)} vs {len(b)}); use --resample"
            )
        assignment = metrics.emd_exact(a, b)
        print(_fmt(assignment.cost))
        if args.dump_assignment:
            with open(args.dump_assignment, "w") as fh:
                for i, j in enumerate(assignment.mapping):
                    fh.write(f"{i} {j}\n")
    return 0


def cmd_deform(args):
    pts = io.read_points(args.cloud)
    degrees, offsets = io.read_field(args.field)
    base = io.read_points(args.lattice_from) if args.lattice_from else pts
    lattice = ffd.lattice_for_cloud(base, degrees=degrees)
    out = ffd.deform(lattice, offsets, pts)
    io.write_points(args.out, out)
    _say(args, f"wrote {len(out)} deformed points to {args.out}")
    return 0


def _load_fit_config(args):
    cfg = fit.FitConfig(seed=args.seed)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"no such file: {args.config}")
        cfg = fit.load_config(args.config, base=cfg)
    for item in getattr(args, "set", None) or []:
        cfg = fit.parse_config(item, base=cfg)
    return cfg


def _run_fit(template, target, cfg, out_dir, args):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lattice = ffd.lattice_for_cloud(template)
    offsets, trace = fit.fit_deformation(template, target, lattice, cfg)
    deformed = ffd.deform(lattice, offsets, template)
    io.write_points(out / "deformed.xyz", deformed)
    io.write_field(out / "field.txt", lattice.degrees, offsets)
    trace.write_csv(out / "trace.csv")
    initial_cd = metrics.chamfer_average(template, target)
    final_cd = metrics.chamfer_average(deformed, target)
    _say(args, f"initial_cd={_fmt(initial_cd)} final_cd={_fmt(final_cd)}")
    return initial_cd, final_cd, deformed


def cmd_fit(args):
    template = io.read_points(args.template)
    target = io.read_points(args.target)
    cfg = _load_fit_config(args)
    _run_fit(template, target, cfg, args.out_dir, args)
    return 0


def cmd_db_build(args):
    db = retrieval.TemplateDatabase()
    for cloud_file in args.clouds:
        pts = io.read_points(cloud_file)
        normalized, _ = geometry.normalize_for_eval(pts)
        desc = retrieval.shape_descriptor(normalized, bins=args.bins)
        db.add(Path(cloud_file).stem, desc, os.path.abspath(cloud_file))
    retrieval.save_database(db, args.db)
    _say(args, f"indexed {len(db)} shapes into {args.db}")
    return 0


def _query_descriptor(path, bins):
    pts = io.read_points(path)
    normalized, _ = geometry.normalize_for_eval(pts)
    return retrieval.shape_descriptor(normalized, bins=bins)


def cmd_db_query(args):
    db = retrieval.load_database(args.db)
    params = None
    if args.params:
        weight, bias = io.read_encoder_params(args.params)
        params = retrieval.EncoderParams(weight=weight, bias=bias)
    desc = _query_descriptor(args.query, args.bins)
    for rank, (shape_id, dist) in enumerate(retrieval.knn_retrieve(desc, db, params, args.k), start=1):
        print(f"{rank} {shape_id} {_fmt(dist)}")
    return 0


def cmd_embed_train(args):
    db = retrieval.load_database(args.db)
    if len(db) == 0:
        raise retrieval.EmptyDatabaseError("template database is empty")
    labels_by_id = {}
    with open(args.labels) as fh:
        for raw in fh:
            if raw.strip():
                shape_id, label = raw.split()
                labels_by_id[shape_id] = label
    descriptors = np.stack(db.descriptors)
    labels = np.array([labels_by_id[i] for i in db.ids])
    params = retrieval.init_encoder(descriptors.shape[1], dim_out=args.dim, seed=args.seed)
    params, trace = retrieval.train_encoder(
        [(descriptors, labels)], params, margin=args.margin, epochs=args.epochs, lr=args.lr
    )
    io.write_encoder_params(args.out, params.weight, params.bias)
    _say(args, f"final epoch loss {trace[-1]:.9g}")
    return 0


def _parse_manifest(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    manifest = {"k": "5", "seed": "0", "points": "1024"}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise fit.ConfigError(f"manifest line {lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in ("db", "query", "out", "fit_config", "k", "seed", "points", "params"):
                raise fit.ConfigError(f"unknown manifest key: {key!r}")
            manifest[key] = value
    for required in ("db", "query", "out"):
        if required not in manifest:
            raise fit.ConfigError(f"manifest is missing required key {required!r}")
    return manifest


def cmd_reconstruct(args):
    manifest = _parse_manifest(args.manifest)
    k = args.k if args.k is not None else int(manifest["k"])
    seed = args.seed if args.seed is not None else int(manifest["seed"])
    n_points = int(manifest["points"])

    db = retrieval.load_database(manifest["db"])
    params = None
    if manifest.get("params"):
        weight, bias = io.read_encoder_params(manifest["params"])
        params = retrieval.EncoderParams(weight=weight, bias=bias)

    query = io.read_points(manifest["query"])
    query_norm, _ = geometry.normalize_for_eval(query)
    desc = retrieval.shape_descriptor(query_norm)
    ranked = retrieval.knn_retrieve(desc, db, params, min(k, len(db)))

    cfg = fit.FitConfig(seed=seed)
    if manifest.get("fit_config"):
        cfg = fit.load_config(manifest["fit_config"], base=cfg)

    target = geometry.resample(query_norm, n_points, seed=seed)
    if args.try_all:
        candidates = ranked
    elif args.best:
        candidates = [ranked[0]]
    else:
        rng = np.random.default_rng(seed)
        candidates = [ranked[int(rng.integers(len(ranked)))]]

    out_dir = Path(manifest["out"])
    results = []
    for shape_id, _dist in candidates:
        template = io.read_points(db.cloud_path(shape_id))
        template_norm, _ = geometry.normalize_for_eval(template)
        template_n = geometry.resample(template_norm, n_points, seed=seed + 1)
        sub_dir = out_dir / shape_id if args.try_all else out_dir
        initial_cd, final_cd, _ = _run_fit(template_n, target, cfg, sub_dir, args)
        results.append({"template_id": shape_id, "initial_cd": initial_cd, "final_cd": final_cd})

    results.sort(key=lambda r: (r["final_cd"], r["template_id"]))
    chosen = results[0]
    report = {
        "template_id": chosen["template_id"],
        "initial_cd": round(chosen["initial_cd"], 12),
        "final_cd": round(chosen["final_cd"], 12),
        "retrieved": [shape_id for shape_id, _ in ranked],
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="deformfit", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="random seed for sampling stages")
    parser.add_argument("--quiet", action="store_true", help="suppress informational output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a point cloud from a mesh surface")
    p.add_argument("mesh")
    p.add_argument("n", type=int)
    p.add_argument("out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("resample", help="resample a point cloud to n points")
    p.add_argument("cloud")
    p.add_argument("n", type=int)
    p.add_argument("out")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("normalize", help="ground-plane align and unit-hemisphere scale")
    p.add_argument("cloud")
    p.add_argument("out")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("voxelize", help="rasterize a cloud into an occupancy grid")
    p.add_argument("cloud")
    p.add_argument("resolution", type=int)
    p.add_argument("out")
    p.add_argument("--extent", type=float, nargs=6, metavar=("AX", "AY", "AZ", "BX", "BY", "BZ"))
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("metric", help="point-set distance between two clouds")
    p.add_argument("kind", choices=["cd", "emd"])
    p.add_argument("cloud_a")
    p.add_argument("cloud_b")
    p.add_argument("--resample", type=int)
    p.add_argument("--dump-assignment")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("deform", help="apply a deformation field to a cloud")
    p.add_argument("cloud")
    p.add_argument("field")
    p.add_argument("out")
    p.add_argument("--lattice-from", help="cloud file defining the lattice domain (default: input cloud)")
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("fit", help="optimize a deformation of template onto target")
    p.add_argument("template")
    p.add_argument("target")
    p.add_argument("out_dir")
    p.add_argument("--config", help="key=value fit config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("db-build", help="index point-cloud files into a template database")
    p.add_argument("db")
    p.add_argument("clouds", nargs="+")
    p.add_argument("--bins", type=int, default=retrieval.D2_BINS)
    p.set_defaults(func=cmd_db_build)

    p = sub.add_parser("db-query", help="k-nearest templates for a query cloud")
    p.add_argument("db")
    p.add_argument("query")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--bins", type=int, default=retrieval.D2_BINS)
    p.add_argument("--params", help="trained encoder parameter file")
    p.set_defaults(func=cmd_db_query)

    p = sub.add_parser("embed-train", help="train the retrieval embedding on a labeled database")
    p.add_argument("db")
    p.add_argument("labels", help="text file of 'shape-id class-label' lines")
    p.add_argument("out")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=32)
    p.set_defaults(func=cmd_embed_train)

    p = sub.add_parser("reconstruct", help="retrieve templates and fit the best to a query cloud")
    p.add_argument("manifest", help="key=value manifest: db, query, out, fit_config, k, seed, points, params")
    p.add_argument("--k", type=int)
    p.add_argument("--best", action="store_true", help="use the rank-1 template instead of a seeded random top-k pick")
    p.add_argument("--try-all", action="store_true", help="fit every retrieved template, keep the lowest final CD")
    p.set_defaults(func=cmd_reconstruct)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # reconstruct distinguishes "not given" from the manifest default
    if args.command == "reconstruct" and "--seed" not in (argv if argv is not None else sys.argv[1:]):
        args.seed = None
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except metrics.SizeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except fit.FitDivergedError as exc:
        print(f"error: fit failed: {exc}", file=sys.stderr)
        return 4
    except fit.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except retrieval.EmptyDatabaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6
    except (ValueError, io.MeshParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
