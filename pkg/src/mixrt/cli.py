"""Command-line pipeline driver.

Each subcommand wraps one module operation and prints a single JSON summary
line on success. Exit codes: 0 success, 2 usage (argparse), 3 I/O failure,
4 numeric/domain failure.

    mixrt make-synthetic --name box-room --out data/box
    mixrt simplify --mesh data/box/mesh.glb --out proxy.glb --voxel 0.01 --contracted
    mixrt train --dataset data/box --mesh proxy.glb --out bundles/box
    mixrt render --bundle bundles/box --dataset data/box --split test --index 0 --out out.png
    mixrt psnr --a out.png --b data/box/test_000.png
    mixrt bench --bundle bundles/box --levels 1,2,4,8 --out bench.csv
    mixrt export --bundle bundles/box --out bundles/box-copy
    mixrt info --bundle bundles/box
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

log = logging.getLogger("mixrt")


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _load_bundle(path):
    from .assets import import_bundle
    return import_bundle(path)


def _dataset_camera(dataset_dir, split: str, index: int):
    from .synthetic import load_dataset
    data = load_dataset(dataset_dir)
    views = data[split]
    if not 0 <= index < len(views):
        raise ValueError(f"{split} view index {index} out of range "
                         f"(have {len(views)})")
    return data, views[index]


def cmd_make_synthetic(args) -> dict:
    from .synthetic import make_synthetic
    summary = make_synthetic(args.name, args.out, seed=args.seed)
    return {"command": "make-synthetic", "name": args.name, **summary}


def cmd_simplify(args) -> dict:
    from .geometry import cluster_simplify
    from .meshio import load_mesh, save_mesh
    mesh = load_mesh(args.mesh)
    out = cluster_simplify(mesh, args.voxel, in_contracted_space=args.contracted)
    save_mesh(out, args.out)
    return {"command": "simplify", "out": str(args.out), "voxel": args.voxel,
            "contracted": bool(args.contracted),
            "vertices_in": mesh.num_vertices, "vertices_out": out.num_vertices,
            "faces_in": mesh.num_faces, "faces_out": out.num_faces,
            "reduction": mesh.num_vertices / max(out.num_vertices, 1)}


def cmd_train(args) -> dict:
    from .assets import export_bundle
    from .displacement import DisplacementMaps, quantize_maps
    from .fields import HashGridConfig, HashGridField
    from .meshio import load_mesh
    from .scene import Scene
    from .synthetic import load_dataset
    from .trainer import TrainConfig, train

    data = load_dataset(args.dataset)
    mesh = load_mesh(args.mesh) if args.mesh else data["mesh"]
    rng = np.random.default_rng(args.seed)
    config = HashGridConfig(num_levels=args.levels, table_size=args.table_size,
                            feature_dim=args.feature_dim,
                            min_resolution=args.min_res,
                            max_resolution=args.max_res)
    field = HashGridField.create(config, rng, hidden=tuple(args.hidden))
    maps = None
    if not args.no_displacement:
        maps = DisplacementMaps.train_init(args.map_res, args.sh_degree, rng)
    scene = Scene(mesh=mesh, field=field, maps=maps,
                  background=data["background"])
    tcfg = TrainConfig(iterations=args.iterations, batch_size=args.batch_size,
                       lr_tables=args.lr_tables, lr_decoder=args.lr_decoder,
                       lr_sh=args.lr_sh, lr_scale=args.lr_scale,
                       seed=args.seed, log_every=args.log_every,
                       use_displacement=not args.no_displacement)
    scene, history = train(scene, data["train"], tcfg)
    if scene.maps is not None:
        scene.maps, _ = quantize_maps(scene.maps)
    summary = export_bundle(scene, args.out)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["iteration", "loss"])
            writer.writeheader()
            writer.writerows(history)
    final_loss = history[-1]["loss"] if history else None
    return {"command": "train", "iterations": args.iterations,
            "final_loss": final_loss, **summary}


def cmd_render(args) -> dict:
    from .assets import float_image_to_png
    from .renderer import RenderSettings, render_mixrt, render_volumetric_reference
    scene = _load_bundle(args.bundle)
    _, (camera, _) = _dataset_camera(args.dataset, args.split, args.index)
    settings = RenderSettings(mode=args.mode, background=scene.background,
                              use_displacement=not args.no_displacement,
                              near=args.near, far=args.far,
                              samples_per_ray=args.samples,
                              threads=args.threads,
                              chunk=16384 if args.threads > 1 else 65536)
    if args.mode == "volumetric-reference":
        image = render_volumetric_reference(scene.field, camera, settings)
    else:
        image = render_mixrt(scene, camera, settings)
    float_image_to_png(args.out, image.pixels)
    return {"command": "render", "out": str(args.out), "mode": args.mode,
            "width": image.width, "height": image.height}


def cmd_psnr(args) -> dict:
    from .assets import png_to_float_image
    from .renderer import Image, psnr
    a = Image(png_to_float_image(args.a))
    b = Image(png_to_float_image(args.b))
    return {"command": "psnr", "a": str(args.a), "b": str(args.b),
            "psnr_db": psnr(a, b)}


def cmd_bench(args) -> dict:
    from .renderer import Camera, bench_levels, bench_table_sizes
    from .synthetic import look_rotation
    scene = _load_bundle(args.bundle)
    lo, hi = scene.mesh.bounds()
    center = (lo + hi) / 2
    camera = Camera(position=center + np.array([0.0, 0.0, 0.05]),
                    rotation=look_rotation(np.array([1.0, 0.2, -0.1])),
                    focal=args.size / 1.4, width=args.size, height=args.size)
    rows = []
    if args.levels:
        levels = [int(x) for x in args.levels.split(",")]
        rows += bench_levels(scene, camera, levels, frames=args.frames,
                             seed=args.seed)
    if args.table_sweep:
        lo_t, hi_t = (int(x) for x in args.table_sweep.split(":"))
        rows += bench_table_sizes(scene, camera, range(lo_t, hi_t + 1),
                                  frames=args.frames, seed=args.seed)
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=["levels", "table_size", "ms_median", "ms_p10",
                               "ms_p90"])
            writer.writeheader()
            writer.writerows(rows)
    return {"command": "bench", "rows": rows,
            "out": str(args.out) if args.out else None}


def cmd_export(args) -> dict:
    from .assets import export_bundle
    scene = _load_bundle(args.bundle)
    summary = export_bundle(scene, args.out)
    return {"command": "export", **summary}


def cmd_info(args) -> dict:
    out: dict = {"command": "info"}
    if args.bundle:
        from .assets import import_bundle
        scene = import_bundle(args.bundle)
        out["bundle"] = {
            "path": str(args.bundle),
            "vertices": scene.mesh.num_vertices,
            "faces": scene.mesh.num_faces,
            "levels": scene.field.config.num_levels,
            "table_size": scene.field.config.table_size,
            "resolutions": list(scene.field.resolutions),
            "has_displacement": scene.maps is not None,
        }
    if args.dataset:
        from .synthetic import load_dataset
        data = load_dataset(args.dataset)
        out["dataset"] = {
            "path": str(args.dataset),
            "train_views": len(data["train"]),
            "test_views": len(data["test"]),
            "vertices": data["mesh"].num_vertices,
            "faces": data["mesh"].num_faces,
        }
    if args.mesh:
        from .meshio import load_mesh
        mesh = load_mesh(args.mesh)
        lo, hi = mesh.bounds()
        out["mesh"] = {
            "path": str(args.mesh),
            "vertices": mesh.num_vertices,
            "faces": mesh.num_faces,
            "bounds_min": [float(v) for v in lo],
            "bounds_max": [float(v) for v in hi],
        }
    if len(out) == 1:
        raise ValueError("info needs --bundle, --dataset, or --mesh")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixrt",
        description="Mesh + displacement + hash-field scene pipeline")
    parser.add_argument("--seed", type=int, default=0, help="global rng seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="render worker threads")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a synthetic dataset")
    p.add_argument("--name", required=True, choices=["tri", "box-room", "sphere"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("simplify", help="vertex-clustering mesh simplification")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--voxel", type=float, default=0.01)
    p.add_argument("--contracted", action=argparse.BooleanOptionalAction,
                   default=False,
                   help="assign voxels in contracted space")
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("train", help="fit field + maps to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--mesh", default=None,
                   help="proxy mesh override (default: dataset mesh)")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=4096)
    p.add_argument("--table-size", type=int, default=2 ** 17)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--min-res", type=int, default=256)
    p.add_argument("--max-res", type=int, default=4096)
    p.add_argument("--feature-dim", type=int, default=4)
    p.add_argument("--hidden", type=int, nargs="*", default=[16, 16])
    p.add_argument("--map-res", type=int, default=256)
    p.add_argument("--sh-degree", type=int, default=2)
    p.add_argument("--lr-tables", type=float, default=1e-2)
    p.add_argument("--lr-decoder", type=float, default=1e-3)
    p.add_argument("--lr-sh", type=float, default=1e-3)
    p.add_argument("--lr-scale", type=float, default=1e-3)
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--no-displacement", action="store_true",
                   help="train without the view-dependent displacement maps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a bundle with a dataset camera")
    p.add_argument("--bundle", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="mixrt",
                   choices=["mixrt", "volumetric-reference"])
    p.add_argument("--near", type=float, default=0.05)
    p.add_argument("--far", type=float, default=4.0)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--no-displacement", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("psnr", help="PSNR between two PNGs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_psnr)

    p = sub.add_parser("bench", help="frame-time profiling sweeps")
    p.add_argument("--bundle", required=True)
    p.add_argument("--levels", default="1,2,4,8",
                   help="comma-separated level counts ('' to skip)")
    p.add_argument("--table-sweep", default=None,
                   help="log2 table-size range lo:hi at fixed levels")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--size", type=int, default=128, help="probe image size")
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="re-export a bundle (round-trip check)")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("info", help="summarize a bundle, dataset, or mesh")
    p.add_argument("--bundle", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--mesh", default=None)
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    from .assets import BundleError
    try:
        summary = args.func(args)
    except (BundleError, OSError, json.JSONDecodeError) as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, ArithmeticError, RuntimeError) as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 4
    _emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
