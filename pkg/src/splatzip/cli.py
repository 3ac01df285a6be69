"""Command-line front end: ``splatzip {encode,decode,render,eval,info,synth}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data or
corruption error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .codec import ContainerError, PipelineConfig, decode_scene, encode_scene, inspect
from .codec.huffman import HuffmanDecodeError
from .core import InvalidInputError
from .field import TrainingDivergedError, export_decoded
from .importance import TAU_PRESETS, ImportanceConfigError
from .metrics import MetricReport
from .ply_io import CameraFileError, PlySchemaError, load_cameras, load_ply, save_cameras, write_ply
from .rasterizer import render
from .svq import SvqConfigError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("splatzip")


class ConfigError(ValueError):
    pass


def _threads(value):
    return value if value else (os.cpu_count() or 1)


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        try:
            cfg = PipelineConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (TypeError, json.JSONDecodeError) as e:
            raise ConfigError(f"bad config file {args.config}: {e}") from None
    over = {}
    if args.preset:
        over["tau"] = TAU_PRESETS[args.preset]
    if args.tau is not None:
        over["tau"] = args.tau
    if args.no_prune:
        over["tau"] = None
    if args.lam is not None:
        over["lam"] = args.lam
    if args.k is not None:
        over["k"] = args.k
    if args.no_svq:
        over["svq"] = None
    if args.seed is not None:
        over["seed"] = args.seed
        if cfg.svq is not None and not args.no_svq:
            over["svq"] = replace(cfg.svq, seed=args.seed)
    distill = cfg.distill
    if args.iterations is not None:
        distill = replace(distill, iterations=args.iterations)
    if args.seed is not None:
        distill = replace(distill, seed=args.seed)
    over["distill"] = distill
    over["threads"] = _threads(args.threads)
    cfg = replace(cfg, **over)
    try:
        return cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _load_scene(path):
    if str(path).endswith(".omg"):
        return decode_scene(Path(path).read_bytes())
    return load_ply(path)


def _save_png(img, path):
    from PIL import Image
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def _load_png(path) -> np.ndarray:
    from PIL import Image
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def cmd_encode(args) -> int:
    cfg = resolve_config(args)
    source = load_ply(args.input)
    cameras = list(load_cameras(args.cameras)) if args.cameras else []
    if cfg.tau is not None and not cameras:
        raise ConfigError("pruning needs --cameras (or pass --no-prune)")
    result = encode_scene(source, cameras, cfg)
    Path(args.output).write_bytes(result.data)
    if args.importance_dump and result.importance is not None:
        Path(args.importance_dump).write_text(result.importance.to_json())
    if args.report:
        Path(args.report).write_text(json.dumps(result.report.to_dict(), indent=2))
    print(result.report.table())
    return EXIT_OK


def cmd_decode(args) -> int:
    scene = decode_scene(Path(args.input).read_bytes())
    write_ply(export_decoded(scene), args.output)
    print(f"decoded {scene.count} Gaussians -> {args.output}")
    return EXIT_OK


def cmd_render(args) -> int:
    scene = _load_scene(args.scene)
    out = Path(args.outdir)
    bg = tuple(args.background)
    for i, cam in enumerate(load_cameras(args.cameras)):
        img = render(scene, cam, bg, exact=args.exact, threads=_threads(args.threads))
        _save_png(img, out / f"render_{i:03d}.png")
        if args.raw:
            np.save(out / f"render_{i:03d}.npy", img)
    return EXIT_OK


def cmd_eval(args) -> int:
    scene = _load_scene(args.scene)
    report = MetricReport()
    bg = tuple(args.background)
    for cam in load_cameras(args.cameras):
        gt = _load_png(cam.image_path)
        img = render(scene, cam, bg, threads=_threads(args.threads))
        report.add(Path(cam.image_path).name, img, gt)
    print(report.to_json() if args.json else report.table())
    return EXIT_OK


def cmd_info(args) -> int:
    rep = inspect(Path(args.input).read_bytes())
    print(json.dumps(rep.to_dict(), indent=2) if args.json else rep.table())
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import orbit_cameras, synth_scene
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    scene = synth_scene(args.n, seed=args.seed)
    write_ply(scene, out / "scene.ply")
    cams = orbit_cameras(args.cameras, args.width, args.height, seed=args.seed)
    save_cameras(cams, out / "cameras.jsonl")
    bg = tuple(args.background)
    for cam in cams:
        _save_png(render(scene, cam, bg, threads=_threads(args.threads)), out / cam.image_path)
    print(f"wrote {args.n} Gaussians and {len(cams)} views to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatzip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")
        sp.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))

    e = sub.add_parser("encode", help="compress a 3DGS PLY into an .omg container")
    e.add_argument("input")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--cameras", help="camera list used for importance scoring")
    e.add_argument("--config", help="JSON pipeline config; flags override it")
    e.add_argument("--preset", choices=sorted(TAU_PRESETS), help="size preset (sets tau)")
    e.add_argument("--tau", type=float)
    e.add_argument("--no-prune", action="store_true")
    e.add_argument("--lambda", dest="lam", type=float)
    e.add_argument("--k", type=int)
    e.add_argument("--no-svq", action="store_true", help="store float32 attributes instead of SVQ indices")
    e.add_argument("--iterations", type=int, help="distillation steps")
    e.add_argument("--seed", type=int)
    e.add_argument("--report", help="write the size breakdown as JSON")
    e.add_argument("--importance-dump", help="write the importance diagnostics as JSON")
    common(e)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="decode an .omg container to a PLY")
    d.add_argument("input")
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("render", help="render a .ply or .omg scene for every camera")
    r.add_argument("scene")
    r.add_argument("--cameras", required=True)
    r.add_argument("--outdir", required=True)
    r.add_argument("--exact", action="store_true", help="disable the alpha-skip and early-stop shortcuts")
    r.add_argument("--raw", action="store_true", help="also write float .npy images")
    common(r)
    r.set_defaults(func=cmd_render)

    ev = sub.add_parser("eval", help="PSNR/SSIM of renders against the cameras' images")
    ev.add_argument("scene")
    ev.add_argument("--cameras", required=True)
    ev.add_argument("--json", action="store_true")
    common(ev)
    ev.set_defaults(func=cmd_eval)

    i = sub.add_parser("info", help="size breakdown of an .omg container")
    i.add_argument("input")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_info)

    s = sub.add_parser("synth", help="generate a synthetic scene, cameras and ground-truth renders")
    s.add_argument("--n", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cameras", type=int, default=8)
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--height", type=int, default=128)
    s.add_argument("--outdir", required=True)
    common(s)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SvqConfigError, ImportanceConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContainerError, HuffmanDecodeError, PlySchemaError, CameraFileError, InvalidInputError,
            TrainingDivergedError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
