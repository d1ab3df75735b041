"""Command-line entry point: ``swinnpe {train,encode,decode,eval,bd,stats}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .io import (
    BitstreamFile,
    list_images,
    load_config,
    load_model,
    read_ppm,
    write_ppm,
)
from .metrics import RDCurve, RDPoint, bd_metrics, complexity_report, psnr, read_rd_csv, write_rd_csv
from .range_coder import Bitstream
from .training import TrainConfig, synthetic_dataset, train_loop
from .transforms import CodecConfig, center_crop, geometry_errors, valid_crop_size

log = logging.getLogger("swinnpe")


class CommandError(Exception):
    pass


def _config(spec):
    if spec in (None, "toy"):
        return CodecConfig.toy()
    if spec == "paper":
        return CodecConfig.paper()
    if not os.path.exists(spec):
        raise CommandError(f"config {spec!r} is neither 'toy', 'paper' nor an existing file")
    return load_config(spec)


def _resolution(text):
    parts = text.lower().replace("x", " ").split()
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}") from None
    if len(dims) == 1:
        dims *= 2
    if len(dims) != 2 or min(dims) <= 0:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}")
    return tuple(dims)


def cmd_train(args):
    cfg = _config(args.config)
    if args.data_dir:
        paths = list_images(args.data_dir)
        if not paths:
            raise CommandError(f"no PPM images in {args.data_dir}")
        images = [read_ppm(p) for p in paths]
    else:
        images = synthetic_dataset(args.synthetic, int(args.crop * 1.5), args.seed)
    errs = geometry_errors(cfg, args.crop, args.crop)
    if errs:
        raise CommandError("; ".join(errs))
    tc = TrainConfig(beta=args.beta, steps=args.steps, batch_size=args.batch, crop=args.crop, lr=args.lr, seed=args.seed)
    _, history = train_loop(images, tc, model_cfg=cfg, out_dir=args.out)
    step, D, R, L = history[-1]
    print(f"trained {step} steps: D={D:.6f} R={R:.4f} bpp L={L:.6f} -> {args.out}")
    return 0


def _load_image_checked(path, cfg):
    img = read_ppm(path)
    H, W = img.shape[:2]
    errs = geometry_errors(cfg, H, W)
    if errs:
        raise CommandError(f"{path}: " + "; ".join(errs))
    return img


def cmd_encode(args):
    model, chash = load_model(args.model)
    img = _load_image_checked(args.input, model.cfg)
    comp = model.compress(img)
    H, W = comp.shape
    f = BitstreamFile(chash, H, W, comp.z_stream.data, [s.data for s in comp.y_streams])
    with open(args.out, "wb") as fh:
        fh.write(f.to_bytes())
    if args.recon:
        write_ppm(args.recon, comp.bundle.x_hat)
    print(f"bpp {f.payload_bits / (H * W):.4f}  PSNR {psnr(img, comp.bundle.x_hat):.3f} dB")
    return 0


def cmd_decode(args):
    model, chash = load_model(args.model)
    with open(args.input, "rb") as fh:
        blob = fh.read()
    try:
        f = BitstreamFile.from_bytes(blob, expected_hash=chash)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    errs = geometry_errors(model.cfg, f.height, f.width)
    if errs:
        raise CommandError("; ".join(errs))
    try:
        bundle = model.decompress(Bitstream(f.z_segment), [Bitstream(s) for s in f.y_segments], (f.height, f.width))
    except ValueError as exc:
        raise CommandError(f"corrupt stream: {exc}") from None
    write_ppm(args.out, bundle.x_hat)
    print(f"decoded {f.width}x{f.height}, bpp {f.payload_bits / (f.height * f.width):.4f}")
    return 0


def cmd_eval(args):
    paths = list_images(args.data_dir)
    if not paths:
        raise CommandError(f"no PPM images in {args.data_dir}")
    curve, rows = [], []
    for model_path in args.model:
        model, _ = load_model(model_path)
        bpps, psnrs = [], []
        for p in paths:
            img = read_ppm(p)
            h, w = valid_crop_size(model.cfg, *img.shape[:2])
            img = center_crop(img, h, w)
            comp = model.compress(img)
            b, q = comp.payload_bits / (h * w), psnr(img, comp.bundle.x_hat)
            bpps.append(b)
            psnrs.append(q)
            rows.append((model_path, os.path.basename(p), h, w, b, q))
            print(f"{model_path}  {os.path.basename(p)}  {h}x{w}  bpp {b:.4f}  PSNR {q:.3f}")
        point = RDPoint(float(np.mean(bpps)), float(np.mean(psnrs)))
        curve.append(point)
        print(f"{model_path}  mean  bpp {point.bpp:.4f}  PSNR {point.psnr:.3f}")
    write_rd_csv(args.out, curve)
    root, _ = os.path.splitext(args.out)
    with open(root + ".images.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "image", "height", "width", "bpp", "psnr"])
        w.writerows(rows)
    return 0


def cmd_bd(args):
    ref, test = read_rd_csv(args.ref), read_rd_csv(args.test)
    try:
        d_psnr, d_rate = bd_metrics(ref, test)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    print(f"ΔPSNR {d_psnr:.3f} dB, Δrate {d_rate:.2f}%")
    return 0


def cmd_stats(args):
    cfg = _config(args.config)
    conv = complexity_report(cfg.replace(projection="conv-dsep"), args.resolution)
    print(conv.format("conv-Swin (depthwise-separable projections, no positional encoding)"))
    if args.baseline:
        base = complexity_report(cfg.replace(projection="linear-rpe"), args.resolution)
        print(base.format("baseline Swin (linear projections + relative position bias)"))
        print(f"difference (conv - baseline): {conv.total_params - base.total_params:+,d} params, " f"{conv.macs - base.macs:+,d} MACs")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="swinnpe", description="Convolutional-Swin learned image codec")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="rate-distortion training")
    p.add_argument("--config", default="toy", help="'toy', 'paper' or a key=value config file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data-dir")
    src.add_argument("--synthetic", type=int, metavar="N", help="train on N synthetic images")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress a PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--recon", help="also write the encoder-side reconstruction")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress to a PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="RD points for one or more models")
    p.add_argument("--model", required=True, action="append")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bd", help="Bjontegaard deltas between two RD curves")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_bd)

    p = sub.add_parser("stats", help="parameter and MAC counts")
    p.add_argument("--config", default="toy")
    p.add_argument("--resolution", type=_resolution, default=(256, 256))
    p.add_argument("--baseline", action="store_true")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CommandError, ValueError, OSError) as exc:
        print(f"swinnpe {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
