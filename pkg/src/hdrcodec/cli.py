"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed inputs), 3 model error (bad checkpoint or bitstream/model
mismatch).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bitstream import BitstreamError, parse_bitstream
from .codec import ModelMismatchError, bpp, compress, decompress
from .evaluate import (
    bd_quality,
    curve_from_records,
    evaluate,
    read_records,
    write_records,
)
from .fusion import automated_decode
from .hdr_io import (
    HdrDataError,
    HdrFormatError,
    HdrImage,
    LdrImage,
    equirect_to_perspective,
    load_hdr,
    read_manifest,
    save_hdr,
)
from .rangecoder import RangeCoderError
from .training import CheckpointError, TrainConfig, load_checkpoint, train

_DATA_ERRORS = (
    HdrFormatError,
    HdrDataError,
    BitstreamError,
    RangeCoderError,
    FileNotFoundError,
    IsADirectoryError,
    ValueError,
    json.JSONDecodeError,
)
_MODEL_ERRORS = (CheckpointError, ModelMismatchError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="hdrcodec", description="Learned two-stream HDR image codec")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compress", help="encode an HDR image to a bitstream")
    c.add_argument("input", help="Radiance .hdr file")
    c.add_argument("--model", required=True, help="checkpoint path")
    c.add_argument("--lmax", type=float, default=1e5, help="max scene luminance cd/m^2")
    c.add_argument("--out", required=True, help="output bitstream path")

    d = sub.add_parser("decompress", help="decode a bitstream")
    d.add_argument("input", help="bitstream file")
    d.add_argument("--model", required=True)
    d.add_argument("--lmax", type=float, default=None, help="override header luminance")
    d.add_argument("--auto", action="store_true", help="pseudo-exposure fusion decode")
    d.add_argument("--out", required=True, help="output prefix (-> .png and .hdr)")

    t = sub.add_parser("train", help="train a codec")
    t.add_argument("--config", default=None, help="JSON training config")
    t.add_argument("--data", required=True, help="directory of .hdr images")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--lambda-l", type=float, default=None, dest="lambda_l")
    t.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("evaluate", help="rate-distortion evaluation")
    e.add_argument("--data", required=True, help="directory of .hdr images")
    e.add_argument(
        "--model",
        action="append",
        required=True,
        help="checkpoint path (repeatable, one per rate point)",
    )
    e.add_argument("--lmax", type=float, default=1e5)
    e.add_argument("--metrics", default="nlpd,d_star_psnr,d_star_ssim")
    e.add_argument("--out", default=None, help="records CSV path (default stdout)")

    b = sub.add_parser("bd", help="BD-Quality between two record files")
    b.add_argument("test", help="test records CSV")
    b.add_argument("anchor", help="anchor records CSV")
    b.add_argument("--metric", default=None, help="metric name (default: first common)")

    ds = sub.add_parser("dataset", help="dataset tooling")
    dsub = ds.add_subparsers(dest="dataset_command", required=True, parser_class=_Parser)
    g = dsub.add_parser("gen", help="project panorama crops from a manifest")
    g.add_argument("--manifest", required=True, help="lines: path yaw pitch")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--size", type=int, default=448)
    g.add_argument("--fov", type=float, default=float(np.pi / 4))
    return p


def _save_ldr_png(path: Path, ldr: LdrImage) -> None:
    from PIL import Image

    arr = np.clip(np.round(ldr.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _load_model(path: str):
    model, _ = load_checkpoint(path)
    return model


def _cmd_compress(args) -> int:
    image = load_hdr(args.input)
    model = _load_model(args.model)
    bs = compress(image, model, args.lmax)
    Path(args.out).write_bytes(bs.to_bytes())
    total, side = bpp(bs)
    print(f"{args.out}: {total:.4f} bpp ({side:.4f} side info)")
    return 0


def _cmd_decompress(args) -> int:
    data = Path(args.input).read_bytes()
    bs = parse_bitstream(data)
    model = _load_model(args.model)
    if args.auto:
        ldr, hdr = automated_decode(bs, model)
    else:
        ldr, hdr = decompress(bs, model, l_max_override=args.lmax)
    out = Path(args.out)
    _save_ldr_png(out.with_suffix(".png"), ldr)
    save_hdr(out.with_suffix(".hdr"), hdr)
    print(f"wrote {out.with_suffix('.png')} and {out.with_suffix('.hdr')}")
    return 0


def _load_dataset(directory: str) -> list[tuple[str, HdrImage]]:
    paths = sorted(Path(directory).glob("*.hdr"))
    if not paths:
        raise FileNotFoundError(f"no .hdr files in {directory}")
    return [(p.stem, load_hdr(p)) for p in paths]


def _cmd_train(args) -> int:
    if args.config:
        cfg = TrainConfig.from_json(Path(args.config).read_text())
    else:
        cfg = TrainConfig()
    if args.lambda_l is not None:
        cfg.lambda_l = args.lambda_l
    if args.seed is not None:
        cfg.seed = args.seed
    from .hdr_io import preprocess

    images = [preprocess(img) for _, img in _load_dataset(args.data)]
    result = train(cfg, images, out_dir=args.out, log_fn=lambda r: print(json.dumps(r)))
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_evaluate(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    images = _load_dataset(args.data)
    models = []
    for path in args.model:
        model, payload = load_checkpoint(path)
        tc = payload.get("train_config") or {}
        models.append((float(tc.get("lambda_l", len(models) + 1)), model))
    records, _ = evaluate(images, models, l_max=args.lmax, metrics=metrics)
    text = write_records(records)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bd(args) -> int:
    test_records = read_records(Path(args.test).read_text())
    anchor_records = read_records(Path(args.anchor).read_text())
    metric = args.metric
    if metric is None:
        test_metrics = [r.metric for r in test_records]
        metric = test_metrics[0] if test_metrics else ""
    value = bd_quality(
        curve_from_records(test_records, metric),
        curve_from_records(anchor_records, metric),
    )
    print(f"{value:.6g}")
    return 0


def _cmd_dataset_gen(args) -> int:
    entries = read_manifest(Path(args.manifest).read_text())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (path, yaw, pitch) in enumerate(entries):
        pano = load_hdr(path)
        crop = equirect_to_perspective(pano, yaw, pitch, args.fov, args.size)
        dest = out_dir / f"crop_{i:05d}.hdr"
        save_hdr(dest, crop)
        print(dest)
    return 0


_COMMANDS = {
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "bd": _cmd_bd,
}


def cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "dataset":
            return _cmd_dataset_gen(args)
        return _COMMANDS[args.command](args)
    except _MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))
