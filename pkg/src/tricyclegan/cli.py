"""Command-line interface.

Configuration precedence for training commands: ``--profile`` defaults, then
``--config FILE``, then ``--set key=value`` and the dedicated flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import apply_overrides, dump_config, parse_config_text, profile
from .data import (
    IMAGE_SUFFIXES,
    PREPROCESS_PROFILES,
    default_data_root,
    load_arrays,
    load_dataset,
    make_toy_dataset,
    preprocess,
    read_image,
    read_mask,
    write_mask,
    write_png,
)
from .edges import EDGE_BACKENDS, extract_edges
from .errors import TricycleError
from .metrics import score_pairs
from .models import load_bundle, save_bundle
from .shapes import sample_template

log = logging.getLogger("tricyclegan")


def _image_files(root: Path):
    return sorted(
        (p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.relative_to(root).as_posix(),
    )


def _training_config(args):
    cfg = profile(args.profile)
    if args.config:
        cfg = apply_overrides(cfg, parse_config_text(Path(args.config).read_text()))
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise TricycleError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    return apply_overrides(cfg, overrides)


def _data_root(args):
    root = args.data or default_data_root()
    if not root:
        raise TricycleError("no data root: pass --data or set TRICYCLEGAN_DATA_ROOT")
    return root


def _prepare(images, cfg, preprocess_profile):
    if preprocess_profile == "none":
        for im in images:
            if im.shape[0] != cfg.image_size or im.shape[1] != cfg.image_size:
                raise TricycleError(
                    f"image of shape {im.shape} does not match image_size {cfg.image_size}; "
                    "pass --preprocess to resize"
                )
        return images
    spec = PREPROCESS_PROFILES[preprocess_profile]
    spec = type(spec)(**{**spec.__dict__, "target_size": cfg.image_size})
    return [preprocess(im, spec) for im in images]


def _labelled_pairs(root, split, cfg, preprocess_profile):
    images, masks = load_arrays(load_dataset(root, split), labelled_only=True)
    return list(zip(_prepare(images, cfg, preprocess_profile), masks))


# -- commands -------------------------------------------------------------------------


def cmd_generate_shapes(args):
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    manifest = []
    for i in range(args.count):
        template = sample_template(rng, args.size, cone=args.cone == "on")
        name = f"shape_{i:05d}.png"
        write_mask(out / name, template.mask)
        manifest.append({"file": name, **template.params()})
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote {args.count} masks to {out}")


def cmd_extract_edges(args):
    src, dst = Path(args.input), Path(args.out)
    files = _image_files(src)
    for path in files:
        edges = extract_edges(read_image(path), args.backend)
        write_png((dst / path.relative_to(src)).with_suffix(".png"), edges)
    print(f"wrote {len(files)} edge maps to {dst}")


def cmd_make_toy(args):
    manifests = make_toy_dataset(
        np.random.default_rng(args.seed), args.count, args.size, args.out, args.val_count, args.eval_count
    )
    print(", ".join(f"{k}: {len(m.entries)}" for k, m in manifests.items()))


def cmd_pretrain_pf(args):
    from .training import Trainer

    cfg = _training_config(args)
    images, _ = load_arrays(load_dataset(_data_root(args), "train"))
    trainer = Trainer(cfg)
    trainer.pretrain(_prepare(images, cfg, args.preprocess))
    save_bundle(trainer.bundle, args.out)
    print(f"saved pretrained bundle to {args.out}")


def cmd_train(args):
    from .training import fit

    cfg = _training_config(args)
    images, _ = load_arrays(load_dataset(_data_root(args), "train"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(args.init, cfg.learning_rate, cfg.betas) if args.init else None
    bundle = fit(_prepare(images, cfg, args.preprocess), cfg, bundle, out / "train_log.csv", out)
    save_bundle(bundle, out / "bundle.pt")
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"trained to epoch {bundle.epoch}; best bundle at {out / 'bundle.pt'}")


def cmd_finetune(args):
    from .training import fine_tune

    cfg = _training_config(args)
    bundle = load_bundle(args.checkpoint, cfg.learning_rate, cfg.betas)
    pairs = _labelled_pairs(_data_root(args), args.split, cfg, args.preprocess)
    bundle = fine_tune(bundle, pairs, args.label_fraction, cfg)
    save_bundle(bundle, args.out)
    print(f"fine-tuned on {bundle.extras['finetune_labels']} labelled images; saved {args.out}")


def cmd_train_baseline(args):
    from .training import train_supervised_baseline

    cfg = _training_config(args)
    pairs = _labelled_pairs(_data_root(args), args.split, cfg, args.preprocess)
    bundle = train_supervised_baseline(pairs, cfg)
    save_bundle(bundle, args.out)
    print(f"saved supervised baseline to {args.out}")


def cmd_predict(args):
    from .training import predict_mask

    bundle = load_bundle(args.checkpoint)
    src, dst = Path(args.input), Path(args.out)
    files = _image_files(src)
    size = bundle.g_m2s.spec.image_size
    for path in files:
        image = read_image(path)
        if image.shape[0] != size or image.shape[1] != size:
            raise TricycleError(f"{path} is {image.shape[:2]}, model expects {size}x{size}")
        write_mask((dst / path.relative_to(src)).with_suffix(".png"), predict_mask(bundle, image, args.threshold))
    print(f"wrote {len(files)} masks to {dst}")


def cmd_evaluate(args):
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    triples, missing = [], []
    for gt_path in _image_files(gt_root):
        rel = gt_path.relative_to(gt_root).with_suffix(".png")
        pred_path = pred_root / rel
        if not pred_path.is_file():
            missing.append(str(rel))
            continue
        triples.append((rel.as_posix(), read_mask(pred_path), read_mask(gt_path)))
    if missing:
        raise TricycleError(f"missing predictions for: {', '.join(missing[:5])}")
    report = score_pairs(triples)
    json_path, csv_path = report.write(args.out)
    for name, value in report.summary().items():
        print(f"{name:12s} {value}")
    print(f"{'th_iou':12s} {report.th_iou:.3f}")
    print(f"report: {json_path}, per-image rows: {csv_path}")


# -- parser ---------------------------------------------------------------------------


def _training_flags(p, data=True):
    p.add_argument("--profile", default="toy", choices=["toy", "full"])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="single-worker, seeded, deterministic kernels")
    p.add_argument(
        "--preprocess",
        default="none",
        choices=["none", *PREPROCESS_PROFILES],
        help="preprocessing profile applied after loading (default: images already sized)",
    )
    if data:
        p.add_argument("--data", help="dataset root (default: $TRICYCLEGAN_DATA_ROOT)")


def build_parser():
    parser = argparse.ArgumentParser(prog="tricyclegan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-shapes", help="write random template masks and a parameter manifest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--cone", choices=["on", "off"], default="on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_shapes)

    p = sub.add_parser("extract-edges", help="edge maps for every image under a directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="sobel", choices=sorted(EDGE_BACKENDS))
    p.set_defaults(func=cmd_extract_edges)

    p = sub.add_parser("make-toy", help="write the procedural toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--val-count", type=int, default=40)
    p.add_argument("--eval-count", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("pretrain-pf", help="pretrain and freeze the patch-filling generator")
    _training_flags(p)
    p.add_argument("--out", required=True, help="checkpoint file")
    p.set_defaults(func=cmd_pretrain_pf)

    p = sub.add_parser("train", help="unsupervised training on the train split")
    _training_flags(p)
    p.add_argument("--init", help="start from this checkpoint (e.g. from pretrain-pf)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="semi-supervised fine-tuning on labelled images")
    _training_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--label-fraction", type=float, required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "eval"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-baseline", help="fully supervised segmentation baseline")
    _training_flags(p)
    p.add_argument("--split", default="val", choices=["train", "val", "eval"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("predict", help="segment every image under a directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="report JSON path; per-image CSV written alongside")
    p.set_defaults(func=cmd_evaluate)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (TricycleError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())
