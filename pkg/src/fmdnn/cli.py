"""``fmdnn`` command line: train, eval, extract-fuzzy, visualize, selftest.

Every subcommand takes ``--config FILE`` plus trailing ``key=value``
overrides (applied after the file, before ``FMDNN_SEED``). Exit status is 0 on
success, 1 on a runtime failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import Config, load_config
from .data import load_dataset, make_synthetic_dataset, read_image, split_dataset, to_batch, write_gray_ppm
from .errors import ConfigError, FmdnnError, UsageError
from .fuzzy import extract_fuzzy, to_grayscale
from .metrics import CSV_HEADER, csv_line
from .selftest import MUTATIONS, format_report, run_selftest
from .training import evaluate, predict_split, train
from .viz import SOURCES, emit_cam, emit_heatmap, feature_map

log = logging.getLogger("fmdnn")
SPLITS = ("train", "val", "test", "all")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fmdnn", description="Fuzzy-guided multi-granular image classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")

    p = sub.add_parser("train", help="train on a class-per-directory dataset")
    common(p)
    p.add_argument("--data", type=Path, default=Path("data"), help="dataset root (default: data)")
    p.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")
    p.add_argument("--synthetic", type=int, metavar="PER_CLASS",
                   help="first write a synthetic texture set with this many images per class")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="test")

    p = sub.add_parser("extract-fuzzy", help="write membership maps and the fused fuzzy map")
    common(p)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--checkpoint", type=Path, help="take fusion weights and bias from a model")

    p = sub.add_parser("visualize", help="heatmap of a feature map, the fuzzy map or a CAM")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--source", choices=SOURCES, default="fine")
    p.add_argument("--target", type=int, default=None, help="class for cam (default: predicted)")
    p.add_argument("--granularity", choices=("fine", "medium", "coarse"), default="fine",
                   help="feature map the cam is computed on")
    p.add_argument("--upscale", action="store_true", help="nearest-neighbour upscale to input size")
    p.add_argument("--out", type=Path, required=True, help="output .ppm path")

    p = sub.add_parser("selftest", help="run the built-in check suites")
    p.add_argument("--mutate", action="append", default=[], choices=MUTATIONS,
                   help="inject a known defect (the matching suite must fail)")
    return parser


def parse_cli(argv) -> tuple[argparse.Namespace, Config]:
    """Parse argv and resolve the config; UsageError or ConfigError on bad input."""
    args = build_parser().parse_args(argv)
    cfg = load_config(getattr(args, "config", None), getattr(args, "overrides", ()))
    return args, cfg


def _config(args) -> Config:
    return load_config(args.config, args.overrides)


def _pick_split(ds, cfg: Config, which: str):
    if which == "all":
        return ds
    train_ds, val_ds, test_ds = split_dataset(ds, cfg.train.split, cfg.train.seed)
    return {"train": train_ds, "val": val_ds, "test": test_ds}[which]


def _load_rgb(path: Path, size: int) -> np.ndarray:
    img = read_image(path)
    if img.shape[:2] != (size, size):
        raise ConfigError(f"{path} is {img.shape[1]}x{img.shape[0]}, model expects {size}x{size}")
    return to_batch([img])[0]


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.synthetic:
        ds = make_synthetic_dataset(args.data, cfg.model.num_classes, args.synthetic,
                                    cfg.model.image_size, cfg.train.seed)
    else:
        ds = load_dataset(args.data, cfg.train.seed)
    ckpt, history = train(cfg, ds, out_dir=args.out)
    print(f"best epoch {ckpt.epoch}; checkpoint {args.out / 'best.ckpt'}")
    _, _, test_ds = split_dataset(ds, cfg.train.split, cfg.train.seed)
    if len(test_ds):
        model = ckpt.build_model()
        m = evaluate(model, test_ds)
        _, loss = predict_split(model, test_ds)
        print(CSV_HEADER)
        print(csv_line(ckpt.epoch, "test", loss, m))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config.copy()
    if args.config or args.overrides:
        cfg = load_config(args.config, args.overrides)
    ds = _pick_split(load_dataset(args.data, cfg.train.seed), cfg, args.split)
    model = ckpt.build_model()
    m = evaluate(model, ds)
    _, loss = predict_split(model, ds)
    print(CSV_HEADER)
    print(csv_line(ckpt.epoch, args.split, loss, m))
    if m.flagged:
        print(f"classes with an undefined metric (counted as 0): {m.flagged}")
    return 0


def cmd_extract_fuzzy(args) -> int:
    params = _config(args).fuzzy.membership()
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).build_model()
        if not model.uses_fuzzy:
            raise ConfigError("checkpoint model has no fuzzy branch")
        params.weights = tuple(float(w) for w in model.fuzzy_fusion.weights().data)
        params.bias = float(model.fuzzy_fusion.bias.data[0])
    feat = extract_fuzzy(to_grayscale(read_image(args.image)), params)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for name in ("I_mu", "I_sigma", "I_T", "z_fuzzy"):
        write_gray_ppm(out / f"{name}.ppm", getattr(feat, name))
    w = params.weights
    (out / "fuzzy.txt").write_text(
        f"mu = {feat.image_mu!r}\nsigma = {feat.image_sigma!r}\n"
        f"w_mu = {w[0]!r}\nw_sigma = {w[1]!r}\nw_T = {w[2]!r}\nbias = {params.bias!r}\n"
        f"alpha = {params.alpha!r}\nbeta = {params.beta!r}\n"
        f"trapezoid = {params.a!r},{params.b!r},{params.c!r},{params.d!r}\n"
        f"gaussian_mode = {params.gaussian_mode}\n"
    )
    print(f"wrote 4 maps and fuzzy.txt to {out}")
    return 0


def cmd_visualize(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    size = model.config.model.image_size
    x = _load_rgb(args.image, size)
    if args.source == "cam":
        target = args.target
        if target is None:
            target = int(model.predict(x[None])[0])
        emit_cam(model, x, target, args.out, args.granularity)
    else:
        fmap = feature_map(model, x, args.source)
        emit_heatmap(fmap, args.out, args.source, (size, size) if args.upscale else None)
    print(f"wrote {args.out}")
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(args.mutate)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "extract-fuzzy": cmd_extract_fuzzy,
    "visualize": cmd_visualize,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    try:
        args, _ = parse_cli(argv)  # bad keys and unreadable config files count as usage errors
    except (UsageError, ConfigError, OSError) as exc:
        print(f"fmdnn: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (FmdnnError, OSError) as exc:
        print(f"fmdnn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
