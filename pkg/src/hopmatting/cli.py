"""Command-line entry point: ``hopmatting <command> [flags]``.

Exit codes: 0 success, 1 check failed, 2 usage error, 3 missing file,
4 malformed image, 5 bad config, 6 invalid data, 7 bad checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment, imageio, metrics, viz
from .autodiff.serialize import FormatError
from .net import ConfigError, build, load_config, load_model, predict, save_model, train
from .net.config import format_config
from .net.model import EmptyUnknownRegionError
from .net.train import TrainingError, write_curve

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_IMAGE, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = range(8)
PNG_SUFFIX = ".png"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def thread_cap() -> int:
    raw = os.environ.get("HOP_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"HOP_THREADS must be a positive integer, got {raw!r}", EXIT_USAGE) from None
    if n < 1:
        raise CliError(f"HOP_THREADS must be a positive integer, got {raw!r}", EXIT_USAGE)
    return n


def _pmap(fn, items):
    workers = thread_cap()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _png_names(directory, what: str) -> list[str]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{what} directory not found: {d}", EXIT_MISSING)
    names = sorted(p.name for p in d.iterdir() if p.suffix.lower() == PNG_SUFFIX)
    if not names:
        raise CliError(f"{what} directory has no PNG files: {d}", EXIT_MISSING)
    return names


def _parse_pixel(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pixel must be 'row,col', got {text!r}") from None
    return r, c


def _parse_methods(text: str) -> list[augment.InterpMethod]:
    try:
        return [augment.InterpMethod.parse(m) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.report.passed else "FAIL"
        print(f"{r.name:<{width}}  worst_rel_err={r.report.max_rel_error:.3e}  {status}")
    failed = [r.name for r in results if not r.report.passed]
    if failed:
        print(f"gradcheck: {len(failed)} of {len(results)} checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"gradcheck: all {len(results)} checks passed")
    return EXIT_OK


def cmd_train(args) -> int:
    if not Path(args.config).is_file():
        raise CliError(f"config file not found: {args.config}", EXIT_MISSING)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.network.seed = args.seed
    seed = cfg.network.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = augment.synth_dataset(cfg.data.samples, cfg.data.sample_size, cfg.data.data_seed, workers=thread_cap())
    model = build(cfg.network, np.random.default_rng([seed, 0]))
    model, curve = train(model, data, cfg.schedule, np.random.default_rng([seed, 1]))
    save_model(model, out / "model.hop")
    write_curve(curve, out / "loss.csv")
    (out / "config.txt").write_text(format_config(cfg))
    if curve:
        print(f"trained {len(curve)} steps; final loss {curve[-1].loss:.5f}; wrote {out / 'model.hop'}")
    else:
        print(f"no training steps; wrote {out / 'model.hop'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_checkpoint(args.model)
    names = _png_names(args.images, "images")
    for d, what in ((args.trimaps, "trimap"), (args.gt, "ground-truth")):
        for n in names:
            if not (Path(d) / n).is_file():
                raise CliError(f"missing {what} for {n}: {Path(d) / n}", EXIT_MISSING)

    def one(name):
        img = imageio.read_rgb(Path(args.images) / name)
        tri = imageio.read_trimap(Path(args.trimaps) / name)
        gt = imageio.read_alpha(Path(args.gt) / name)
        if img.shape[:2] != tri.shape or tri.shape != gt.shape:
            raise CliError(f"{name}: image {img.shape[:2]}, trimap {tri.shape}, gt {gt.shape} sizes differ", EXIT_DATA)
        pred = predict(model, img, tri)
        return Path(name).stem, metrics.evaluate(pred, gt, tri)

    rows = _pmap(one, names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = metrics.write_reports(rows, out / "metrics.csv", out / "summary.json")
    mean = summary["mean"]
    print(f"{summary['count']} images  SAD {mean['sad']:.4f}  MSE {mean['mse']:.4f}  "
          f"Grad {mean['grad']:.4f}  Conn {mean['conn']:.4f}")
    return EXIT_OK


def _roundtrip_inputs(args):
    if args.images is not None:
        names = _png_names(args.images, "images")
        alphas = [(Path(n).stem, imageio.read_alpha(Path(args.images) / n)) for n in names]
        if args.trimaps is None:
            return [(i, a, np.ones(a.shape, dtype=bool)) for i, a in alphas]
        out = []
        for (i, a), n in zip(alphas, names):
            p = Path(args.trimaps) / n
            if not p.is_file():
                raise CliError(f"missing trimap for {n}: {p}", EXIT_MISSING)
            out.append((i, a, metrics.unknown_mask(imageio.read_trimap(p))))
        return out
    rng = np.random.default_rng(args.seed)
    return [
        (f"synth{i:04d}", augment.synth_alpha(rng, args.size, args.sigma), np.ones((args.size, args.size), dtype=bool))
        for i in range(args.synthetic)
    ]


def cmd_roundtrip(args) -> int:
    if args.factor <= 1.0:
        raise CliError(f"--factor must exceed 1, got {args.factor}", EXIT_USAGE)
    items = _roundtrip_inputs(args)
    table = {}
    for m in args.methods:
        errs = []
        for _, alpha, mask in items:
            back = augment.roundtrip(alpha, args.factor, m)
            errs.append(metrics.sad(back, alpha, mask))
        table[m.value] = errs
    print(f"{'method':<10}{'mean SAD':>12}{'n':>6}")
    for m, errs in table.items():
        print(f"{m:<10}{np.mean(errs):>12.6f}{len(errs):>6}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id"] + list(table))
            for k, (image_id, _, _) in enumerate(items):
                w.writerow([image_id] + [repr(float(table[m][k])) for m in table])
    return EXIT_OK


def cmd_composite(args) -> int:
    fg = imageio.read_rgb(args.fg)
    bg = imageio.read_rgb(args.bg)
    alpha = imageio.read_alpha(args.alpha)
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise CliError(f"size mismatch: fg {fg.shape[:2]}, bg {bg.shape[:2]}, alpha {alpha.shape}", EXIT_DATA)
    imageio.write_rgb(args.out, augment.composite(fg, bg, alpha))
    return EXIT_OK


def cmd_visualize(args) -> int:
    model = _load_checkpoint(args.model)
    img = imageio.read_rgb(args.image)
    tri = imageio.read_trimap(args.trimap)
    if img.shape[:2] != tri.shape:
        raise CliError(f"image {img.shape[:2]} and trimap {tri.shape} sizes differ", EXIT_DATA)
    gmap = viz.attention_gradient_map(model, img, tri, args.pixel, np.random.default_rng(args.seed))
    viz.render(gmap, args.out)
    if args.raw:
        viz.dump_raw(gmap, args.raw)
    print(f"pixel {gmap.pixel[0]},{gmap.pixel[1]}  max saliency {gmap.values.max():.4g}  wrote {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 1:
        raise CliError(f"--n must be positive, got {args.n}", EXIT_USAGE)
    if args.size < 16:
        raise CliError(f"--size must be at least 16, got {args.size}", EXIT_USAGE)
    samples = augment.synth_dataset(args.n, args.size, args.seed, workers=thread_cap())
    out = Path(args.out)
    for i, s in enumerate(samples):
        name = f"{i:04d}.png"
        imageio.write_rgb(out / "image" / name, s.composite)
        imageio.write_rgb(out / "fg" / name, s.foreground)
        imageio.write_rgb(out / "bg" / name, s.background)
        imageio.write_alpha(out / "alpha" / name, s.alpha, bits=args.alpha_bits)
        imageio.write_trimap(out / "trimap" / name, s.trimap)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def _load_checkpoint(path):
    if not Path(path).is_file():
        raise CliError(f"checkpoint not found: {path}", EXIT_MISSING)
    try:
        return load_model(path)
    except (FormatError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"bad checkpoint {path}: {exc}", EXIT_CHECKPOINT) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hopmatting", description="HOP matting toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="toy training on synthetic samples")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a checkpoint on a PNG dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--images", required=True)
    e.add_argument("--trimaps", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", default=".")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("roundtrip", help="resize round-trip error per interpolation method")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--images", help="directory of alpha PNGs")
    src.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic smooth alphas")
    r.add_argument("--trimaps", help="restrict SAD to the unknown region of matching trimaps")
    r.add_argument("--factor", type=float, default=1.5)
    r.add_argument("--methods", type=_parse_methods, default=list(augment.ALL_METHODS))
    r.add_argument("--size", type=int, default=64)
    r.add_argument("--sigma", type=float, default=2.0)
    r.add_argument("--out", help="per-image CSV")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_roundtrip)

    c = sub.add_parser("composite", help="I = alpha F + (1 - alpha) B")
    c.add_argument("--fg", required=True)
    c.add_argument("--bg", required=True)
    c.add_argument("--alpha", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_composite)

    v = sub.add_parser("visualize", help="input-gradient map for one unknown pixel")
    v.add_argument("--model", required=True)
    v.add_argument("--image", required=True)
    v.add_argument("--trimap", required=True)
    v.add_argument("--pixel", type=_parse_pixel, default=None, help="row,col; random unknown pixel if omitted")
    v.add_argument("--out", required=True)
    v.add_argument("--raw", help="also dump the raw map as a tensor file")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_visualize)

    s = sub.add_parser("synth", help="write synthetic matting samples as PNGs")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha-bits", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        msg, code = str(exc), exc.code
    except FileNotFoundError as exc:
        msg, code = f"file not found: {exc.filename or exc}", EXIT_MISSING
    except imageio.ImageFormatError as exc:
        msg, code = f"malformed image: {exc}", EXIT_IMAGE
    except ConfigError as exc:
        msg, code = f"config error: {exc}", EXIT_CONFIG
    except (viz.PixelSelectionError, metrics.DegenerateInputError, EmptyUnknownRegionError) as exc:
        msg, code = f"invalid input: {exc}", EXIT_DATA
    except TrainingError as exc:
        msg, code = f"training failed: {exc}", EXIT_FAIL
    print(f"hopmatting {args.command}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
