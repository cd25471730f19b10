"""Command-line entry point: ``chroma-se <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .colormaps import UnknownColormapError
from .dsp import WavError
from .metrics import ExternalScoreError, format_gain_table
from .regnet import RegnetFormatError
from .unet import CheckpointError

log = logging.getLogger("chroma_se")

# errors that map to a one-line message and exit status 2
USER_ERRORS = (pipeline.ManifestError, pipeline.PairingError, WavError, ExternalScoreError, RegnetFormatError,
               CheckpointError, UnknownColormapError, FileNotFoundError, ValueError)


def _manifest(args):
    return pipeline.ExperimentManifest.load(args.manifest)


def run_prepare(args):
    man = pipeline.cmd_prepare(args.corpus, args.out, test_fraction=args.test_fraction)
    counts = {s: len(v["clean"]) for s, v in man.segments.items()}
    print(f"manifest v{man.version} at {man.path}; segments {counts}; "
          f"display range [{man.display_range[0]:.3f}, {man.display_range[1]:.3f}]")


def run_spectrograms(args):
    man = _manifest(args)
    entry = pipeline.cmd_spectrograms(man, args.colormap, workers=args.workers)
    for split, e in entry.items():
        print(f"{split}: {len(e['clean'])} clean / {len(e['noisy'])} noisy images")


def run_train_regnet(args):
    man = _manifest(args)
    path, report = pipeline.cmd_train_regnet(man, args.colormap, n_images=args.n_images, epochs=args.epochs,
                                             seed=args.seed, gray_1input=args.gray_1input)
    print(f"{path}: train MSE {report.train_mse:.4f}, test MSE {report.test_mse:.4f}")


def run_colormap_bench(args):
    man = _manifest(args)
    names = args.colormap.split(",") if args.colormap else None
    rows = pipeline.cmd_colormap_bench(man, names, n_train_images=args.n_images, epochs=args.epochs,
                                       seed=args.seed, include_gray_1input=not args.no_gray_1input,
                                       max_segments=args.max_segments, storage=args.storage, workers=args.workers)
    print(f"{'colormap':<12}{'STOI':>8}{'LSD':>8}{'SNR':>8}")
    for r in rows:
        print(f"{r['colormap']:<12}{r['stoi']:>8.4f}{r['lsd']:>8.3f}{r['snr']:>8.2f}")


def run_train_denoiser(args):
    man = _manifest(args)
    ck, curve = pipeline.cmd_train_denoiser(man, args.config, name=args.colormap, steps=args.steps, seed=args.seed,
                                            scale_divisor=args.scale_divisor, limit=args.limit, resume=args.resume)
    if curve:
        print(f"{ck}: loss {curve[0][1]:.4f} -> {curve[-1][1]:.4f} over {len(curve)} steps")
    else:
        print(f"{ck}: no steps run")


def run_enhance(args):
    man = _manifest(args)
    out = pipeline.cmd_enhance(args.inputs, args.regnet, args.checkpoint, man, args.out,
                               name=args.colormap, tail_policy=args.tail_policy)
    print(f"wrote {len(out)} file(s) to {args.out}")


def run_evaluate(args):
    reports, gains = pipeline.cmd_evaluate(args.clean, args.processed, args.out, unprocessed_dir=args.unprocessed,
                                           external_pesq=args.external_pesq, concatenated=args.concatenated)
    print(f"{len(reports)} clip(s) scored; CSV and figures in {args.out}")
    if gains is not None:
        print(format_gain_table({"processed": gains}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chroma-se", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    def manifest_arg(sp):
        sp.add_argument("--manifest", required=True, help="experiment directory or its manifest.json")

    sp = add("prepare", run_prepare, "resample, segment and index a corpus")
    sp.add_argument("corpus", help="folder with clean/noisy WAV trees")
    sp.add_argument("--out", required=True, help="experiment directory to create")
    sp.add_argument("--test-fraction", type=float, default=0.0,
                    help="hold out this fraction of files when the corpus has no test split")

    sp = add("spectrograms", run_spectrograms, "encode every segment as a colormapped PNG")
    manifest_arg(sp)
    sp.add_argument("--colormap", default="parula")
    sp.add_argument("--workers", type=int, default=1)

    sp = add("train-regnet", run_train_regnet, "fit the pixel-to-LPS regression network")
    manifest_arg(sp)
    sp.add_argument("--colormap", default="parula")
    sp.add_argument("--n-images", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--gray-1input", action="store_true", help="train the single-input gray variant")

    sp = add("colormap-bench", run_colormap_bench, "round-trip benchmark of colormaps with the denoiser bypassed")
    manifest_arg(sp)
    sp.add_argument("--colormap", help="comma-separated names (default: all)")
    sp.add_argument("--n-images", type=int, default=2)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-segments", type=int)
    sp.add_argument("--storage", choices=pipeline.STORAGE_MODES, default="png",
                    help="image storage between encode and decode (jpeg is a lossy comparison mode)")
    sp.add_argument("--no-gray-1input", action="store_true", help="skip the single-input gray regnet row")
    sp.add_argument("--workers", type=int, default=1)

    sp = add("train-denoiser", run_train_denoiser, "train the U-Net on noisy/clean image pairs")
    manifest_arg(sp)
    sp.add_argument("--config", help="JSON file with 'unet' and 'train' sections")
    sp.add_argument("--colormap")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--scale-divisor", type=int)
    sp.add_argument("--limit", type=int, help="use only the first N training pairs")
    sp.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")

    sp = add("enhance", run_enhance, "denoise WAV files through the full chain")
    manifest_arg(sp)
    sp.add_argument("inputs", nargs="+", help="WAV files or folders")
    sp.add_argument("--regnet", required=True)
    sp.add_argument("--checkpoint", help="U-Net checkpoint; omit to bypass the denoiser")
    sp.add_argument("--out", required=True)
    sp.add_argument("--colormap")
    sp.add_argument("--tail-policy", choices=pipeline.TAIL_POLICIES, default="passthrough")

    sp = add("evaluate", run_evaluate, "score processed audio against clean references")
    sp.add_argument("--clean", required=True)
    sp.add_argument("--processed", required=True)
    sp.add_argument("--unprocessed", help="noisy baseline folder for the gain table")
    sp.add_argument("--external-pesq", help="CSV with clip_id,pesq rows")
    sp.add_argument("--concatenated", action="store_true", help="score all clips joined end to end")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except USER_ERRORS as exc:
        print(f"chroma-se {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
