"""Command-line entry point: ``unshadow {train,infer,eval,synth,inspect-masks}``.

Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import images as im

log = logging.getLogger("unshadow")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _epochs(raw: str) -> int:
    n = int(raw)
    if not 1 <= n <= 200:
        raise argparse.ArgumentTypeError("epochs must be between 1 and 200")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS keeps a subcommand from overwriting a global flag given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="random seed (default: config value or 0)")
    common.add_argument("--precision", choices=["single", "double"], default=argparse.SUPPRESS,
                        help="floating point precision for networks (default: single)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=argparse.SUPPRESS,
                        help="logging verbosity (default: INFO)")

    parser = _Parser(prog="unshadow", description="Mask-guided unpaired shadow removal.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train the generators and discriminators")
    p.add_argument("--config", type=Path, help="key=value file with TrainConfig fields")
    p.add_argument("--data-manifest", type=Path, required=True, help="manifest of s/f image lines")
    p.add_argument("--out", type=Path, required=True, help="output directory for checkpoints, log and samples")
    p.add_argument("--epochs", type=_epochs, help="total epochs; schedule split evenly into constant and decay")
    p.add_argument("--crop", type=int, help="square training crop size (multiple of 4)")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.add_argument("--adv-loss", choices=["bce", "lsgan"], help="adversarial loss form")

    p = sub.add_parser("infer", parents=[common], help="remove shadows from images")
    p.add_argument("--ckpt", type=Path, required=True, help="training checkpoint")
    p.add_argument("--input", type=Path, required=True, help="PNG file or directory of PNGs")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("eval", parents=[common], help="LAB RMSE against ground-truth pairs")
    p.add_argument("--ckpt", type=Path, required=True, help="training checkpoint")
    p.add_argument("--pairs", type=Path, required=True, help="pairs manifest: shadow<TAB>truth[<TAB>mask]")
    p.add_argument("--out", type=Path, required=True, help="report directory")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic unpaired dataset")
    p.add_argument("--config", type=Path, help="key=value file with SynthConfig fields")
    p.add_argument("--out", type=Path, required=True, help="dataset directory")

    p = sub.add_parser("inspect-masks", parents=[common], help="show the mask derived from one shadow image")
    p.add_argument("--ckpt", type=Path, required=True, help="training checkpoint")
    p.add_argument("--image", type=Path, required=True, help="shadow image (PNG)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--resynthesize", type=Path, help="mask PNG to cast onto the predicted shadow-free image")
    return parser


GLOBAL_DEFAULTS = {"seed": None, "precision": None, "log_level": "INFO"}


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    # parents share action objects, so set_defaults would also clobber SUPPRESS in the subparsers
    args = build_parser().parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    return args


def _dtype(args) -> torch.dtype:
    return torch.float64 if args.precision == "double" else torch.float32


def cmd_train(args) -> None:
    from .trainer import LoadedDataset, Trainer, TrainConfig, fit, read_config

    data = LoadedDataset(im.read_manifest(args.data_manifest))
    if args.resume:
        trainer = Trainer.load(args.resume)
    else:
        overrides = {"seed": args.seed, "crop_size": args.crop, "adv_loss": args.adv_loss, "precision": args.precision}
        try:
            if args.config:
                cfg = read_config(args.config, **overrides)
            else:
                cfg = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
            if args.epochs:
                cfg = cfg.with_epochs(args.epochs)
        except ValueError as e:
            raise UsageError(str(e)) from e
        torch.manual_seed(cfg.seed)
        trainer = Trainer(cfg, n_shadow=len(data.shadow))
    log.info("training %d shadow / %d shadow-free images, %d epochs, crop %d, %s precision",
             len(data.shadow), len(data.free), trainer.cfg.total_epochs,
             data.crop_size(trainer.cfg.crop_size), trainer.cfg.precision)
    fit(trainer, data, args.out)


def _inputs(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not path.exists():
        raise UsageError(f"no such input: {path}")
    return [path]


def cmd_infer(args) -> None:
    from .evaluation import remove_shadow
    from .trainer import load_generators

    g_f, _ = load_generators(args.ckpt, _dtype(args))
    paths = _inputs(args.input)
    for path in paths:
        pred = remove_shadow(g_f, im.encode_image(im.read_png(path)))
        im.write_png(args.out / path.name, im.decode_image(pred))
    log.info("wrote %d images to %s", len(paths), args.out)


def cmd_eval(args) -> None:
    from .evaluation import evaluate_checkpoint

    summary = evaluate_checkpoint(args.ckpt, args.pairs, args.out, _dtype(args))
    print(
        f"images={summary['count']} skipped={summary['skipped']} masks={summary['mask_source']} "
        f"rmse_all={summary['rmse_all']:.4f} rmse_shadow={summary['rmse_shadow']:.4f} "
        f"rmse_nonshadow={summary['rmse_nonshadow']:.4f} "
        f"(input baseline {summary['baseline_all']:.4f}/{summary['baseline_shadow']:.4f}/"
        f"{summary['baseline_nonshadow']:.4f})"
    )


def cmd_synth(args) -> None:
    from .synth import SynthConfig, read_synth_config, synth_dataset

    try:
        cfg = read_synth_config(args.config, seed=args.seed) if args.config else SynthConfig(seed=args.seed or 0)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from e
    synth_dataset(cfg, args.out)


@torch.no_grad()
def cmd_inspect_masks(args) -> None:
    from .masks import make_mask
    from .networks import generate_shadow, to_array, to_tensor
    from .trainer import load_generators

    dtype = _dtype(args)
    g_f, g_s = load_generators(args.ckpt, dtype)
    shadow = im.load_image(args.image)
    free = to_array(g_f(to_tensor(shadow, dtype)))
    mask = make_mask(shadow, free)
    args.out.mkdir(parents=True, exist_ok=True)
    im.write_mask_png(args.out / "mask.png", mask)
    tiles = [im.decode_image(shadow), im.decode_image(free), np.repeat(mask[..., None] * np.uint8(255), 3, axis=-1)]
    im.write_png(args.out / "grid.png", np.concatenate(tiles, axis=1))
    if args.resynthesize:
        other = im.read_mask_png(args.resynthesize)
        if other.shape != mask.shape:
            raise UsageError(f"mask is {other.shape[1]}x{other.shape[0]}, image is {mask.shape[1]}x{mask.shape[0]}")
        out = to_array(generate_shadow(g_s, to_tensor(free, dtype), torch.from_numpy(other)[None, None]))
        im.write_png(args.out / "resynth.png", im.decode_image(out))
        gap = float(np.abs(out - free).mean())
        log.info("resynthesis L1 gap to shadow-free prediction: %.5f", gap)
        (args.out / "resynth.json").write_text(json.dumps({"l1_gap": gap}) + "\n")


COMMANDS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "inspect-masks": cmd_inspect_masks,
}


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        torch.manual_seed(args.seed)
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.error("%s failed: %s", args.command, e)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
