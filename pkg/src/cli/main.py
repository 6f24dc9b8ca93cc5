"""
duet: command-line entry point.

    duet synth           --out runs/toy/train.duet
    duet train-vae       --data runs/toy/train.duet --out runs/toy/vae.ckpt
    duet train-denoiser  --data runs/toy/train.duet --vae runs/toy/vae.ckpt --out runs/toy/denoiser.ckpt
    duet sample          --vae ... --denoiser ... --text "two people reach out and touch hands" --count 4
    duet eval            --reference runs/toy/train.duet --generated runs/toy/samples.duet
    duet plot            --data runs/toy/samples.duet

Every verb accepts --profile, --config (JSON overrides) and --set section.key=value,
applied in that order. Relative output paths resolve against $DUET_OUTPUT_ROOT
when it is set.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from src.cli import commands
from src.core.config import OUTPUT_ROOT_ENV, RunConfig, default_output_root, load_run_config
from src.core.errors import ConfigError, MotionPipelineError

logger = logging.getLogger(__name__)


def parse_overrides(items: List[str]) -> Dict[str, Dict]:
    """
    Turn ["dhvae.latent_dim=32", ...] into {"dhvae": {"latent_dim": 32}}.

    Values are parsed as JSON when possible, else kept as strings.

    Examples:
        >>> parse_overrides(["training.seed=3", "dataset.skeleton=amass22"])
        {'training': {'seed': 3}, 'dataset': {'skeleton': 'amass22'}}
    """
    overrides: Dict[str, Dict] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"Override must look like section.key=value, got '{item}'")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides.setdefault(section, {})[name] = value
    return overrides


def output_path(path: Optional[str], default_name: str) -> Path:
    """Relative paths live under the output root when $DUET_OUTPUT_ROOT is set."""
    resolved = Path(path) if path else default_output_root() / default_name
    if not resolved.is_absolute() and path and os.environ.get(OUTPUT_ROOT_ENV):
        resolved = default_output_root() / resolved
    return resolved


def build_config(args: argparse.Namespace) -> RunConfig:
    overrides = parse_overrides(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("training", {})["seed"] = args.seed
    return load_run_config(args.profile, args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duet", description="Two-person motion latent diffusion at desk scale"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", default="toy", help="Profile in config/run_profiles.json")
    common.add_argument("--config", type=Path, help="JSON file of {section: {key: value}} overrides")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Single override")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic dataset")
    p.add_argument("--out", help="Dataset file (default: train.duet)")

    p = sub.add_parser("train-vae", parents=[common], help="Train the DHVAE")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", help="Checkpoint file (default: vae.ckpt)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train-denoiser", parents=[common], help="Train the latent denoiser")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--out", help="Checkpoint file (default: denoiser.ckpt)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sample", parents=[common], help="Generate clips from text")
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--denoiser", type=Path, required=True)
    p.add_argument("--text", action="append", required=True, help="Caption (repeatable)")
    p.add_argument("--count", type=int, default=1, help="Clips per caption")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cfg-scale", type=float, help="Guidance scale (default from checkpoint)")
    p.add_argument("--steps", type=int, help="DDIM steps (default from checkpoint)")
    p.add_argument("--frames", type=int, help="Clip length (default: training frame_max)")
    p.add_argument("--out", help="Sample file (default: samples.duet)")
    p.add_argument("--plot", type=Path, metavar="DIR", help="Write one figure per clip")

    p = sub.add_parser("eval", parents=[common], help="Metrics of generated clips")
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--generated", type=Path)
    p.add_argument("--sweep", type=Path, metavar="DIR", help="Directory of sample files at several scales")
    p.add_argument("--fidelity", action="store_true", help="Only feature-space metrics")
    p.add_argument("--physics", action="store_true", help="Only penetration/contact metrics")
    p.add_argument("--vae", type=Path, help="Also report latent statistics of the generated clips")
    p.add_argument("--out", help="JSON report (default: eval.json)")

    p = sub.add_parser("plot", parents=[common], help="Figures for a dataset file or checkpoint")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--limit", type=int, default=4)
    p.add_argument("--out", help="Output directory (default: plots)")

    return parser


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    logger.debug("%r", config)

    if args.command == "synth":
        commands.cmd_synth(config, output_path(args.out, "train.duet"))
    elif args.command == "train-vae":
        commands.cmd_train_vae(config, args.data, output_path(args.out, "vae.ckpt"), args.progress)
    elif args.command == "train-denoiser":
        commands.cmd_train_denoiser(
            config, args.data, args.vae, output_path(args.out, "denoiser.ckpt"), args.progress
        )
    elif args.command == "sample":
        commands.cmd_sample(
            args.vae, args.denoiser, args.text, output_path(args.out, "samples.duet"),
            count=args.count, seed=args.seed, cfg_scale=args.cfg_scale, steps=args.steps,
            frames=args.frames, plot_dir=args.plot, progress=args.progress,
        )
    elif args.command == "eval":
        both = not (args.fidelity or args.physics)
        commands.cmd_eval(
            config, args.reference, output_path(args.out, "eval.json"),
            generated_path=args.generated, fidelity=args.fidelity or both,
            physics=args.physics or both, sweep_dir=args.sweep, vae_path=args.vae,
            progress=args.progress,
        )
    elif args.command == "plot":
        commands.cmd_plot(config, output_path(args.out, "plots"), args.data, args.checkpoint, args.limit)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except (MotionPipelineError, KeyError, ValueError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
