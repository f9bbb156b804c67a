"""
🗜️ glc-codec command line
Train models, compress and decompress images, and run evaluations.

Usage:
    python -m src.main train --data DIR --out model.gtns --config run.json
    python -m src.main compress --in image.png --model model.gtns --out image.glc
    python -m src.main decompress --in image.glc --model model.gtns --out image.png
    python -m src.main eval --data DIR --model model.gtns --report report.csv
    python -m src.main entropy-baseline --data DIR
    python -m src.main inspect --in image.png --model model.gtns --out DIR
    python -m src.main sweep --spec sweep.json --report sweep.csv
"""

import argparse
import logging
import sys
from dataclasses import replace

from .codec import Codec, compress, decompress
from .config import TrainConfig, desk_profile, desk_train_profile, full_profile, load_run_config
from .evaluation import dataset_entropy, eval_bpsp, sweep
from .exceptions import CodecError
from .inspector import inspect
from .log_setup import setup_logging
from .preproc import read_image
from .trainer import train

logger = logging.getLogger(__name__)

PROFILES = {"desk": (desk_profile, desk_train_profile), "full": (full_profile, TrainConfig)}


def cmd_train(args):
    if args.config:
        model_config, train_config = load_run_config(args.config)
    else:
        model_profile, train_profile = PROFILES[args.profile]
        model_config, train_config = model_profile(), train_profile()
    if args.seed is not None:
        model_config = replace(model_config, seed=args.seed).validate()
        train_config = replace(train_config, seed=args.seed).validate()
    fingerprint = train(args.data, args.out, model_config, train_config)
    print(f"✅ Checkpoint {args.out} ({fingerprint.hex()[:16]})")


def cmd_compress(args):
    stats = compress(args.input, args.model, args.out, verify=args.verify)
    print(f"✅ {args.out}: {stats.total_bits // 8} bytes, {stats.bpsp:.4f} bpsp")
    for name, value in stats.component_bpsp().items():
        print(f"   {name:<12} {value:.4f}")


def cmd_decompress(args):
    img = decompress(args.input, args.model, args.out)
    print(f"✅ {args.out}: {img.width}x{img.height}")


def cmd_eval(args):
    report = eval_bpsp(args.data, Codec.from_checkpoint(args.model), workers=args.workers)
    if args.report:
        report.to_csv(args.report)
    print("📊 EVALUATION")
    print(report.mean().to_string())
    if report.failures:
        print(f"⚠️ {len(report.failures)} image(s) failed")
    return 1 if report.failures else 0


def cmd_entropy_baseline(args):
    frame = dataset_entropy(args.data)
    print(frame.to_string(index=False))
    if len(frame):
        print(f"📊 Mean first-order entropy: {frame['bpsp'].mean():.4f} bpsp")


def cmd_inspect(args):
    outputs = inspect(read_image(args.input), Codec.from_checkpoint(args.model), args.out)
    for name, paths in outputs.items():
        print(f"💾 {name}: {paths}")


def cmd_sweep(args):
    frame = sweep(args.spec, report_path=args.report, work_dir=args.work_dir)
    print(frame.to_string(index=False))


def build_parser():
    parser = argparse.ArgumentParser(prog="glc", description="Learned lossless image codec")
    parser.add_argument("--log-level", help="Overrides $GLC_LOG_LEVEL")
    parser.add_argument("--log-file", help="Also write JSON log lines to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a model on a directory of images")
    p.add_argument("--data", required=True, help="Directory of PNG/PPM images")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--config", help='JSON file with "model" and "train" sections')
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk", help="Used when --config is absent")
    p.add_argument("--seed", type=int, help="Overrides both config seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="Compress one image to .glc")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true", help="Decode the result and compare")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="Restore an image from .glc")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="Compress every image for real and report bpsp")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", help="CSV output")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("entropy-baseline", help="First-order entropy of the residuals")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_entropy_baseline)

    p = sub.add_parser("inspect", help="Dump cluster map and shared-latent images")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("sweep", help="Train and evaluate a list of configurations")
    p.add_argument("--spec", required=True)
    p.add_argument("--report", help="CSV output")
    p.add_argument("--work-dir", help="Where run checkpoints go")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    """Main entry point; returns a process exit code"""
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level, log_file=args.log_file)
    try:
        return args.func(args) or 0
    except CodecError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("⏹️ Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
