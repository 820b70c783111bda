#!/usr/bin/env python3
"""
Measure how much a related source task speeds up GSMo training

Trains a GSMo donor on the source config, then trains the target task from
scratch and from the donor's backbone over several seeds, and reports the
median number of epochs each needs to reach a validation both-F1 threshold.

Usage:
    python scripts/transfer_study.py --source source.json --target target.json
    python scripts/transfer_study.py --source source.json --target target.json --seeds 5 --threshold 0.9
    python scripts/transfer_study.py --source source.json --target target.json --groups backbone plant_branch
"""

import argparse
import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from core.errors import GsmoError
from core.experiments import transfer_study
from core.schemas import load_config
from model.network import PARAMETER_GROUPS
from storage.reports import write_json
from utils.logger import get_logger

logger = get_logger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Fresh vs checkpoint-initialised GSMo training")
    parser.add_argument("--source", required=True, help="Experiment config of the source task")
    parser.add_argument("--target", required=True, help="Experiment config of the target task")
    parser.add_argument("--seeds", type=int, default=5, help="Seeds per arm (default: 5)")
    parser.add_argument(
        "--threshold",
        type=float,
        default=0.9,
        help="Validation both-F1 to reach (default: 0.9)"
    )
    parser.add_argument(
        "--groups",
        nargs="+",
        default=["backbone"],
        choices=PARAMETER_GROUPS,
        help="Parameter groups copied from the donor (default: backbone)"
    )
    parser.add_argument("--out", default=None, help="Output directory (default: the target config's)")

    args = parser.parse_args()

    try:
        source = load_config(Path(args.source))
        target = load_config(Path(args.target))
        output_dir = Path(args.out or target.output_dir)

        print("=" * 70)
        print("  TRANSFER STUDY")
        print("=" * 70)
        print(f"Source:    {args.source}")
        print(f"Target:    {args.target}")
        print(f"Seeds:     {args.seeds}")
        print(f"Threshold: {args.threshold}")
        print(f"Groups:    {', '.join(args.groups)}")
        print("=" * 70)

        study = transfer_study(
            source, target,
            seeds=args.seeds,
            threshold=args.threshold,
            groups=tuple(args.groups),
            output_dir=output_dir,
        )
        path = write_json(study.to_dict(), output_dir / "transfer_study.json")

        print()
        print(f"Fresh epochs:    {study.fresh}")
        print(f"Transfer epochs: {study.transfer}")
        print(f"Median fresh:    {study.fresh_median:g}")
        print(f"Median transfer: {study.transfer_median:g}")
        print(f"Ratio:           {study.ratio:.2f} (limit {study.regression_limit:g})")
        print()
        print(("✅ within limit" if study.within_limit else "❌ slower than the limit") + f"; report in {path}")
        sys.exit(0 if study.within_limit else 1)

    except GsmoError as e:
        logger.error(f"Transfer study failed: {e}")
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
