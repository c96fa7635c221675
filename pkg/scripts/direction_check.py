"""Corrected vs uncorrected small FNO on a self-generated 64x64 Mach-0.1 dataset.

Usage: python scripts/direction_check.py --out runs/direction [--seeds 0 1 2 3 4] [--epochs 20]
"""
import argparse
import json
import logging
import sys

import torch

from conscorr.experiments import DirectionCheckConfig, direction_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=20)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    cfg = DirectionCheckConfig(seeds=args.seeds, epochs=args.epochs, horizon=args.horizon)
    out = direction_check(cfg, out_dir=args.out)
    print(json.dumps({k: v for k, v in out.items() if k != "config"}, indent=2))


if __name__ == "__main__":
    main()
