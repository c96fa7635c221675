"""Long corrected and uncorrected rollouts of a trained checkpoint: error growth and correlation decay.

Usage: python scripts/long_rollout.py --checkpoint run/model.npz --data data --horizon 50 --out runs/long
"""
import argparse
import json
from pathlib import Path

from conscorr.correction import CorrectionSpec
from conscorr.data import load_dataset
from conscorr.metrics import summarize, write_report
from conscorr.models import load_checkpoint
from conscorr.training import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--horizon", type=int, default=50)
    ap.add_argument("--seed-time", type=int, default=1)
    ap.add_argument("--samples", type=int, default=0, help="0 = all")
    args = ap.parse_args()
    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if args.samples:
        data = data[: args.samples]
    horizon = min(args.horizon, len(data[0]) - 1 - args.seed_time)
    summary = {}
    for label, spec in (("corrected", CorrectionSpec()), ("uncorrected", CorrectionSpec.disabled())):
        rep = summarize(evaluate(model, spec, data, args.seed_time, horizon), (1, 10, horizon))
        write_report(rep, Path(args.out), prefix=f"{label}_")
        summary[label] = {
            "avg_error": rep.avg_error,
            "error_growth_per_step": rep.error_growth_per_step,
            "corr_duration": rep.mean_correlation_duration,
        }
    print(json.dumps({"horizon": horizon, **summary}, indent=2))


if __name__ == "__main__":
    main()
