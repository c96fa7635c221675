"""Shell spectra of random-weight FNO and DPOT rollouts next to the reference solver.

Writes spectra CSVs, a final-frame spectrum plot and time-frequency maps to --out.
"""
import argparse
from pathlib import Path

import torch

from conscorr.correction import CorrectionSpec
from conscorr.data import ICSampler, SolverConfig, sample_ic, solve
from conscorr.field import Grid2D, Trajectory
from conscorr.models import OperatorConfig, build_operator
from conscorr.spectra import (
    cutoff_shell,
    plot_spectra,
    plot_time_frequency,
    spectrum_matrix,
    spectrum_vs_time,
    write_matrix_csv,
)
from conscorr.training import rollout


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/band_limit")
    ap.add_argument("--modes", type=int, default=8)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--channel", default="tke")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    solver = SolverConfig(grid=Grid2D(64, 64), save_every=10, n_frames=args.steps + 2, frame_dt=0.05)
    truth = solve(solver, sample_ic(ICSampler(seed=0), solver))
    seeds = [truth[0], truth[1]]
    trajs = {"reference": Trajectory(truth.grid, truth.dt, truth.data[1:], "conserved")}
    for arch, extra in (("fno", {}), ("dpot", {"modes": 4, "patch_size": 4})):
        cfg = OperatorConfig(**{"arch": arch, "nx": 64, "ny": 64, "modes": args.modes, "width": 16, "depth": 3, **extra})
        model = build_operator(cfg, seed=0, dtype=torch.float64)
        trajs[arch] = rollout(model, CorrectionSpec(), seeds, args.steps, truth.dt).trajectory
    finals, mats = {}, {}
    for label, traj in trajs.items():
        series = spectrum_vs_time(traj, args.channel)
        write_matrix_csv(series, out / f"{label}_{args.channel}.csv")
        finals[label], mats[label] = series[-1], spectrum_matrix(series)
        print(f"{label:>9}: final-frame cutoff shell {cutoff_shell(series[-1])}")
    plot_spectra(finals, out / "spectrum_final.png", title=f"{args.channel} spectrum after {args.steps} steps")
    plot_time_frequency(mats, out / "time_frequency.png", dt=truth.dt)


if __name__ == "__main__":
    main()
