"""Command-line entry point: ``conscorr {gen-data,train,eval,rollout,spectra}``.

Progress goes to stderr; results only to files under ``--out``.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from .config import ConfigError, RunConfig, load_config, write_resolved
from .correction import CorrectionSpec, conservation_drift, write_drift_csv
from .data import SolverError, generate_dataset, load_dataset, load_pdebench, save_dataset, split
from .field import InvalidFieldError, Trajectory, TrajectoryFormatError
from .metrics import EmptyReportError, summarize, write_report, write_sample_csv
from .models import OperatorConfigError, build_operator, load_checkpoint, save_checkpoint
from .training import NumericalDivergenceError, evaluate, rollout, train, write_history_csv
from . import spectra as sp

logger = logging.getLogger("conscorr")

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4


class DataError(RuntimeError):
    pass


def _setup(cfg: RunConfig):
    torch.manual_seed(cfg.seed)
    if cfg.device == "auto" and torch.cuda.is_available():
        logger.info("cuda available; running on cpu for bitwise reproducibility of CSV outputs")


def _dtype(cfg):
    return torch.float32 if cfg.precision == "single" else torch.float64


def _load_data(cfg: RunConfig, path):
    if path is None:
        raise ConfigError("--data is required")
    path = Path(path)
    if not path.exists():
        raise DataError(f"data path not found: {path}")
    if cfg.data.format == "pdebench":
        rng = tuple(cfg.data.sample_range) if cfg.data.sample_range else None
        return load_pdebench(path, rng, cfg.data.downsample_to)
    return load_dataset(path)


def _select(cfg: RunConfig, trajs, which):
    if which == "all":
        return trajs
    parts = dict(zip(("train", "val", "test"), split(trajs, cfg.data.split, cfg.seed)))
    chosen = parts[which]
    if not chosen:
        raise DataError(f"the {which!r} split is empty ({len(trajs)} samples, fractions {cfg.data.split})")
    return chosen


def _spec(cfg: RunConfig, uncorrected: bool) -> CorrectionSpec:
    return CorrectionSpec.disabled() if uncorrected else cfg.correction.build()


def cmd_gen_data(cfg: RunConfig, args):
    out = Path(args.out)
    solver = cfg.solver.build()
    trajs = generate_dataset(solver, cfg.data.n_samples, seed=cfg.seed, workers=cfg.data.workers,
                             sampler_kw=dict(vars(cfg.ic)))
    save_dataset(trajs, out, precision="double", meta={"seed": cfg.seed, "solver": solver.to_dict(),
                                                     "provenance": "self-generated reference solver"})
    write_resolved(cfg, out)
    return out


def cmd_train(cfg: RunConfig, args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajs = _select(cfg, _load_data(cfg, args.data), "train")
    op_cfg = cfg.operator.build(trajs[0].grid)
    tcfg = cfg.training.build(cfg.seed, cfg.precision)
    model = build_operator(op_cfg, seed=cfg.seed, dtype=_dtype(cfg))
    spec = _spec(cfg, args.uncorrected)
    write_resolved(cfg, out)
    model, history = train(model, trajs, tcfg, spec, log_path=out / "metrics_log.csv",
                           checkpoint_dir=out / "checkpoints")
    write_history_csv(history, out / "metrics_log.csv")
    save_checkpoint(model, out / "model.npz", {"correction": spec.to_dict(), "epochs": tcfg.epochs})
    return out


def _model(args):
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    path = Path(args.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    model, _ = load_checkpoint(path)
    return model


def cmd_eval(cfg: RunConfig, args):
    out = Path(args.out)
    horizon = args.horizon or cfg.metrics.horizon
    trajs = _select(cfg, _load_data(cfg, args.data), cfg.metrics.split)
    model = _model(args)
    spec = _spec(cfg, args.uncorrected)
    results = evaluate(model, spec, trajs, cfg.metrics.seed_time, horizon, cfg.metrics.threshold)
    report = summarize(results, cfg.metrics.horizons, cfg.metrics.threshold)
    write_resolved(cfg, out)
    write_report(report, out)
    write_sample_csv(results, out / "samples.csv")
    return out


def cmd_rollout(cfg: RunConfig, args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajs = _select(cfg, _load_data(cfg, args.data), cfg.metrics.split)
    if not 0 <= args.sample < len(trajs):
        raise DataError(f"sample {args.sample} out of range (0..{len(trajs) - 1})")
    traj = trajs[args.sample].to_conserved()
    model = _model(args)
    spec = _spec(cfg, args.uncorrected)
    h = model.config.history
    t0 = cfg.metrics.seed_time
    horizon = args.horizon or min(cfg.metrics.horizon, len(traj) - 1 - t0)
    if t0 - h + 1 < 0 or t0 + horizon >= len(traj):
        raise DataError(f"trajectory of {len(traj)} frames cannot seed at {t0} for {horizon} steps")
    res = rollout(model, spec, [traj[t] for t in range(t0 - h + 1, t0 + 1)], horizon, traj.dt)
    pred = Trajectory(traj.grid, traj.dt, res.trajectory.data[h - 1:], "conserved", {"generator": "rollout", "seed_time": t0})
    truth = Trajectory(traj.grid, traj.dt, traj.data[t0:t0 + len(pred)], "conserved", {"generator": "reference", "seed_time": t0})
    write_resolved(cfg, out)
    pred.save(out / "pred")
    truth.save(out / "truth")
    write_drift_csv(conservation_drift(pred), out / "drift.csv")
    results = evaluate(model, spec, [traj], t0, horizon, cfg.metrics.threshold)
    write_sample_csv(results, out / "error_vs_time.csv")
    _final_frame_png(pred, truth, results[0], out / "final_frame.png")
    if res.diverged_at is not None:
        raise NumericalDivergenceError(f"rollout diverged at step {res.diverged_at}; partial outputs written to {out}")
    return out


def _final_frame_png(pred: Trajectory, truth: Trajectory, result, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    p, t = pred.to_primitive().data[-1], truth.to_primitive().data[-1]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.8))
    lo, hi = t[0].min(), t[0].max()
    axes[0].imshow(t[0].T, origin="lower", vmin=lo, vmax=hi)
    axes[0].set_title("reference rho")
    axes[1].imshow(p[0].T, origin="lower", vmin=lo, vmax=hi)
    r = result.correlations["rho"][-1]
    axes[1].set_title(f"predicted rho, r={r:.3f}")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_spectra(cfg: RunConfig, args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    channel = args.channel or cfg.spectra.channel
    if not args.traj:
        raise ConfigError("at least one --traj is required")
    trajs = {}
    for p in args.traj:
        p = Path(p)
        if not p.exists():
            raise DataError(f"trajectory not found: {p}")
        label = p.name if p.name not in trajs else str(p)
        trajs[label] = Trajectory.load(p)
    finals, mats = {}, {}
    for label, traj in trajs.items():
        series = sp.spectrum_vs_time(traj, channel)
        sp.write_matrix_csv(series, out / f"{label}_{channel}_spectrum.csv")
        finals[label] = series[-1]
        mats[label] = sp.spectrum_matrix(series)
    if args.truth:
        truth = Trajectory.load(args.truth)
        for label, traj in trajs.items():
            rep = sp.spectral_cutoff_report(traj, truth, channel, cfg.spectra.fraction)
            sp.write_cutoff_csv(rep, out / f"{label}_{channel}_cutoff.csv")
        finals["reference"] = sp.spectrum_vs_time(truth, channel)[-1]
    write_resolved(cfg, out)
    first = next(iter(trajs.values()))
    sp.plot_spectra(finals, out / f"{channel}_spectrum_final.png", title=f"{channel} shell spectrum, final frame")
    sp.plot_time_frequency(mats, out / f"{channel}_time_frequency.png", dt=first.dt)
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "rollout": cmd_rollout,
    "spectra": cmd_spectra,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="conscorr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--precision", choices=["single", "double"])
        p.add_argument("--device", choices=["auto", "cpu"])
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "eval", "rollout"):
            p.add_argument("--data", type=Path)
            p.add_argument("--uncorrected", action="store_true", help="disable conservation correction")
        if name in ("eval", "rollout"):
            p.add_argument("--checkpoint", type=Path)
            p.add_argument("--horizon", type=int)
        if name == "rollout":
            p.add_argument("--sample", type=int, default=0)
        if name == "spectra":
            p.add_argument("--traj", type=Path, action="append")
            p.add_argument("--truth", type=Path)
            p.add_argument("--channel", choices=["tke", "rho", "p", "u_x", "u_y"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "precision": args.precision, "device": args.device})
        _setup(cfg)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, OperatorConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TrajectoryFormatError, InvalidFieldError, EmptyReportError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalDivergenceError, SolverError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())
