"""Command-line front end.

Subcommands:

* ``run <config>``      closed-loop experiment -> trajectory CSV + metrics JSON
* ``samples <config>``  posterior samples conditioned on the endpoints -> CSV
* ``algebra <config>``  textual dump of the operator matrix, its Smith form,
                        the nullspace columns, and the kernel entries

Exit codes: 0 success, 1 config-class errors (parse/validation, infeasible
reference, non-controllable system), 2 numerical failures (factorization,
divergence).  The environment variable LODEMPC_OUTPUT_DIR overrides the
configured output directory.  Output files are bit-identical across repeated
runs of the same config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .controller import (
    PlantDivergenceError,
    initial_dataset,
    run_closed_loop,
)
from .gpcore import (
    DataPoint,
    Dataset,
    DatasetError,
    FactorizationError,
    PosteriorGp,
    optimize_hyperparams,
)
from .kernelops import Hyperparams
from .lodegp import (
    InfeasibleReferenceError,
    NonControllableSystemError,
    build_h,
    build_prior,
)
from .plant import Plant
from .polyalg import smith_normal_form, right_nullspace_columns

ENV_OUTPUT_DIR = "LODEMPC_OUTPUT_DIR"


def _fmt(x) -> str:
    return repr(float(x))


def _output_dir(cfg: ExperimentConfig) -> Path:
    override = os.environ.get(ENV_OUTPUT_DIR)
    out = Path(override) if override else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_hyperparams(prior, cfg: ExperimentConfig, dataset) -> Hyperparams:
    fixed = cfg.hp_fixed or {}
    if {"signal_variance", "lengthscale_sq"} <= set(fixed):
        return Hyperparams(
            signal_variance=fixed["signal_variance"],
            lengthscale_sq=fixed["lengthscale_sq"],
            jitter=cfg.jitter,
        )
    return optimize_hyperparams(
        prior, dataset, bounds=cfg.hp_bounds, fixed=fixed or None, jitter=cfg.jitter
    )


def _write_trajectory_csv(path: Path, traj, n_x: int, n_u: int) -> None:
    cols = (
        ["t"]
        + [f"x{i + 1}" for i in range(n_x)]
        + [f"u{j + 1}" for j in range(n_u)]
        + [f"std_x{i + 1}" for i in range(n_x)]
        + [f"std_u{j + 1}" for j in range(n_u)]
    )
    lines = [",".join(cols)]
    for k in range(traj.times.size):
        row = (
            [traj.times[k]]
            + list(traj.states[k])
            + list(traj.controls[k])
            + list(traj.stds[k])
        )
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_run(cfg: ExperimentConfig) -> int:
    prior = build_prior(cfg.system, cfg.x_ref)
    # Fit hyperparameters to the measured/constraint data only; endpoint
    # shaping points steer the online plan but say nothing about scales.
    dataset = initial_dataset(prior, cfg.controller, include_virtual=False)
    start = time.perf_counter()
    hp = _resolve_hyperparams(prior, cfg, dataset)
    plant = Plant(cfg.system.A, cfg.system.B)
    traj = run_closed_loop(prior, plant, cfg.controller, hp)
    wall = time.perf_counter() - start

    out = _output_dir(cfg)
    _write_trajectory_csv(out / cfg.trajectory_csv, traj, cfg.system.n_x, cfg.system.n_u)
    metrics = {
        "constraint_error": traj.constraint_error,
        "control_error": traj.control_error,
        "wall_time_s": wall,
        "hyperparams": {
            "signal_variance": hp.signal_variance,
            "lengthscale_sq": hp.lengthscale_sq,
            "jitter": hp.jitter,
        },
        "final_state": [float(v) for v in traj.states[-1]],
    }
    (out / cfg.metrics_json).write_text(json.dumps(metrics, indent=2) + "\n")
    print(
        f"run complete: constraint_error={traj.constraint_error:.6g} "
        f"control_error={traj.control_error:.6g} wall_time={wall:.2f}s "
        f"-> {out / cfg.trajectory_csv}"
    )
    return 0


def cmd_samples(cfg: ExperimentConfig, count: int, seed: int) -> int:
    if count < 0:
        raise ConfigError("--count must be >= 0")
    prior = build_prior(cfg.system, cfg.x_ref)
    ctrl = cfg.controller
    nz = prior.n_z
    z0 = tuple(ctrl.x0) + tuple(ctrl.u0)
    endpoints = Dataset.merged(
        [
            DataPoint(ctrl.t0, z0, (0.0,) * nz, role="init"),
            DataPoint(ctrl.t_end, tuple(prior.prior_mean), (0.0,) * nz, role="virtual"),
        ]
    )
    hp = _resolve_hyperparams(prior, cfg, endpoints)
    gp = PosteriorGp(prior, endpoints, hp)
    grid = np.array([ctrl.grid_time(i) for i in range(ctrl.n_steps + 1)])
    draws = gp.sample(grid, count, seed)

    names = cfg.system.channel_names
    lines = ["sample_id,t,channel,value"]
    for s in range(count):
        for k, t in enumerate(grid):
            for c in range(nz):
                lines.append(f"{s},{_fmt(t)},{names[c]},{_fmt(draws[s, k, c])}")
    out = _output_dir(cfg)
    (out / cfg.samples_csv).write_text("\n".join(lines) + "\n")
    print(f"wrote {count} samples x {grid.size} times x {nz} channels -> {out / cfg.samples_csv}")
    return 0


def cmd_algebra(cfg: ExperimentConfig) -> int:
    h = build_h(cfg.system)
    dec = smith_normal_form(h)
    print("H = [A - d*I | B] =")
    print(_indent(h.to_text()))
    print("D (Smith normal form) =")
    print(_indent(dec.D.to_text()))
    nonconstant = [p for p in dec.invariant_factors() if p.degree >= 1]
    if nonconstant:
        factors = ", ".join(str(p) for p in nonconstant)
        raise NonControllableSystemError(
            f"system is not controllable: non-constant invariant factor(s): {factors}"
        )
    null = right_nullspace_columns(h, dec)
    print("nullspace columns of H =")
    print(_indent(null.to_text()))
    prior = build_prior(cfg.system, cfg.x_ref)
    print("kernel entries (u = t - t', lam = 1/lengthscale_sq, scaled by signal variance):")
    print(_indent(prior.kernel.describe()))
    return 0


def _indent(text: str) -> str:
    return "\n".join("  " + line for line in text.splitlines())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lodempc",
        description="Model predictive control by GP inference for linear ODE systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the closed-loop experiment")
    p_run.add_argument("config", help="path to the experiment config (JSON)")

    p_samples = sub.add_parser("samples", help="draw posterior samples conditioned on the endpoints")
    p_samples.add_argument("config", help="path to the experiment config (JSON)")
    p_samples.add_argument("--count", type=int, default=50, help="number of samples")
    p_samples.add_argument("--seed", type=int, default=None, help="sampling seed (defaults to the config seed)")

    p_algebra = sub.add_parser("algebra", help="print the operator algebra for the configured system")
    p_algebra.add_argument("config", help="path to the experiment config (JSON)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "samples":
            seed = cfg.seed if args.seed is None else args.seed
            return cmd_samples(cfg, args.count, seed)
        return cmd_algebra(cfg)
    except (ConfigError, InfeasibleReferenceError, NonControllableSystemError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FactorizationError, PlantDivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
