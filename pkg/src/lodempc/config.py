"""Experiment configuration: one JSON document describing the system, the
control task, hyperparameter search, flags, seed, and output paths."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import ControllerConfig
from .lodegp import LinearSystem

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration document."""


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    system: LinearSystem
    controller: ControllerConfig
    hp_bounds: dict
    hp_fixed: dict | None
    jitter: float
    seed: int
    output_dir: str
    trajectory_csv: str
    metrics_json: str
    samples_csv: str

    @property
    def x_ref(self) -> tuple:
        return self.controller.x_ref


def _section(doc: dict, name: str) -> dict:
    try:
        sec = doc[name]
    except KeyError:
        raise ConfigError(f"missing config section {name!r}") from None
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return sec


def _get(sec: dict, name: str, where: str):
    try:
        return sec[name]
    except KeyError:
        raise ConfigError(f"missing field {name!r} in section {where!r}") from None


def _grid_times(spec, t0: float) -> tuple:
    if isinstance(spec, dict) and {"start", "stop", "count"} <= set(spec):
        count = int(spec["count"])
        if count < 1:
            raise ConfigError("constraint_grid count must be >= 1")
        return tuple(np.linspace(float(spec["start"]), float(spec["stop"]), count))
    if isinstance(spec, dict) and "times" in spec:
        return tuple(float(t) for t in spec["times"])
    raise ConfigError(
        "constraint_grid must give either {start, stop, count} or {times}"
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file, mapping every construction error to
    ConfigError with a readable message."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")

    sys_sec = _section(doc, "system")
    ref_sec = _section(doc, "reference")
    init_sec = _section(doc, "initial")
    hor_sec = _section(doc, "horizon")
    box_sec = _section(doc, "bounds")
    data_sec = _section(doc, "datasets")
    hp_sec = _section(doc, "hyperparams")
    flag_sec = doc.get("flags", {})
    out_sec = doc.get("outputs", {})

    try:
        system = LinearSystem(
            A=np.array(_get(sys_sec, "A", "system"), dtype=float),
            B=np.array(_get(sys_sec, "B", "system"), dtype=float),
            channel_names=tuple(sys_sec.get("channel_names", ())),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad system definition: {exc}") from None

    t0 = float(_get(hor_sec, "t0", "horizon"))
    grid = _grid_times(_get(data_sec, "constraint_grid", "datasets"), t0)
    t_v = data_sec.get("virtual_start")

    try:
        controller = ControllerConfig(
            t0=t0,
            t_end=float(_get(hor_sec, "t_end", "horizon")),
            dt=float(_get(hor_sec, "dt", "horizon")),
            x0=tuple(_get(init_sec, "x0", "initial")),
            u0=tuple(_get(init_sec, "u0", "initial")),
            x_ref=tuple(_get(ref_sec, "x_ref", "reference")),
            z_min=tuple(_get(box_sec, "z_min", "bounds")),
            z_max=tuple(_get(box_sec, "z_max", "bounds")),
            constraint_grid=grid,
            m_p=int(data_sec.get("past_window", 0)),
            t_v=None if t_v is None else float(t_v),
            constraint_noise_is_variance=bool(
                flag_sec.get("constraint_noise_is_variance", False)
            ),
            control_application=str(
                flag_sec.get("control_application", "hold_endpoint")
            ),
            subgrid_count=int(flag_sec.get("subgrid_count", 10)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad controller configuration: {exc}") from None

    if controller.n_x != system.n_x or controller.n_u != system.n_u:
        raise ConfigError(
            "initial condition dimensions do not match the system matrices"
        )

    bounds_raw = hp_sec.get("bounds", {}) or {}
    hp_bounds = {}
    for name in ("signal_variance", "lengthscale_sq"):
        if name in bounds_raw:
            lo, hi = bounds_raw[name]
            lo, hi = float(lo), float(hi)
            if not (0 < lo < hi):
                raise ConfigError(f"hyperparameter bounds for {name} must satisfy 0 < lo < hi")
            hp_bounds[name] = (lo, hi)
    fixed_raw = hp_sec.get("fixed")
    hp_fixed = None
    if fixed_raw:
        hp_fixed = {}
        for name, value in fixed_raw.items():
            if name not in ("signal_variance", "lengthscale_sq"):
                raise ConfigError(f"unknown fixed hyperparameter {name!r}")
            value = float(value)
            if not value > 0:
                raise ConfigError(f"fixed hyperparameter {name} must be positive")
            hp_fixed[name] = value
    jitter = float(hp_sec.get("jitter", 1e-8))
    if jitter < 0:
        raise ConfigError("jitter must be >= 0")

    return ExperimentConfig(
        system=system,
        controller=controller,
        hp_bounds=hp_bounds,
        hp_fixed=hp_fixed,
        jitter=jitter,
        seed=int(doc.get("seed", 0)),
        output_dir=str(out_sec.get("directory", ".")),
        trajectory_csv=str(out_sec.get("trajectory_csv", "trajectory.csv")),
        metrics_json=str(out_sec.get("metrics_json", "metrics.json")),
        samples_csv=str(out_sec.get("samples_csv", "samples.csv")),
    )
