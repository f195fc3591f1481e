"""Model predictive control as GP inference.

Each step conditions the ODE-consistent prior on a dataset assembled from
four fragments over the stacked trajectory z = (x, u):

* the current observation (exact),
* soft box-constraint points at all future grid times (value = box center,
  noise from the box half-width),
* up to ``m_p`` most recent past observations (exact),
* optional virtual reference points at grid times past ``t_v`` (exact,
  value = reference), which replace the soft points at the same times.

The posterior mean of the control channels over the next interval is then
applied to the plant.  Hyperparameters are chosen once, offline, on the
initial dataset, and stay frozen for the whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gpcore import DataPoint, Dataset, PosteriorGp
from .kernelops import Hyperparams
from .lodegp import LodeGpPrior
from .metrics import constraint_violation, control_error
from .plant import ControlSignal, Plant, Trajectory

__all__ = [
    "ControllerConfig",
    "ControllerState",
    "StepDiagnostics",
    "PlantDivergenceError",
    "make_d_init",
    "make_d_con",
    "make_d_past",
    "make_d_v",
    "build_step_dataset",
    "initial_dataset",
    "mpc_step",
    "run_closed_loop",
    "posterior_from_trajectory",
]

#: Times are compared up to this tolerance; all controller times live on the
#: dt lattice, so anything far below dt works.
TIME_TOL = 1e-9

#: State norm beyond which the closed loop is declared divergent.
DIVERGENCE_LIMIT = 1e6


class PlantDivergenceError(RuntimeError):
    """Closed-loop state left the trust region (||x|| > 1e6)."""


@dataclass(frozen=True)
class ControllerConfig:
    """Static description of one control task."""

    t0: float
    t_end: float
    dt: float
    x0: tuple
    u0: tuple
    x_ref: tuple
    z_min: tuple
    z_max: tuple
    constraint_grid: tuple
    m_p: int = 0
    t_v: float | None = None
    constraint_noise_is_variance: bool = False
    control_application: str = "hold_endpoint"
    subgrid_count: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "u0", tuple(float(v) for v in self.u0))
        object.__setattr__(self, "x_ref", tuple(float(v) for v in self.x_ref))
        object.__setattr__(self, "z_min", tuple(float(v) for v in self.z_min))
        object.__setattr__(self, "z_max", tuple(float(v) for v in self.z_max))
        object.__setattr__(
            self, "constraint_grid", tuple(float(t) for t in self.constraint_grid)
        )
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t0:
            raise ValueError("t_end must not precede t0")
        span = self.t_end - self.t0
        steps = span / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError("horizon length must be an integer multiple of dt")
        if len(self.z_min) != len(self.z_max):
            raise ValueError("z_min and z_max must have equal length")
        if any(lo > hi for lo, hi in zip(self.z_min, self.z_max)):
            raise ValueError("z_min must be <= z_max componentwise")
        if len(self.z_min) != len(self.x0) + len(self.u0):
            raise ValueError("box bounds must cover all state and input channels")
        if len(self.x_ref) != len(self.x0):
            raise ValueError("x_ref must match the state dimension")
        if self.m_p < 0:
            raise ValueError("m_p must be >= 0")
        if self.control_application not in ("hold_endpoint", "subgrid_interpolation"):
            raise ValueError(
                f"unknown control_application {self.control_application!r}"
            )
        if self.subgrid_count < 1:
            raise ValueError("subgrid_count must be >= 1")
        if any(b <= a for a, b in zip(self.constraint_grid, self.constraint_grid[1:])):
            raise ValueError("constraint grid times must be strictly increasing")
        for t in self.constraint_grid:
            k = (t - self.t0) / self.dt
            if abs(k - round(k)) * self.dt > TIME_TOL:
                raise ValueError(
                    f"constraint grid time {t} does not lie on the dt lattice"
                )

    @property
    def n_x(self) -> int:
        return len(self.x0)

    @property
    def n_u(self) -> int:
        return len(self.u0)

    @property
    def n_z(self) -> int:
        return len(self.z_min)

    @property
    def n_steps(self) -> int:
        return round((self.t_end - self.t0) / self.dt)

    def grid_time(self, i: int) -> float:
        return self.t0 + i * self.dt


@dataclass
class ControllerState:
    """Observed history, most recent last.  The final entry is the current
    observation; earlier entries feed the past-data fragment."""

    history_t: list = field(default_factory=list)
    history_z: list = field(default_factory=list)

    def observe(self, t: float, z) -> None:
        self.history_t.append(float(t))
        self.history_z.append(np.asarray(z, dtype=float))

    @property
    def t_now(self) -> float:
        return self.history_t[-1]

    @property
    def z_now(self) -> np.ndarray:
        return self.history_z[-1]


@dataclass(frozen=True, eq=False)
class StepDiagnostics:
    """Per-step byproducts surfaced for logging and tests."""

    posterior: PosteriorGp
    dataset: Dataset
    t_next: float
    mean_next: np.ndarray
    std_next: np.ndarray


def make_d_init(t: float, z) -> list[DataPoint]:
    """The current observation as an exact constraint.  ``None`` entries in
    z mask the corresponding channel."""
    values = tuple(None if v is None else float(v) for v in z)
    return [DataPoint(t, values, (0.0,) * len(values), role="init")]


def make_d_con(cfg: ControllerConfig, t_now: float) -> list[DataPoint]:
    """Soft box-constraint points at every grid time strictly after t_now:
    value = box center, noise from the half-width (squared unless the config
    says the half-width already is a variance).  Zero-width channels become
    exact constraints."""
    center = tuple(
        0.5 * (hi + lo) for lo, hi in zip(cfg.z_min, cfg.z_max)
    )
    half = [0.5 * (hi - lo) for lo, hi in zip(cfg.z_min, cfg.z_max)]
    var = tuple(h if cfg.constraint_noise_is_variance else h * h for h in half)
    return [
        DataPoint(t, center, var, role="constraint")
        for t in cfg.constraint_grid
        if t > t_now + TIME_TOL
    ]


def make_d_past(state: ControllerState, m_p: int) -> list[DataPoint]:
    """Up to m_p most recent observations strictly before now, exact."""
    if m_p == 0 or len(state.history_t) <= 1:
        return []
    ts = state.history_t[:-1][-m_p:]
    zs = state.history_z[:-1][-m_p:]
    return [
        DataPoint(t, tuple(z), (0.0,) * z.size, role="past") for t, z in zip(ts, zs)
    ]


def make_d_v(cfg: ControllerConfig, t_now: float, z_ref) -> list[DataPoint]:
    """Virtual exact reference points at grid times strictly after both
    t_now and t_v; empty when t_v is unset."""
    if cfg.t_v is None:
        return []
    cutoff = max(cfg.t_v, t_now)
    z_ref = tuple(float(v) for v in z_ref)
    return [
        DataPoint(t, z_ref, (0.0,) * len(z_ref), role="virtual")
        for t in cfg.constraint_grid
        if t > cutoff + TIME_TOL
    ]


def build_step_dataset(
    prior: LodeGpPrior, state: ControllerState, cfg: ControllerConfig
) -> Dataset:
    """Assemble the conditioning dataset for the current step.  Virtual
    points replace soft constraint points at the same times."""
    d_init = make_d_init(state.t_now, state.z_now)
    d_con = make_d_con(cfg, state.t_now)
    d_past = make_d_past(state, cfg.m_p)
    d_v = make_d_v(cfg, state.t_now, prior.prior_mean)
    if d_v:
        virtual_times = {p.t for p in d_v}
        d_con = [
            p
            for p in d_con
            if not any(abs(p.t - tv) <= TIME_TOL for tv in virtual_times)
        ]
    return Dataset.merged(d_init, d_con, d_past, d_v)


def initial_dataset(
    prior: LodeGpPrior, cfg: ControllerConfig, include_virtual: bool = True
) -> Dataset:
    """The step-0 dataset at (t0, x0, u0).

    With ``include_virtual=False`` the endpoint-shaping points are left out.
    That is the variant the offline hyperparameter fit should see: shaping
    points are planning aids, not evidence about the signal scales, and
    fitting through their hard zeros drags the lengthscale away from what the
    measured data supports.  Leaving them out also means every run on the
    same problem shares one set of hyperparameters regardless of which
    dataset fragments the controller uses online.
    """
    state = ControllerState()
    state.observe(cfg.t0, np.concatenate([cfg.x0, cfg.u0]))
    if include_virtual or cfg.t_v is None:
        return build_step_dataset(prior, state, cfg)
    no_v = replace(cfg, t_v=None)
    return build_step_dataset(prior, state, no_v)


def mpc_step(
    prior: LodeGpPrior,
    state: ControllerState,
    cfg: ControllerConfig,
    hp: Hyperparams,
) -> tuple[ControlSignal, StepDiagnostics]:
    """Condition on the step dataset and extract the control for the next
    interval [t_now, t_now + dt]."""
    dataset = build_step_dataset(prior, state, cfg)
    gp = PosteriorGp(prior, dataset, hp)
    t_now = state.t_now
    t_next = t_now + cfg.dt
    n_x = cfg.n_x

    if cfg.control_application == "hold_endpoint":
        query = np.array([t_next])
        mean = gp.mean(query)
        signal = ControlSignal.constant(t_next, mean[0, n_x:])
    else:
        knots = np.linspace(t_now, t_next, cfg.subgrid_count + 1)
        mean_knots = gp.mean(knots)
        signal = ControlSignal.piecewise_linear(knots, mean_knots[:, n_x:])
        mean = mean_knots[-1:]
    std_next = gp.std(np.array([t_next]))[0]
    diag = StepDiagnostics(
        posterior=gp,
        dataset=dataset,
        t_next=t_next,
        mean_next=mean[-1],
        std_next=std_next,
    )
    return signal, diag


def run_closed_loop(
    prior: LodeGpPrior,
    plant: Plant,
    cfg: ControllerConfig,
    hp: Hyperparams,
    step_hook=None,
) -> Trajectory:
    """Execute the full receding-horizon loop and return the sampled run.

    ``step_hook(state, signal, diagnostics)``, when given, is invoked after
    each step's control has been computed (before the plant advances); it
    exists for inspection and testing.
    """
    if plant.n_x != prior.system.n_x or plant.n_u != prior.system.n_u:
        raise ValueError("plant dimensions do not match the prior's system")
    n_steps = cfg.n_steps
    n_x, n_u, n_z = cfg.n_x, cfg.n_u, cfg.n_z

    times = np.array([cfg.grid_time(i) for i in range(n_steps + 1)])
    states = np.zeros((n_steps + 1, n_x))
    controls = np.zeros((n_steps + 1, n_u))
    stds = np.zeros((n_steps + 1, n_z))

    x = np.asarray(cfg.x0, dtype=float)
    u = np.asarray(cfg.u0, dtype=float)
    states[0] = x
    controls[0] = u

    state = ControllerState()
    state.observe(times[0], np.concatenate([x, u]))

    if n_steps == 0:
        stds[0] = PosteriorGp(prior, Dataset(), hp).std(times[:1])[0]
    for i in range(n_steps):
        signal, diag = mpc_step(prior, state, cfg, hp)
        if i == 0:
            stds[0] = diag.posterior.std(times[:1])[0]
        if step_hook is not None:
            step_hook(state, signal, diag)
        x = plant.advance(x, signal, times[i], cfg.dt, substeps=10)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_LIMIT:
            raise PlantDivergenceError(
                f"state norm {np.linalg.norm(x):.3e} at t={times[i + 1]:.6g} "
                f"exceeds {DIVERGENCE_LIMIT:g}; closed loop aborted"
            )
        u = signal.value(times[i + 1])
        states[i + 1] = x
        controls[i + 1] = u
        stds[i + 1] = diag.std_next
        state.observe(times[i + 1], np.concatenate([x, u]))

    traj = Trajectory(times=times, states=states, controls=controls, stds=stds)
    traj.constraint_error = constraint_violation(traj, cfg.z_min, cfg.z_max)
    traj.control_error = control_error(traj, cfg.x_ref)
    return traj


def posterior_from_trajectory(
    prior: LodeGpPrior, traj: Trajectory, hp: Hyperparams, stride: int = 1
) -> PosteriorGp:
    """Condition the prior on a run's recorded (t, z) samples as exact
    constraints: the GP's smooth, ODE-consistent reconstruction of the
    executed trajectory."""
    z = traj.z
    points = [
        DataPoint(traj.times[i], tuple(z[i]), (0.0,) * z.shape[1], role="past")
        for i in range(0, traj.times.size, stride)
    ]
    return PosteriorGp(prior, Dataset(tuple(points)), hp)
