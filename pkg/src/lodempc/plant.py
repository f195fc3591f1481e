"""Ground-truth simulator for dx/dt = A x + B u(t).

Constant-input intervals are stepped exactly through the matrix exponential
of the augmented matrix [[A, B], [0, 0]] (scaling-and-squaring); arbitrary
signals are integrated with classical RK4 on a fixed substep.  Exact
stepping isolates controller behavior from integrator error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = ["ControlSignal", "Plant", "Trajectory", "step_exact", "step_rk4"]


@dataclass(frozen=True)
class ControlSignal:
    """Control over one interval: either a constant vector or a piecewise-
    linear interpolation of knot values (clamped outside the knot range)."""

    kind: str  # "constant" | "piecewise_linear"
    knot_times: tuple[float, ...]
    knot_values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "piecewise_linear"):
            raise ValueError(f"unknown control signal kind {self.kind!r}")
        if not self.knot_times:
            raise ValueError("control signal needs at least one knot")
        if len(self.knot_times) != len(self.knot_values):
            raise ValueError("knot_times and knot_values must align")
        if self.kind == "piecewise_linear" and len(self.knot_times) < 2:
            raise ValueError("piecewise-linear signal needs at least two knots")
        if any(b <= a for a, b in zip(self.knot_times, self.knot_times[1:])):
            raise ValueError("knot times must be strictly increasing")

    @classmethod
    def constant(cls, t: float, u) -> "ControlSignal":
        return cls("constant", (float(t),), (tuple(float(x) for x in np.atleast_1d(u)),))

    @classmethod
    def piecewise_linear(cls, times, values) -> "ControlSignal":
        return cls(
            "piecewise_linear",
            tuple(float(t) for t in times),
            tuple(tuple(float(x) for x in row) for row in np.atleast_2d(values)),
        )

    def value(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.asarray(self.knot_values[0])
        knots = np.asarray(self.knot_times)
        vals = np.asarray(self.knot_values)
        return np.array([np.interp(t, knots, vals[:, j]) for j in range(vals.shape[1])])


def step_exact(A, B, x, u_const, h: float) -> np.ndarray:
    """Advance one step under constant input using the matrix exponential of
    the augmented matrix: x+ = e^{Ah} x + (integral of e^{As} ds) B u."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n_x, n_u = B.shape
    aug = np.zeros((n_x + n_u, n_x + n_u))
    aug[:n_x, :n_x] = A
    aug[:n_x, n_x:] = B
    phi = expm(aug * h)
    return phi[:n_x, :n_x] @ np.asarray(x, dtype=float) + phi[:n_x, n_x:] @ np.atleast_1d(
        np.asarray(u_const, dtype=float)
    )


def step_rk4(A, B, x, u_signal: ControlSignal, t: float, h: float) -> np.ndarray:
    """One classical RK4 step sampling the control signal at t, t+h/2, t+h."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    x = np.asarray(x, dtype=float)

    def f(ti, xi):
        return A @ xi + B @ u_signal.value(ti)

    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True, eq=False)
class Plant:
    """Simulator bound to one (A, B) pair."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.B, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def advance(self, x, signal: ControlSignal, t: float, h: float, substeps: int = 10) -> np.ndarray:
        """Integrate over [t, t+h]: exactly for constant signals, RK4 on
        h/substeps otherwise."""
        if signal.kind == "constant":
            return step_exact(self.A, self.B, x, signal.value(t), h)
        x = np.asarray(x, dtype=float)
        sub = h / substeps
        for k in range(substeps):
            x = step_rk4(self.A, self.B, x, signal, t + k * sub, sub)
        return x

    def simulate(self, x0, signal: ControlSignal, t0: float, t1: float, steps: int) -> np.ndarray:
        """RK4 trajectory on a uniform grid; returns states of shape
        (steps+1, n_x) including the initial state."""
        h = (t1 - t0) / steps
        out = np.empty((steps + 1, self.n_x))
        out[0] = np.asarray(x0, dtype=float)
        for k in range(steps):
            out[k + 1] = step_rk4(self.A, self.B, out[k], signal, t0 + k * h, h)
        return out


@dataclass
class Trajectory:
    """Closed-loop run record at the controller cadence.

    Row i holds the state at time[i] and the control value in effect
    entering time[i] (the initial control for row 0); ``stds`` are posterior
    standard deviations per channel from the step that produced each row.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    stds: np.ndarray
    constraint_error: float | None = None
    control_error: float | None = None

    @property
    def z(self) -> np.ndarray:
        """Stacked trajectory samples (x, u), shape (len(times), n_z)."""
        return np.hstack([self.states, self.controls])
