"""Gaussian-process conditioning on heteroscedastic, per-channel-maskable
observations of the stacked trajectory z = (x, u).

Exact (noise-free) constraints are realized by substituting a small jitter
variance on the noise diagonal; Cholesky factorization escalates that jitter
multiplicatively when the Gram matrix is numerically indefinite and errors
out past a hard cap rather than silently repairing.  Hyperparameters are
chosen by a deterministic multi-start simplex descent from a fixed probe
grid, so repeated runs are bit-identical.

Index convention for Gram matrices: (point, channel) pairs, point-major,
masked channels skipped entirely.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from .kernelops import Hyperparams
from .lodegp import LodeGpPrior

__all__ = [
    "DataPoint",
    "Dataset",
    "DatasetError",
    "FactorizationError",
    "PosteriorGp",
    "assemble_gram",
    "log_marginal_likelihood",
    "optimize_hyperparams",
    "DEFAULT_HYPERPARAM_BOUNDS",
]

#: Jitter escalation stops (and factorization fails) past this variance.
MAX_JITTER = 1e-4

#: Default box for hyperparameter search, per parameter.
DEFAULT_HYPERPARAM_BOUNDS = {
    "signal_variance": (0.01, 100.0),
    "lengthscale_sq": (0.01, 100.0),
}


class DatasetError(ValueError):
    """Inconsistent dataset construction (conflicting duplicate values, ...)."""


class FactorizationError(RuntimeError):
    """Cholesky failed even after jitter escalation up to the cap."""


@dataclass(frozen=True)
class DataPoint:
    """One (time, value, noise) record.

    ``values[c] is None`` masks channel c: it contributes nothing to the
    Gram matrix.  ``noise_var[c] == 0`` marks an exact constraint (realized
    as jitter).  ``role`` is a provenance tag (init/constraint/past/virtual)
    used for bookkeeping and debug output only.
    """

    t: float
    values: tuple
    noise_var: tuple
    role: str = "obs"

    def __post_init__(self) -> None:
        values = tuple(None if v is None else float(v) for v in self.values)
        noise = tuple(float(s) for s in self.noise_var)
        if len(values) != len(noise):
            raise ValueError("values and noise_var must have equal length")
        for c, (v, s) in enumerate(zip(values, noise)):
            if v is not None and not math.isfinite(v):
                raise ValueError(f"non-finite value in channel {c}")
            if not math.isfinite(s) or s < 0:
                raise ValueError(f"noise variance must be finite and >= 0 (channel {c})")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "noise_var", noise)

    @property
    def n_channels(self) -> int:
        return len(self.values)

    @property
    def unmasked(self) -> tuple[int, ...]:
        return tuple(c for c, v in enumerate(self.values) if v is not None)


@dataclass(frozen=True)
class Dataset:
    """Time-sorted collection of DataPoints over a fixed channel layout.

    Plain construction sorts (stably) by time but performs no merging, so
    degenerate duplicates are representable; :meth:`merged` combines
    fragments, fusing points at equal times with disjoint masks and
    rejecting conflicting duplicate values.
    """

    points: tuple[DataPoint, ...] = ()

    def __post_init__(self) -> None:
        pts = tuple(sorted(self.points, key=lambda p: p.t))
        if pts:
            nz = pts[0].n_channels
            if any(p.n_channels != nz for p in pts):
                raise DatasetError("all points must share the channel layout")
        object.__setattr__(self, "points", pts)

    @classmethod
    def merged(cls, *fragments) -> "Dataset":
        flat: list[DataPoint] = [p for frag in fragments for p in frag]
        flat.sort(key=lambda p: p.t)
        out: list[DataPoint] = []
        for p in flat:
            if out and out[-1].t == p.t:
                out[-1] = _merge_pair(out[-1], p)
            else:
                out.append(p)
        return cls(tuple(out))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return not self.points

    @property
    def n_channels(self) -> int:
        return self.points[0].n_channels if self.points else 0

    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])


def _merge_pair(a: DataPoint, b: DataPoint) -> DataPoint:
    values = list(a.values)
    noise = list(a.noise_var)
    for c, v in enumerate(b.values):
        if v is None:
            continue
        if values[c] is None:
            values[c] = v
            noise[c] = b.noise_var[c]
        elif values[c] != v or noise[c] != b.noise_var[c]:
            raise DatasetError(
                f"conflicting duplicate at t={a.t} channel {c}: "
                f"({values[c]}, var {noise[c]}) vs ({v}, var {b.noise_var[c]})"
            )
    return DataPoint(a.t, tuple(values), tuple(noise), role=a.role)


def _flat_index(points, nz: int):
    """Flat (point-major) indices of unmasked (point, channel) slots."""
    sel = []
    channels = []
    for q, p in enumerate(points):
        for c in p.unmasked:
            sel.append(q * nz + c)
            channels.append(c)
    return np.asarray(sel, dtype=int), np.asarray(channels, dtype=int)


def assemble_gram(prior: LodeGpPrior, data: Dataset, hp: Hyperparams):
    """Gram matrix over unmasked (point, channel) slots plus the noise
    diagonal (zeros replaced by jitter), and the residual z - prior_mean.

    Returns (gram, residual)."""
    if data.is_empty:
        raise ValueError("cannot assemble a Gram matrix from an empty dataset")
    if data.n_channels != prior.n_z:
        raise ValueError(
            f"dataset has {data.n_channels} channels, prior expects {prior.n_z}"
        )
    nz = prior.n_z
    times = data.times()
    sel, channels = _flat_index(data.points, nz)
    if sel.size == 0:
        raise ValueError("dataset has no unmasked entries")
    full = prior.kernel.joint_matrix(times, times, hp)
    gram = full[np.ix_(sel, sel)]
    noise = np.array(
        [
            p.noise_var[c] if p.noise_var[c] > 0 else hp.jitter
            for p in data.points
            for c in p.unmasked
        ]
    )
    gram = gram + np.diag(noise)
    values = np.array([p.values[c] for p in data.points for c in p.unmasked])
    residual = values - prior.prior_mean[channels]
    return gram, residual


def _cho_with_escalation(gram: np.ndarray, jitter: float):
    """Lower Cholesky of gram, escalating an additive diagonal boost by
    factors of ten (starting at 10x jitter) up to MAX_JITTER."""
    boost = 0.0
    while True:
        try:
            target = gram if boost == 0.0 else gram + boost * np.eye(gram.shape[0])
            return cho_factor(target, lower=True), boost
        except LinAlgError:
            boost = max(jitter, 1e-10) * 10 if boost == 0.0 else boost * 10
            if boost > MAX_JITTER:
                raise FactorizationError(
                    f"Cholesky failed for {gram.shape[0]}x{gram.shape[0]} Gram "
                    f"matrix even with jitter escalated to {MAX_JITTER:g}"
                ) from None


class PosteriorGp:
    """Prior conditioned on a dataset at fixed hyperparameters.

    An empty dataset is allowed and reproduces the prior, which doubles as
    the sampling path for unconditioned processes.  Queries always return
    every channel, regardless of training masks.
    """

    def __init__(self, prior: LodeGpPrior, data: Dataset, hp: Hyperparams):
        self.prior = prior
        self.data = data
        self.hp = hp
        self._nz = prior.n_z
        if data.is_empty:
            self._cho = None
            self._alpha = np.zeros(0)
            self._sel = np.zeros(0, dtype=int)
            self._train_times = np.zeros(0)
        else:
            gram, residual = assemble_gram(prior, data, hp)
            self._cho, self.jitter_boost = _cho_with_escalation(gram, hp.jitter)
            self._alpha = cho_solve(self._cho, residual)
            self._sel, _ = _flat_index(data.points, self._nz)
            self._train_times = data.times()
            self._gram = gram
            self._residual = residual

    @property
    def representer_weights(self) -> np.ndarray:
        """Solution alpha of (K + Sigma) alpha = z - mu."""
        return self._alpha

    def _cross(self, t_query: np.ndarray) -> np.ndarray:
        """Kernel between query slots (rows, all channels) and training
        slots (columns, unmasked only)."""
        full = self.prior.kernel.joint_matrix(t_query, self._train_times, self.hp)
        return full[:, self._sel]

    def mean(self, t_query) -> np.ndarray:
        """Posterior mean, shape (len(t_query), n_z)."""
        tq = np.atleast_1d(np.asarray(t_query, dtype=float))
        out = np.tile(self.prior.prior_mean, (tq.size, 1))
        if self._alpha.size:
            chunk = 512
            for lo in range(0, tq.size, chunk):
                rows = self._cross(tq[lo : lo + chunk])
                out[lo : lo + rows.shape[0] // self._nz] += (rows @ self._alpha).reshape(
                    -1, self._nz
                )
        return out

    def cov(self, t_query) -> np.ndarray:
        """Posterior covariance over (query time, channel) slots,
        point-major; shape (M*n_z, M*n_z)."""
        tq = np.atleast_1d(np.asarray(t_query, dtype=float))
        kqq = self.prior.kernel.joint_matrix(tq, tq, self.hp)
        if self._alpha.size:
            kxq = self._cross(tq).T
            kqq = kqq - kxq.T @ cho_solve(self._cho, kxq)
        return 0.5 * (kqq + kqq.T)

    def std(self, t_query) -> np.ndarray:
        """Posterior standard deviation per channel, shape (M, n_z)."""
        tq = np.atleast_1d(np.asarray(t_query, dtype=float))
        var = np.clip(np.diag(self.cov(tq)), 0.0, None)
        return np.sqrt(var).reshape(tq.size, self._nz)

    def sample(self, t_query, count: int, seed: int) -> np.ndarray:
        """Joint posterior samples, shape (count, len(t_query), n_z).

        Draws from N(mean, cov + jitter*I) with a fixed generator seed; the
        covariance square root comes from a clipped eigendecomposition so
        near-singular posteriors stay sampleable.
        """
        tq = np.atleast_1d(np.asarray(t_query, dtype=float))
        dim = tq.size * self._nz
        if count == 0:
            return np.zeros((0, tq.size, self._nz))
        cov = self.cov(tq) + self.hp.jitter * np.eye(dim)
        w, vecs = np.linalg.eigh(cov)
        factor = vecs * np.sqrt(np.clip(w, 0.0, None))
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal((dim, count))
        flat = self.mean(tq).reshape(-1)[:, None] + factor @ eps
        return flat.T.reshape(count, tq.size, self._nz)


def log_marginal_likelihood(prior: LodeGpPrior, data: Dataset, hp: Hyperparams) -> float:
    """Marginal log-likelihood of the residual z - mu, constant term omitted:
    -(1/2) r^T (K + Sigma)^{-1} r - (1/2) log det (K + Sigma)."""
    gram, residual = assemble_gram(prior, data, hp)
    cho, _ = _cho_with_escalation(gram, hp.jitter)
    alpha = cho_solve(cho, residual)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    return float(-0.5 * residual @ alpha - 0.5 * logdet)


def optimize_hyperparams(
    prior: LodeGpPrior,
    data: Dataset,
    bounds: dict | None = None,
    fixed: dict | None = None,
    jitter: float = 1e-8,
    probes_per_axis: int = 5,
    n_starts: int = 3,
) -> Hyperparams:
    """Maximize the marginal log-likelihood over (log signal_variance,
    log lengthscale_sq) inside box bounds.

    Deterministic multi-start scheme: a fixed log-spaced probe grid is
    scored, the best probes seed Nelder-Mead descents, and the best end
    point wins (ties by probe order).  Probes whose factorization fails
    score -inf.  ``fixed`` pins parameters by name.
    """
    limits = dict(DEFAULT_HYPERPARAM_BOUNDS)
    if bounds:
        limits.update(bounds)
    fixed = dict(fixed or {})
    names = ["signal_variance", "lengthscale_sq"]
    free = [n for n in names if n not in fixed]

    def make_hp(values: dict) -> Hyperparams:
        return Hyperparams(
            signal_variance=values["signal_variance"],
            lengthscale_sq=values["lengthscale_sq"],
            jitter=jitter,
        )

    if not free:
        return make_hp(fixed)

    def objective(log_free: np.ndarray) -> float:
        values = dict(fixed)
        for name, lv in zip(free, log_free):
            values[name] = math.exp(lv)
        try:
            return -log_marginal_likelihood(prior, data, make_hp(values))
        except FactorizationError:
            return math.inf

    axes = [
        np.log(np.geomspace(limits[name][0], limits[name][1], probes_per_axis))
        for name in free
    ]
    probes = [np.array(p) for p in itertools.product(*axes)]
    scores = [objective(p) for p in probes]
    order = sorted(range(len(probes)), key=lambda k: (scores[k], k))
    starts = [probes[k] for k in order[:n_starts] if math.isfinite(scores[k])]
    if not starts:
        # Every probe failed to factorize; fall back to the box center.
        mid = [0.5 * (lo + hi) for lo, hi in (axes[i][[0, -1]] for i in range(len(free)))]
        starts = [np.array(mid)]

    log_bounds = [tuple(axes[i][[0, -1]]) for i in range(len(free))]
    best_x, best_f = starts[0], objective(starts[0])
    for start in starts:
        res = minimize(
            objective,
            start,
            method="Nelder-Mead",
            bounds=log_bounds,
            options={"xatol": 1e-4, "fatol": 1e-9, "maxiter": 400},
        )
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun

    values = dict(fixed)
    for name, lv in zip(free, best_x):
        values[name] = float(math.exp(lv))
    return make_hp(values)
