"""Datasets, Gram assembly, exact conditioning, marginal likelihood,
hyperparameter search, and posterior sampling."""

import math

import numpy as np
import pytest

from lodempc.gpcore import (
    MAX_JITTER,
    DataPoint,
    Dataset,
    DatasetError,
    FactorizationError,
    PosteriorGp,
    assemble_gram,
    log_marginal_likelihood,
    optimize_hyperparams,
)
from lodempc.kernelops import Hyperparams
from lodempc.lodegp import LinearSystem, build_prior


@pytest.fixture(scope="module")
def integrator_prior():
    # dx/dt = u: two channels (x, u), nullspace (1, d)ᵀ
    return build_prior(LinearSystem(A=[[0.0]], B=[[1.0]]), x_ref=[0.0])


def hard(t, values, nz=3, role="obs"):
    return DataPoint(t, tuple(values), (0.0,) * nz, role=role)


# ---------------------------------------------------------------------------
# DataPoint / Dataset
# ---------------------------------------------------------------------------


def test_datapoint_masks_and_validation():
    p = DataPoint(0.5, (1.0, None, 2.0), (0.0, 0.0, 0.1))
    assert p.unmasked == (0, 2)
    assert p.values[1] is None
    with pytest.raises(ValueError):
        DataPoint(0.0, (1.0,), (0.0, 0.0))  # length mismatch
    with pytest.raises(ValueError):
        DataPoint(0.0, (1.0,), (-1.0,))  # negative noise
    with pytest.raises(ValueError):
        DataPoint(0.0, (math.nan,), (0.0,))


def test_dataset_sorts_by_time_without_merging():
    a = DataPoint(2.0, (1.0, None), (0.0, 0.0))
    b = DataPoint(1.0, (None, 3.0), (0.0, 0.0))
    c = DataPoint(2.0, (5.0, None), (0.1, 0.0))
    ds = Dataset((a, b, c))
    assert [p.t for p in ds.points] == [1.0, 2.0, 2.0]
    assert len(ds) == 3 and not ds.is_empty


def test_dataset_merged_fuses_disjoint_masks():
    a = DataPoint(1.0, (1.0, None), (0.0, 0.0))
    b = DataPoint(1.0, (None, 2.0), (0.0, 0.5))
    ds = Dataset.merged([a], [b])
    assert len(ds) == 1
    assert ds.points[0].values == (1.0, 2.0)
    assert ds.points[0].noise_var == (0.0, 0.5)


def test_dataset_merged_rejects_conflicting_duplicates():
    a = DataPoint(1.0, (1.0,), (0.0,))
    b = DataPoint(1.0, (2.0,), (0.0,))
    with pytest.raises(DatasetError):
        Dataset.merged([a], [b])
    # same value but different stated noise is also a conflict
    c = DataPoint(1.0, (1.0,), (0.5,))
    with pytest.raises(DatasetError):
        Dataset.merged([a], [c])


def test_dataset_merged_accepts_identical_duplicates():
    a = DataPoint(1.0, (1.0, None), (0.0, 0.0))
    ds = Dataset.merged([a], [a])
    assert len(ds) == 1


def test_dataset_rejects_mixed_channel_layouts():
    with pytest.raises(DatasetError):
        Dataset((DataPoint(0.0, (1.0,), (0.0,)), DataPoint(1.0, (1.0, 2.0), (0.0, 0.0))))


# ---------------------------------------------------------------------------
# Gram assembly
# ---------------------------------------------------------------------------


def test_assemble_gram_masks_and_noise(integrator_prior):
    hp = Hyperparams(jitter=1e-8)
    ds = Dataset(
        (
            DataPoint(0.0, (1.0, None), (0.0, 0.0)),
            DataPoint(1.0, (2.0, 3.0), (0.0, 0.25)),
        )
    )
    gram, residual = assemble_gram(integrator_prior, ds, hp)
    assert gram.shape == (3, 3)
    np.testing.assert_allclose(residual, [1.0, 2.0, 3.0])
    # hard slots carry jitter, soft slots their stated variance
    base = integrator_prior.kernel.joint_matrix(
        np.array([0.0, 1.0]), np.array([0.0, 1.0]), hp
    )
    keep = [0, 2, 3]
    np.testing.assert_allclose(
        gram, base[np.ix_(keep, keep)] + np.diag([1e-8, 1e-8, 0.25])
    )


def test_assemble_gram_rejects_empty_and_mismatched(integrator_prior, unstable_prior):
    hp = Hyperparams()
    with pytest.raises(ValueError):
        assemble_gram(integrator_prior, Dataset(), hp)
    ds3 = Dataset((hard(0.0, (0.0, 0.0, 0.0)),))
    with pytest.raises(ValueError):
        assemble_gram(integrator_prior, ds3, hp)
    ds_masked = Dataset((DataPoint(0.0, (None, None), (0.0, 0.0)),))
    with pytest.raises(ValueError):
        assemble_gram(integrator_prior, ds_masked, hp)


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


def test_hard_points_are_interpolated(unstable_prior):
    # condition on values the process can actually realize (a prior draw);
    # arbitrary per-channel values would fight the differential structure
    # and blow up the representer weights
    hp = Hyperparams(signal_variance=0.8, lengthscale_sq=1.3)
    times = np.array([0.0, 1.0, 2.5])
    draw_hp = Hyperparams(signal_variance=0.8, lengthscale_sq=1.3, jitter=1e-12)
    want = PosteriorGp(unstable_prior, Dataset(), draw_hp).sample(times, 1, seed=9)[0]
    ds = Dataset(
        tuple(
            DataPoint(float(t), tuple(float(v) for v in z), (0.0,) * 3)
            for t, z in zip(times, want)
        )
    )
    gp = PosteriorGp(unstable_prior, ds, hp)
    assert np.max(np.abs(gp.mean(times) - want)) <= 1e-5


def test_masked_channels_are_not_pinned(unstable_prior):
    hp = Hyperparams()
    ds = Dataset(
        (
            DataPoint(0.0, (1.0, None, None), (0.0, 0.0, 0.0)),
            DataPoint(2.0, (-1.0, None, None), (0.0, 0.0, 0.0)),
        )
    )
    gp = PosteriorGp(unstable_prior, ds, hp)
    mean = gp.mean(np.array([0.0, 2.0]))
    np.testing.assert_allclose(mean[:, 0], [1.0, -1.0], atol=1e-6)
    # the other channels are free: no reason for them to hit any target,
    # but they must be finite and the posterior std must stay positive there
    std = gp.std(np.array([1.0]))
    assert np.all(np.isfinite(mean))
    assert std[0, 1] > 1e-3 and std[0, 2] > 1e-3


def test_zero_residual_leaves_mean_at_prior(unstable_prior):
    # observing the equilibrium itself must not bend the posterior mean
    hp = Hyperparams(signal_variance=1.2, lengthscale_sq=0.7)
    ds = Dataset((hard(0.0, (0.0, 0.0, 0.0)), hard(1.5, (0.0, 0.0, 0.0))))
    gp = PosteriorGp(unstable_prior, ds, hp)
    tq = np.linspace(-1.0, 3.0, 9)
    np.testing.assert_allclose(gp.mean(tq), 0.0, atol=1e-12)
    np.testing.assert_allclose(gp.representer_weights, 0.0, atol=1e-12)


def test_nonzero_prior_mean_is_respected():
    prior = build_prior(LinearSystem(A=[[-1.0]], B=[[1.0]]), x_ref=[2.0])
    hp = Hyperparams()
    gp = PosteriorGp(prior, Dataset(), hp)
    tq = np.array([0.0, 5.0])
    np.testing.assert_allclose(gp.mean(tq), [[2.0, 2.0], [2.0, 2.0]])
    ds = Dataset((DataPoint(0.0, (2.0, 2.0), (0.0, 0.0)),))
    gp2 = PosteriorGp(prior, ds, hp)
    np.testing.assert_allclose(gp2.mean(tq), [[2.0, 2.0], [2.0, 2.0]], atol=1e-12)


def test_empty_dataset_reproduces_prior(unstable_prior):
    hp = Hyperparams(signal_variance=0.9)
    gp = PosteriorGp(unstable_prior, Dataset(), hp)
    tq = np.array([0.0, 1.0])
    np.testing.assert_allclose(gp.mean(tq), 0.0)
    prior_cov = unstable_prior.kernel.joint_matrix(tq, tq, hp)
    np.testing.assert_allclose(gp.cov(tq), prior_cov)


def test_posterior_cov_is_symmetric_psd_and_shrinks(unstable_prior):
    hp = Hyperparams()
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)), hard(2.0, (0.0, 0.5, 0.0))))
    gp = PosteriorGp(unstable_prior, ds, hp)
    tq = np.linspace(0.0, 2.0, 7)
    cov = gp.cov(tq)
    assert np.array_equal(cov, cov.T)
    eigvals = np.linalg.eigvalsh(cov)
    assert eigvals.min() > -1e-8
    prior_var = np.diag(unstable_prior.kernel.joint_matrix(tq, tq, hp))
    assert np.all(np.diag(cov) <= prior_var + 1e-12)


def test_posterior_std_collapses_at_hard_points(unstable_prior):
    hp = Hyperparams()
    ds = Dataset((hard(1.0, (0.3, -0.2, 0.1)),))
    gp = PosteriorGp(unstable_prior, ds, hp)
    at_point = gp.std(np.array([1.0]))
    away = gp.std(np.array([5.0]))
    assert np.all(at_point[0] < 1e-3)
    assert np.all(away[0] > 0.5)


def test_mean_chunking_is_seamless(unstable_prior):
    # query sizes straddling the internal chunk size must agree pointwise
    hp = Hyperparams()
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)),))
    gp = PosteriorGp(unstable_prior, ds, hp)
    tq = np.linspace(-2.0, 2.0, 700)
    whole = gp.mean(tq)
    parts = np.vstack([gp.mean(t) for t in tq])
    np.testing.assert_allclose(whole, parts, atol=1e-13)


def test_representer_weights_match_dense_solve(unstable_prior):
    rng = np.random.default_rng(7)
    hp = Hyperparams(signal_variance=1.4, lengthscale_sq=0.9)
    for _ in range(5):
        n = int(rng.integers(2, 12))
        times = np.sort(rng.uniform(0.0, 5.0, n))
        points = []
        for t in times:
            values = tuple(float(v) for v in rng.normal(0.0, 1.0, 3))
            noise = tuple(float(s) for s in rng.uniform(0.01, 0.5, 3))
            points.append(DataPoint(float(t), values, noise))
        ds = Dataset(tuple(points))
        gp = PosteriorGp(unstable_prior, ds, hp)
        gram, residual = assemble_gram(unstable_prior, ds, hp)
        direct = np.linalg.solve(gram, residual)
        np.testing.assert_allclose(gp.representer_weights, direct, rtol=1e-8, atol=1e-12)


def test_duplicate_hard_points_escalate_jitter_not_crash(integrator_prior):
    # with zero jitter, exact duplicates (kept by the plain Dataset
    # constructor) make the Gram matrix exactly singular; the factorization
    # must escalate its diagonal boost instead of failing
    hp = Hyperparams(signal_variance=1.0, lengthscale_sq=1.0, jitter=0.0)
    p = DataPoint(0.0, (1.0, 0.0), (0.0, 0.0))
    ds = Dataset((p, p))
    gp = PosteriorGp(integrator_prior, ds, hp)
    assert gp.jitter_boost > 0
    assert np.all(np.isfinite(gp.mean(np.array([0.5]))))


def test_factorization_error_when_escalation_cap_hit():
    # an indefinite matrix cannot be repaired by any boost below the cap
    from lodempc.gpcore import _cho_with_escalation

    with pytest.raises(FactorizationError) as err:
        _cho_with_escalation(np.array([[1.0, 2.0], [2.0, 1.0]]), 1e-8)
    assert f"{MAX_JITTER:g}" in str(err.value)


# ---------------------------------------------------------------------------
# Marginal likelihood
# ---------------------------------------------------------------------------


def test_mll_single_point_unit_residual_unit_variance(integrator_prior):
    # k(0,0) = sigma_f^2 = 0.5 plus noise 0.5 gives unit total variance;
    # residual 1 then scores -1/2 - (1/2)log(1) = -0.5 exactly
    hp = Hyperparams(signal_variance=0.5, lengthscale_sq=1.0)
    ds = Dataset((DataPoint(0.0, (1.0, None), (0.5, 0.0)),))
    val = log_marginal_likelihood(integrator_prior, ds, hp)
    assert val == pytest.approx(-0.5, abs=1e-12)


def test_mll_matches_dense_formula(unstable_prior):
    rng = np.random.default_rng(3)
    hp = Hyperparams(signal_variance=0.7, lengthscale_sq=1.1)
    points = []
    for t in np.sort(rng.uniform(0.0, 4.0, 6)):
        points.append(
            DataPoint(
                float(t),
                tuple(float(v) for v in rng.normal(0.0, 1.0, 3)),
                tuple(float(s) for s in rng.uniform(0.05, 0.3, 3)),
            )
        )
    ds = Dataset(tuple(points))
    got = log_marginal_likelihood(unstable_prior, ds, hp)
    gram, residual = assemble_gram(unstable_prior, ds, hp)
    sign, logdet = np.linalg.slogdet(gram)
    assert sign > 0
    want = -0.5 * residual @ np.linalg.solve(gram, residual) - 0.5 * logdet
    assert got == pytest.approx(want, rel=1e-10)


def test_mll_prefers_generating_lengthscale(unstable_prior):
    # data drawn from the prior at ls2 = 1 should not score better under a
    # wildly wrong lengthscale
    hp_true = Hyperparams(signal_variance=1.0, lengthscale_sq=1.0, jitter=1e-10)
    grid = np.linspace(0.0, 6.0, 25)
    draw = PosteriorGp(unstable_prior, Dataset(), hp_true).sample(grid, 1, seed=11)[0]
    points = tuple(
        DataPoint(float(t), tuple(float(v) for v in z), (0.01, 0.01, 0.01))
        for t, z in zip(grid, draw)
    )
    ds = Dataset(points)
    at_true = log_marginal_likelihood(unstable_prior, ds, hp_true)
    at_tiny = log_marginal_likelihood(
        unstable_prior, ds, Hyperparams(1.0, 0.02, jitter=1e-10)
    )
    at_huge = log_marginal_likelihood(
        unstable_prior, ds, Hyperparams(1.0, 50.0, jitter=1e-10)
    )
    assert at_true > at_tiny
    assert at_true > at_huge


# ---------------------------------------------------------------------------
# Hyperparameter search
# ---------------------------------------------------------------------------


def test_optimizer_is_deterministic(unstable_prior):
    ds = Dataset(
        (
            hard(0.0, (1.0, 0.0, 0.0)),
            DataPoint(1.0, (0.3, 0.1, -0.2), (0.1, 0.1, 0.1)),
            DataPoint(2.0, (0.0, 0.0, 0.0), (0.1, 0.1, 0.1)),
        )
    )
    a = optimize_hyperparams(unstable_prior, ds)
    b = optimize_hyperparams(unstable_prior, ds)
    assert (a.signal_variance, a.lengthscale_sq) == (b.signal_variance, b.lengthscale_sq)


def test_optimizer_recovers_generating_scales(unstable_prior):
    hp_true = Hyperparams(signal_variance=2.0, lengthscale_sq=0.5, jitter=1e-10)
    grid = np.linspace(0.0, 8.0, 33)
    draw = PosteriorGp(unstable_prior, Dataset(), hp_true).sample(grid, 1, seed=5)[0]
    ds = Dataset(
        tuple(
            DataPoint(float(t), tuple(float(v) for v in z), (0.01,) * 3)
            for t, z in zip(grid, draw)
        )
    )
    hp = optimize_hyperparams(unstable_prior, ds, jitter=1e-10)
    # one realization only: accept the right order of magnitude
    assert 0.2 < hp.signal_variance < 20.0
    assert 0.1 < hp.lengthscale_sq < 2.5


def test_optimizer_respects_fixed_values(unstable_prior):
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)), hard(2.0, (0.0, 0.0, 0.0))))
    both = optimize_hyperparams(
        unstable_prior,
        ds,
        fixed={"signal_variance": 1.5, "lengthscale_sq": 0.75},
        jitter=1e-9,
    )
    assert both.signal_variance == 1.5
    assert both.lengthscale_sq == 0.75
    assert both.jitter == 1e-9
    one = optimize_hyperparams(unstable_prior, ds, fixed={"signal_variance": 1.5})
    assert one.signal_variance == 1.5
    assert one.lengthscale_sq != 1.5


def test_optimizer_respects_bounds(unstable_prior):
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)), hard(4.0, (0.0, 1.0, 0.0))))
    bounds = {"signal_variance": (0.5, 2.0), "lengthscale_sq": (0.2, 0.4)}
    hp = optimize_hyperparams(unstable_prior, ds, bounds=bounds)
    assert 0.5 - 1e-9 <= hp.signal_variance <= 2.0 + 1e-9
    assert 0.2 - 1e-9 <= hp.lengthscale_sq <= 0.4 + 1e-9


def test_optimizer_beats_probe_corners(unstable_prior):
    ds = Dataset(
        (
            hard(0.0, (1.0, 0.0, 0.0)),
            DataPoint(0.5, (0.6, -0.4, 0.1), (0.05,) * 3),
            DataPoint(1.5, (0.1, -0.2, 0.05), (0.05,) * 3),
        )
    )
    hp = optimize_hyperparams(unstable_prior, ds)
    best = log_marginal_likelihood(unstable_prior, ds, hp)
    for sv in (0.01, 100.0):
        for ls in (0.01, 100.0):
            corner = Hyperparams(sv, ls, jitter=hp.jitter)
            assert best >= log_marginal_likelihood(unstable_prior, ds, corner) - 1e-9


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_sampling_shapes_and_determinism(unstable_prior):
    hp = Hyperparams()
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)),))
    gp = PosteriorGp(unstable_prior, ds, hp)
    grid = np.linspace(0.0, 2.0, 11)
    a = gp.sample(grid, 4, seed=42)
    b = gp.sample(grid, 4, seed=42)
    c = gp.sample(grid, 4, seed=43)
    assert a.shape == (4, 11, 3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert gp.sample(grid, 0, seed=1).shape == (0, 11, 3)


def test_sample_mean_converges_to_posterior_mean(unstable_prior):
    hp = Hyperparams()
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)),))
    gp = PosteriorGp(unstable_prior, ds, hp)
    grid = np.array([0.5, 1.0])
    draws = gp.sample(grid, 4000, seed=0)
    mc_mean = draws.mean(axis=0)
    want = gp.mean(grid)
    std = gp.std(grid)
    # 5-sigma Monte Carlo band per slot
    assert np.all(np.abs(mc_mean - want) <= 5.0 * std / math.sqrt(4000) + 1e-9)


def test_samples_satisfy_the_differential_equation(unstable_prior):
    # central differences on sampled paths: the state derivative must match
    # A x + B u up to O(h^2) plus the tiny sampling jitter
    hp = Hyperparams(signal_variance=1.0, lengthscale_sq=1.0, jitter=1e-12)
    ds = Dataset((hard(0.0, (1.0, 0.0, 0.0)),))
    gp = PosteriorGp(unstable_prior, ds, hp)
    h = 1e-2
    grid = np.arange(0.0, 2.0 + h / 2, h)
    a_mat = unstable_prior.system.A
    b_mat = unstable_prior.system.B
    for seed in (1, 2, 3):
        path = gp.sample(grid, 1, seed=seed)[0]
        x = path[:, :2]
        u = path[:, 2:]
        xdot = (x[2:] - x[:-2]) / (2 * h)
        rhs = x[1:-1] @ a_mat.T + u[1:-1] @ b_mat.T
        assert np.max(np.abs(xdot - rhs)) <= 2e-3
