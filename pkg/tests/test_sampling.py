import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import special, stats

from sbto.exceptions import NumericalError
from sbto.sampling import (
    CemConfig,
    EliteArchive,
    MppiConfig,
    cem_minimize,
    cem_update,
    max_active_variance,
    mppi_temperature,
    mppi_update,
    mppi_weights,
    psd_factor,
    sample_gaussian,
)
from sbto.types import SamplingDistribution


def test_table_defaults():
    cfg = CemConfig()
    assert (cfg.N, cfg.rho_e, cfg.rho_k, cfg.alpha_mu, cfg.alpha_sigma, cfg.sigma0) == \
        (1024, 0.03, 0.04, 0.95, 0.2, 0.25)


@pytest.mark.parametrize("N,ne,nk", [(1024, 31, 2), (100, 3, 1), (256, 8, 1), (2, 1, 1),
                                     (10000, 300, 12)])
def test_elite_counts(N, ne, nk):
    cfg = CemConfig(N=N)
    assert (cfg.n_elites, cfg.n_keep) == (ne, nk)


def test_config_validation():
    with pytest.raises(ValueError):
        CemConfig(N=1)
    with pytest.raises(ValueError):
        CemConfig(rho_e=0.0)
    with pytest.raises(ValueError):
        CemConfig(alpha_sigma=1.5)
    with pytest.raises(ValueError):
        MppiConfig(temperature=0.0)


def test_ewma_on_identical_elites():
    # elites all at the mean: covariance becomes (1 - alpha_sigma) sigma0^2 + jitter
    cfg = CemConfig(N=64, cov_jitter=0.0)
    d = SamplingDistribution.isotropic(np.zeros(3), cfg.sigma0)
    samples = np.zeros((64, 3))
    new, _ = cem_update(d, samples, np.arange(64.0), EliteArchive.empty(3), cfg)
    np.testing.assert_allclose(np.diag(new.cov), 0.8 * 0.0625, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(new.mean, np.zeros(3))


def test_mean_ewma_weights_new_estimate():
    cfg = CemConfig(N=4, rho_e=0.25, rho_k=0.0, cov_jitter=0.0)
    d = SamplingDistribution.isotropic(np.zeros(1), 1.0)
    samples = np.array([[10.0], [20.0], [30.0], [40.0]])
    new, arch = cem_update(d, samples, np.array([3.0, 0.0, 2.0, 1.0]), None, cfg)
    assert new.mean[0] == pytest.approx(0.95 * 20.0)
    assert new.cov[0, 0] == pytest.approx(0.8 * 1.0)
    assert len(arch) == 0


def test_archive_ties_and_ordering():
    cfg = CemConfig(N=4, rho_e=0.5, rho_k=0.5)
    d = SamplingDistribution.isotropic(np.zeros(1), 1.0)
    archive = EliteArchive(np.array([[7.0]]), np.array([1.0]))
    samples = np.array([[1.0], [2.0], [3.0], [4.0]])
    _, new = cem_update(d, samples, np.array([1.0, 5.0, 1.0, 0.5]), archive, cfg)
    # sorted by cost, archive first on ties, then lower sample index
    np.testing.assert_array_equal(new.vectors[:, 0], [4.0])
    cfg2 = CemConfig(N=4, rho_e=1.0, rho_k=1.0)
    _, new2 = cem_update(d, samples, np.array([1.0, 5.0, 1.0, 0.5]), archive, cfg2)
    np.testing.assert_array_equal(new2.vectors[:, 0], [4.0, 7.0, 1.0, 3.0])


def test_all_infinite_costs_inflate():
    cfg = CemConfig(N=8)
    d = SamplingDistribution.isotropic(np.ones(2), 0.5)
    new, arch = cem_update(d, np.zeros((8, 2)), np.full(8, np.inf), EliteArchive.empty(2), cfg)
    np.testing.assert_array_equal(new.mean, d.mean)
    np.testing.assert_array_equal(new.cov, 2 * d.cov)


def test_archive_validation():
    with pytest.raises(ValueError):
        EliteArchive(np.zeros((2, 1)), np.array([2.0, 1.0]))
    with pytest.raises(ValueError):
        EliteArchive(np.zeros((2, 1)), np.array([1.0]))
    stale = EliteArchive(np.zeros((1, 1)), np.array([1.0])).rebase(np.array([0.0, 5.0]))
    assert stale.stale and stale.dim == 2
    np.testing.assert_array_equal(stale.vectors, [[0.0, 5.0]])
    with pytest.raises(ValueError, match="stale"):
        cem_update(SamplingDistribution.isotropic(np.zeros(2), 1.0), np.zeros((2, 2)),
                   np.zeros(2), stale, CemConfig(N=2))


@st.composite
def update_inputs(draw):
    dim = draw(st.integers(1, 4))
    N = draw(st.integers(4, 40))
    samples = draw(arrays(np.float64, (N, dim), elements=st.floats(-10, 10)))
    costs = draw(arrays(np.float64, N, elements=st.floats(-100, 100)))
    return dim, N, samples, costs


@given(update_inputs(), st.floats(-1e3, 1e3))
def test_cem_update_shift_invariant(inp, c):
    dim, N, samples, costs = inp
    cfg = CemConfig(N=N, rho_e=0.25, rho_k=0.5)
    d = SamplingDistribution.isotropic(np.zeros(dim), 1.0)
    a, arch_a = cem_update(d, samples, costs, None, cfg)
    shifted = costs + c
    # only compare when the shift does not create ties by rounding
    if np.array_equal(np.argsort(costs, kind="stable"), np.argsort(shifted, kind="stable")):
        b, arch_b = cem_update(d, samples, shifted, None, cfg)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)
        np.testing.assert_array_equal(arch_a.vectors, arch_b.vectors)


@given(update_inputs(), st.integers(1, 5))
def test_cem_update_archive_best_never_worsens_and_cov_psd(inp, rounds):
    dim, N, samples, costs = inp
    cfg = CemConfig(N=N, rho_e=0.25, rho_k=0.5)
    d = SamplingDistribution.isotropic(np.zeros(dim), 1.0)
    archive = EliteArchive.empty(dim)
    rng = np.random.default_rng(0)
    best = np.inf
    for r in range(rounds):
        x = samples if r == 0 else sample_gaussian(d, N, rng)
        cst = costs if r == 0 else rng.standard_normal(N)
        d, archive = cem_update(d, x, cst, archive, cfg)
        assert archive.best_cost <= best
        best = archive.best_cost
        assert np.max(np.abs(d.cov - d.cov.T)) == 0.0
        assert np.linalg.eigvalsh(d.cov)[0] >= -1e-9
        assert len(archive) <= cfg.n_keep


@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-50, 50)),
       st.floats(0.01, 10.0))
def test_mppi_weights_match_unshifted_formula(costs, lam):
    w = mppi_weights(costs, lam)
    # unshifted exp(-J / lambda), normalized in log space
    np.testing.assert_allclose(w, special.softmax(-costs / lam), rtol=1e-9, atol=1e-300)
    assert w.sum() == pytest.approx(1.0)


def test_mppi_update_and_temperature():
    d = SamplingDistribution.isotropic(np.zeros(1), 1.0)
    samples = np.array([[0.0], [1.0]])
    new = mppi_update(d, samples, np.array([0.0, np.log(3.0)]), MppiConfig(N=2, temperature=1.0))
    assert new.mean[0] == pytest.approx(0.25)
    np.testing.assert_array_equal(new.cov, d.cov)
    assert mppi_temperature(np.array([1.0, 2.0, 5.0])) == pytest.approx(0.1)
    assert mppi_temperature(np.array([3.0, 3.0])) == 1.0
    np.testing.assert_array_equal(mppi_weights(np.full(3, np.inf), 1.0), np.full(3, 1 / 3))


def test_sample_gaussian_chi_square():
    rng = np.random.default_rng(11)
    a = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 0.5]])
    d = SamplingDistribution(np.array([1.0, -2.0, 0.5]), a)
    x = sample_gaussian(d, 20000, rng)
    diff = x - d.mean
    m2 = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(a), diff)
    # Mahalanobis norms follow chi-square with 3 degrees of freedom
    assert stats.kstest(m2, stats.chi2(3).cdf).pvalue > 1e-3
    np.testing.assert_allclose(np.cov(x.T), a, atol=0.05)


def test_zero_covariance_gives_mean():
    d = SamplingDistribution(np.array([1.0, 2.0]), np.zeros((2, 2)))
    x = sample_gaussian(d, 5, np.random.default_rng(0))
    np.testing.assert_array_equal(x, np.tile([1.0, 2.0], (5, 1)))


def test_psd_factor_errors():
    with pytest.raises(NumericalError) as info:
        psd_factor(np.diag([1.0, -1.0]))
    assert info.value.eigenvalue == pytest.approx(-1.0)
    L = psd_factor(np.diag([4.0, 0.0]))
    np.testing.assert_allclose(L @ L.T, np.diag([4.0, 0.0]))


def test_max_active_variance():
    d = SamplingDistribution(np.zeros(4), np.diag([0.1, 0.5, 0.2, 0.9]))
    assert max_active_variance(d, 0) == 0.1
    assert max_active_variance(d, 2) == 0.5
    with pytest.raises(ValueError):
        max_active_variance(d, 4)


def test_variance_shrinks_on_stationary_quadratic():
    cfg = CemConfig(N=128)
    dim = 4
    traces = []
    for seed in range(20):
        tr = cem_minimize(lambda x: np.sum(x * x, axis=1),
                          SamplingDistribution.isotropic(np.ones(dim), cfg.sigma0), cfg, 50,
                          np.random.default_rng(seed))
        traces.append([np.max(np.diag(c)) for c in tr.covs])
    med = np.median(np.array(traces), axis=0)
    assert np.all(np.diff(med) <= 0)


def test_cem_minimize_converges():
    cfg = CemConfig(N=256)
    tr = cem_minimize(lambda x: np.sum((x - 0.3) ** 2, axis=1),
                      SamplingDistribution.isotropic(np.zeros(5), 0.5), cfg, 60,
                      np.random.default_rng(1))
    np.testing.assert_allclose(tr.means[-1], 0.3, atol=1e-3)
    assert all(b >= a for a, b in zip(tr.best_costs[1:], tr.best_costs))
