"""Gaussian sampling and distribution updates: CEM with keep-elites/EWMA, and MPPI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .exceptions import NumericalError
from .types import PSD_TOL, SamplingDistribution
from .validation import check_fraction, check_int, check_positive


def ceil_rate(rate, n):
    """ceil(rate * n) evaluated on the decimal value of ``rate`` (no float fuzz)."""
    return math.ceil(Fraction(repr(float(rate))) * n)


@dataclass(frozen=True)
class CemConfig:
    N: int = 1024
    rho_e: float = 0.03
    rho_k: float = 0.04
    alpha_mu: float = 0.95
    alpha_sigma: float = 0.2
    sigma0: float = 0.25
    cov_jitter: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "N", check_int(self.N, "N", minimum=2))
        check_fraction(self.rho_e, "rho_e", low_open=True)
        check_fraction(self.rho_k, "rho_k")
        check_fraction(self.alpha_mu, "alpha_mu")
        check_fraction(self.alpha_sigma, "alpha_sigma")
        check_positive(self.sigma0, "sigma0")
        check_positive(self.cov_jitter, "cov_jitter", strict=False)
        if self.n_keep > self.n_elites:
            raise ValueError("N_keep must not exceed N_e")

    @property
    def n_elites(self):
        """N_e = ceil(rho_e * N)."""
        return ceil_rate(self.rho_e, self.N)

    @property
    def n_keep(self):
        """N_keep = ceil(rho_k * rho_e * N)."""
        return math.ceil(Fraction(repr(float(self.rho_k))) * Fraction(repr(float(self.rho_e))) * self.N)


@dataclass(frozen=True)
class MppiConfig:
    """``temperature=None`` freezes lambda to 0.1 x (median - min) cost of the first batch."""

    N: int = 1024
    temperature: Optional[float] = None
    sigma0: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "N", check_int(self.N, "N", minimum=2))
        if self.temperature is not None:
            check_positive(self.temperature, "temperature")
        check_positive(self.sigma0, "sigma0")


@dataclass(frozen=True, eq=False)
class EliteArchive:
    """Best (vector, cost) pairs carried between iterations, sorted by cost.

    A ``stale`` archive holds vectors whose costs were computed on a shorter
    horizon and must be re-evaluated before use.
    """

    vectors: np.ndarray
    costs: np.ndarray
    stale: bool = False

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, ndmin=2)
        costs = np.array(self.costs, dtype=np.float64, ndmin=1)
        if vectors.shape[0] != costs.shape[0]:
            raise ValueError("archive vectors and costs are misaligned")
        if not self.stale and costs.size > 1 and np.any(np.diff(costs) < 0):
            raise ValueError("archive must be sorted by ascending cost")
        vectors.setflags(write=False)
        costs.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "costs", costs)

    @classmethod
    def empty(cls, dim):
        return cls(np.empty((0, dim)), np.empty(0))

    def __len__(self):
        return self.costs.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def best_cost(self):
        return self.costs[0] if len(self) and not self.stale else math.inf

    def rebase(self, mean):
        """Extend every vector with the trailing coordinates of ``mean``; costs become stale."""
        mean = np.asarray(mean, dtype=np.float64)
        extra = mean.shape[0] - self.dim
        if extra < 0:
            raise ValueError("cannot rebase an archive onto a smaller space")
        tail = np.broadcast_to(mean[self.dim:], (len(self), extra))
        return EliteArchive(np.hstack([self.vectors, tail]), np.full(len(self), np.nan), stale=True)


def psd_factor(cov, jitter=1e-8):
    """Return ``L`` with ``L @ L.T == cov`` for a symmetric PSD ``cov``.

    Cholesky first; singular matrices fall back to an eigendecomposition.
    Materially negative spectra get ``jitter * I`` added once; if that still
    fails a :class:`NumericalError` names the offending eigenvalue.
    """
    cov = np.asarray(cov, dtype=np.float64)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    lam, vec = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam[0] >= -PSD_TOL * scale:
        return vec * np.sqrt(np.clip(lam, 0.0, None))
    repaired = cov + jitter * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(repaired)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"covariance is not positive semidefinite (eigenvalue {lam[0]:.6e})",
            eigenvalue=float(lam[0]),
        ) from None


def sample_gaussian(d, n, rng, jitter=1e-8):
    """Draw ``n`` flat knot vectors from ``d``; rows of an (n, dim) array."""
    n = check_int(n, "N", minimum=1)
    L = psd_factor(d.cov, jitter)
    z = rng.standard_normal((n, d.dim))
    return d.mean + z @ L.T


def _sorted_pool(samples, costs, archive):
    samples = np.asarray(samples, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] != costs.shape[0]:
        raise ValueError("samples and costs are misaligned")
    costs = np.where(np.isnan(costs), np.inf, costs)
    if archive is not None and len(archive):
        if archive.stale:
            raise ValueError("stale archive must be re-evaluated before an update")
        samples = np.vstack([archive.vectors, samples])
        costs = np.concatenate([archive.costs, costs])
    order = np.argsort(costs, kind="stable")
    return samples[order], costs[order]


def cem_update(d, samples, costs, archive, cfg):
    """One CEM step with keep-elites and EWMA smoothing.

    Elites are the ``N_e`` lowest-cost members of samples plus archive (archive
    first on ties, then lower sample index). Returns the new distribution and
    archive. If every cost is infinite the mean is kept and the covariance
    doubled.
    """
    pool, pool_costs = _sorted_pool(samples, costs, archive)
    n_finite = int(np.sum(np.isfinite(pool_costs)))
    if n_finite == 0:
        return SamplingDistribution._trusted(d.mean, 2.0 * d.cov), archive
    n_e = min(cfg.n_elites, n_finite)
    elites = pool[:n_e]
    elite_mean = elites.mean(axis=0)
    centered = elites - elite_mean
    elite_cov = centered.T @ centered / n_e

    mean = cfg.alpha_mu * elite_mean + (1.0 - cfg.alpha_mu) * d.mean
    cov = cfg.alpha_sigma * elite_cov + (1.0 - cfg.alpha_sigma) * d.cov
    cov = cov + cfg.cov_jitter * np.eye(d.dim)
    cov = 0.5 * (cov + cov.T)

    n_keep = min(cfg.n_keep, n_finite)
    new_archive = EliteArchive(pool[:n_keep], pool_costs[:n_keep])
    return SamplingDistribution._trusted(mean, cov), new_archive


def mppi_temperature(costs):
    """0.1 x (median - min) of the finite costs; 1.0 when they are all equal."""
    finite = np.asarray(costs, dtype=np.float64)
    finite = finite[np.isfinite(finite)]
    if finite.size == 0:
        return 1.0
    spread = float(np.median(finite) - np.min(finite))
    return 0.1 * spread if spread > 0 else 1.0


def mppi_weights(costs, temperature):
    """Normalized exp(-(J - min J) / lambda); uniform if all costs are infinite."""
    costs = np.asarray(costs, dtype=np.float64)
    finite = np.isfinite(costs)
    if not finite.any():
        return np.full(costs.shape, 1.0 / costs.size)
    shifted = np.where(finite, costs - np.min(costs[finite]), np.inf)
    w = np.exp(-shifted / temperature)
    return w / w.sum()


def mppi_update(d, samples, costs, cfg, temperature=None):
    """Exponentially weighted mean update; the covariance is left unchanged."""
    lam = cfg.temperature if temperature is None else temperature
    if lam is None:
        lam = mppi_temperature(costs)
    w = mppi_weights(costs, lam)
    mean = w @ np.asarray(samples, dtype=np.float64)
    return SamplingDistribution._trusted(mean, d.cov)


def max_active_variance(d, kappa):
    """Largest diagonal covariance entry over coordinates 0..kappa."""
    kappa = check_int(kappa, "kappa", minimum=0)
    if kappa >= d.dim:
        raise ValueError(f"kappa={kappa} out of range for dimension {d.dim}")
    return float(np.max(np.diag(d.cov)[: kappa + 1]))


@dataclass
class CemTrace:
    means: list = field(default_factory=list)
    covs: list = field(default_factory=list)
    best_costs: list = field(default_factory=list)
    best: Optional[np.ndarray] = None
    best_cost: float = math.inf


def cem_minimize(objective, d, cfg, iterations, rng):
    """Minimize a vectorized ``objective`` (rows -> costs) with CEM.

    Returns a :class:`CemTrace` with the (mean, cov) after every iteration.
    """
    archive = EliteArchive.empty(d.dim)
    trace = CemTrace()
    for _ in range(check_int(iterations, "iterations", minimum=1)):
        x = sample_gaussian(d, cfg.N, rng, cfg.cov_jitter)
        costs = np.asarray(objective(x), dtype=np.float64)
        j = int(np.argmin(np.where(np.isnan(costs), np.inf, costs)))
        if costs[j] < trace.best_cost:
            trace.best_cost = float(costs[j])
            trace.best = x[j].copy()
        d, archive = cem_update(d, x, costs, archive, cfg)
        trace.means.append(d.mean)
        trace.covs.append(d.cov)
        trace.best_costs.append(trace.best_cost)
    return trace
