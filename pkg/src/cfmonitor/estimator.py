"""Online Bayesian estimation of the actuation dynamics parameters
(K_L, T_L) from windowed (accel, demand, jerk) observations.

A stochastic-gradient Langevin sampler first descends to the posterior
mode and then walks around it; post-burn-in iterates are kept as
posterior samples.  Each window's posterior mean seeds the next window's
prior (variance reset to a tunable regularization level), so history
enters only through the prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ObservationBatch",
    "GaussianPrior",
    "SgldHyper",
    "PosteriorEstimate",
    "model_jerk",
    "log_posterior",
    "grad_log_posterior",
    "sgld_gradient",
    "sgld_run",
    "posterior_summary",
    "update_prior",
    "batch_from_series",
]

# parameter vector ordering is (K_L, T_L) throughout


@dataclass(frozen=True)
class ObservationBatch:
    """Windowed (a_i, u_i, adot_i) triples."""

    accel: np.ndarray
    demand: np.ndarray
    jerk: np.ndarray
    t_start: float = 0.0
    t_end: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.accel, dtype=float)
        u = np.asarray(self.demand, dtype=float)
        j = np.asarray(self.jerk, dtype=float)
        if not (len(a) == len(u) == len(j)):
            raise ValueError("accel/demand/jerk lengths differ")
        if len(a) < 2:
            raise ValueError("batch needs at least 2 observations")
        for name, arr in (("accel", a), ("demand", u), ("jerk", j)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        object.__setattr__(self, "accel", a)
        object.__setattr__(self, "demand", u)
        object.__setattr__(self, "jerk", j)

    def __len__(self) -> int:
        return len(self.accel)


def batch_from_series(
    accel: np.ndarray,
    demand: np.ndarray,
    t_s: float,
    t_start: float = 0.0,
) -> ObservationBatch:
    """Build a batch from logged accel/demand series, with jerk by central
    finite differences (one-sided at the edges)."""
    accel = np.asarray(accel, dtype=float)
    jerk = np.gradient(accel, t_s)
    return ObservationBatch(accel, demand, jerk,
                            t_start, t_start + t_s * len(accel))


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic Gaussian prior on (K_L, T_L)."""

    mean: tuple[float, float]
    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("prior variance must be positive")

    def log_density(self, theta) -> float:
        d = np.asarray(theta, dtype=float) - np.asarray(self.mean)
        return float(-math.log(2 * math.pi * self.variance)
                     - d @ d / (2 * self.variance))

    def grad_log_density(self, theta) -> np.ndarray:
        d = np.asarray(theta, dtype=float) - np.asarray(self.mean)
        return -d / self.variance


@dataclass(frozen=True)
class SgldHyper:
    """Sampler settings.  Step size decays as eta_1/k; iterates after
    ``burn_in_c`` are retained as posterior samples.  ``max_drift`` caps
    the per-iteration drift step in log-parameter space so early
    iterations with large step sizes cannot diverge."""

    eta_1: float = 0.1
    K_iters: int = 4000
    burn_in_c: int | None = None  # default: 60% of K_iters
    minibatch_n: int = 32
    sigma_sq: float = 0.01
    seed: int = 0
    max_drift: float = 0.1

    def __post_init__(self):
        if self.burn_in_c is None:
            object.__setattr__(self, "burn_in_c", int(0.6 * self.K_iters))
        if self.eta_1 <= 0:
            raise ValueError("eta_1 must be positive")
        if not 0 < self.burn_in_c < self.K_iters:
            raise ValueError("burn_in_c must lie strictly inside (0, K_iters)")
        if self.minibatch_n < 1:
            raise ValueError("minibatch_n must be at least 1")
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")
        if self.max_drift <= 0:
            raise ValueError("max_drift must be positive")


@dataclass
class PosteriorEstimate:
    """Post-burn-in sample set with its empirical summary."""

    samples: np.ndarray  # (n, 2), columns (K_L, T_L)
    mean: np.ndarray
    covariance: np.ndarray
    credible: np.ndarray  # (2, 2): per-parameter (lo, hi), central 95%
    low_confidence: bool = False

    @property
    def K_L(self) -> float:
        return float(self.mean[0])

    @property
    def T_L(self) -> float:
        return float(self.mean[1])


def model_jerk(a, u, theta) -> float:
    """Deterministic jerk predicted by the actuation model."""
    K_L, T_L = theta
    if T_L <= 0:
        raise ValueError("T_L must be positive")
    return (K_L * u - a) / T_L


def log_posterior(
    batch: ObservationBatch, theta, prior: GaussianPrior, sigma_sq: float
) -> float:
    """Log prior plus full-batch Gaussian log likelihood (additive jerk
    noise with variance sigma_sq)."""
    K_L, T_L = theta
    if T_L <= 0:
        raise ValueError("T_L must be positive")
    r = batch.jerk - (K_L * batch.demand - batch.accel) / T_L
    n = len(batch)
    loglik = -0.5 * n * math.log(sigma_sq) - float(r @ r) / (2 * sigma_sq)
    return prior.log_density(theta) + loglik


def grad_log_posterior(
    batch: ObservationBatch,
    theta,
    prior: GaussianPrior,
    sigma_sq: float,
    n_total: int | None = None,
) -> np.ndarray:
    """Analytic gradient of the log posterior in (K_L, T_L).

    When ``batch`` is a minibatch, ``n_total`` rescales the likelihood sum
    to the full-batch size.
    """
    K_L, T_L = theta
    if T_L <= 0:
        raise ValueError("T_L must be positive")
    a, u = batch.accel, batch.demand
    r = batch.jerk - (K_L * u - a) / T_L
    g_K = float(r @ (u / T_L)) / sigma_sq
    g_T = float(r @ ((a - K_L * u) / T_L**2)) / sigma_sq
    scale = 1.0 if n_total is None else n_total / len(batch)
    return prior.grad_log_density(theta) + scale * np.array([g_K, g_T])


def sgld_gradient(
    minibatch: ObservationBatch,
    theta,
    prior: GaussianPrior,
    hyper: SgldHyper,
    n_total: int,
    eta_t: float,
    noise: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One Langevin increment: half-step-scaled stochastic gradient of the
    log posterior plus injected N(0, eta_t I) noise.

    Returns (increment, noise); pass ``noise`` explicitly for testing.
    """
    if len(minibatch) > n_total:
        raise ValueError("minibatch larger than the full batch")
    g = grad_log_posterior(minibatch, theta, prior, hyper.sigma_sq, n_total)
    if noise is None:
        noise = math.sqrt(eta_t) * np.random.default_rng(hyper.seed).standard_normal(2)
    return 0.5 * eta_t * g + noise, noise


def _identifiability(batch: ObservationBatch) -> bool:
    """True when the window carries enough excitation to identify both
    parameters: the demand must actually vary and must not be an affine
    function of the acceleration (near-collinear (u, a) identifies only
    their ratio, not the gain and lag separately)."""
    u = batch.demand - batch.demand.mean()
    a = batch.accel - batch.accel.mean()
    su, sa = float(np.std(u)), float(np.std(a))
    if su < 5e-2:
        return False
    if sa > 0:
        corr = float(u @ a) / (len(u) * su * sa)
        if abs(corr) > 0.995:
            return False
    return True


def sgld_run(
    batch: ObservationBatch,
    prior: GaussianPrior,
    hyper: SgldHyper,
    fix_lag: float | None = None,
) -> PosteriorEstimate:
    """Optimization-then-sampling over the window's posterior.

    The chain iterates in log-parameter space (positivity is structural;
    the log-volume term is included so retained samples follow the
    (K_L, T_L) posterior itself).  ``fix_lag`` freezes T_L at the given
    value and samples K_L only.  Deterministic given ``hyper.seed``.
    """
    rng = np.random.default_rng(hyper.seed)
    n_total = len(batch)
    n_mb = min(hyper.minibatch_n, n_total)

    mean = np.asarray(prior.mean, dtype=float)
    theta0 = np.where(mean > 0, mean, np.array([1.0, 0.3]))
    if fix_lag is not None:
        if fix_lag <= 0:
            raise ValueError("fix_lag must be positive")
        theta0 = np.array([theta0[0], fix_lag])
    phi = np.log(theta0)

    n_keep = hyper.K_iters - hyper.burn_in_c
    samples = np.empty((n_keep, 2))
    kept = 0
    for k in range(1, hyper.K_iters + 1):
        eta_k = hyper.eta_1 / k
        idx = rng.choice(n_total, size=n_mb, replace=False)
        a, u, j = batch.accel[idx], batch.demand[idx], batch.jerk[idx]
        theta = np.exp(phi)
        K_L, T_L = theta
        r = j - (K_L * u - a) / T_L
        g_lik = np.array([float(r @ (u / T_L)),
                          float(r @ ((a - K_L * u) / T_L**2))]) / hyper.sigma_sq
        g = prior.grad_log_density(theta) + (n_total / n_mb) * g_lik
        # chain rule to log space plus the log-volume term of the transform
        g_phi = theta * g + 1.0
        if fix_lag is not None:
            g_phi[1] = 0.0
        drift = 0.5 * eta_k * g_phi
        norm = float(np.linalg.norm(drift))
        if norm > hyper.max_drift:
            drift *= hyper.max_drift / norm
        noise = math.sqrt(eta_k) * rng.standard_normal(2)
        if fix_lag is not None:
            noise[1] = 0.0
        phi = phi + drift + noise
        if k > hyper.burn_in_c:
            samples[kept] = np.exp(phi)
            kept += 1

    est = posterior_summary(samples)
    est.low_confidence = fix_lag is None and not _identifiability(batch)
    return est


def posterior_summary(samples: np.ndarray) -> PosteriorEstimate:
    """Empirical mean, covariance and central 95% intervals."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False)
    lo = np.quantile(samples, 0.025, axis=0)
    hi = np.quantile(samples, 0.975, axis=0)
    return PosteriorEstimate(samples, mean, np.atleast_2d(cov),
                             np.column_stack([lo, hi]))


def update_prior(prev: PosteriorEstimate, lam: float) -> GaussianPrior:
    """Carry the previous posterior mean forward, resetting the variance
    to the regularization level ``lam``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    return GaussianPrior((float(prev.mean[0]), float(prev.mean[1])), lam)
