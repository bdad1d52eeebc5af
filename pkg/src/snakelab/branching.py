"""Branching processes in random environment with geometric offspring.

An individual of generation i has Geom(1 - beta_{i+1}) children, that is
P(k children) = beta^k (1 - beta). The sum of k such draws is negative
binomial, which lets a whole generation be sampled in one call.
"""
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .config import replica_rng
from .environment import partial_sum_variance, sample_scaled_logits, compute_Dn
from .errors import ParameterError
from .walk import BranchingTrajectory

_STREAM_BRANCH = 3
_STREAM_SCHEDULE = 4
BLOCK = 4096


@dataclass(frozen=True)
class OffspringMoments:
    mean: float
    variance: float
    third_abs_central: float
    third_moment_bound: float


@dataclass(frozen=True)
class SurvivalEstimate:
    scaled: float
    ci_low: float
    ci_high: float
    survivors: int
    replicas: int
    n: int

    @property
    def se(self):
        p = self.survivors / self.replicas
        return self.n * np.sqrt(p * (1 - p) / self.replicas)


def negbin_step(counts, beta, rng):
    """Children of ``counts`` parents, each Geom(1 - beta); vectorised over entries."""
    counts = np.asarray(counts, dtype=np.int64)
    out = np.zeros_like(counts)
    live = counts > 0
    if np.any(live):
        p = 1.0 - np.broadcast_to(beta, counts.shape)[live]
        out[live] = rng.negative_binomial(counts[live], p)
    return out


def negbin_pmf(k, beta, size):
    return stats.nbinom.pmf(np.arange(size), k, 1.0 - beta)


def geometric_convolution_pmf(k, beta, size):
    """pmf of a sum of k Geom(1 - beta) draws by repeated convolution."""
    geom = beta ** np.arange(size) * (1.0 - beta)
    out = np.zeros(size)
    out[0] = 1.0
    for _ in range(k):
        out = np.convolve(out, geom)[:size]
    return out


def scaled_logit_schedule(renv, generations, start_site=1):
    return renv.scaled_logit(np.arange(start_site, start_site + generations))


def simulate_bpre(renv, k0, generations, seed, replica=0, start_site=1):
    """One trajectory; generation i + 1 uses beta^(n) at site start_site + i."""
    if k0 < 0:
        raise ParameterError("initial count must be nonnegative")
    rng = replica_rng(seed, replica, _STREAM_BRANCH)
    betas = renv.beta(np.arange(start_site, start_site + generations))
    counts = np.zeros(generations + 1, dtype=np.int64)
    counts[0] = k0
    for i in range(generations):
        if counts[i] == 0:
            break
        counts[i + 1] = rng.negative_binomial(counts[i], 1.0 - betas[i])
    return BranchingTrajectory(counts / renv.n, renv.n, k0 / renv.n)


def bpre_ensemble(betas, k0, replicas, seed, record=None):
    """Counts at the generations in ``record`` for ``replicas`` independent runs.

    ``betas`` is either one schedule (shared environment) or a callable
    ``betas(rng, size) -> (size, generations)`` drawing a fresh environment
    per replica. Replicas are processed in fixed blocks with their own
    streams, so results do not depend on batching or threads.
    """
    shared = not callable(betas)
    gens = len(betas) if shared else None
    out = []
    for block, start in enumerate(range(0, replicas, BLOCK)):
        size = min(BLOCK, replicas - start)
        rng = replica_rng(seed, block, _STREAM_BRANCH)
        sched = np.broadcast_to(betas, (size, gens)) if shared else betas(replica_rng(seed, block, _STREAM_SCHEDULE), size)
        gens = sched.shape[1]
        rec = np.arange(gens + 1) if record is None else np.asarray(record)
        counts = np.full(size, k0, dtype=np.int64)
        rows = np.zeros((size, len(rec)), dtype=np.int64)
        if 0 in rec:
            rows[:, np.flatnonzero(rec == 0)] = k0
        live = np.flatnonzero(counts > 0)
        for g in range(gens):
            if len(live) == 0:
                break
            counts[live] = rng.negative_binomial(counts[live], 1.0 - sched[live, g])
            live = live[counts[live] > 0]
            hit = np.flatnonzero(rec == g + 1)
            if len(hit):
                rows[:, hit] = counts[:, None]
        out.append(rows)
    return np.concatenate(out, axis=0)


def offspring_mean(renv, i):
    m = float(renv.offspring_means(i))
    beta = float(renv.beta(i))
    k = np.arange(0, 4000)
    pmf = np.exp(k * np.log(beta) + np.log1p(-beta))
    third = float(np.sum(np.abs(k - m) ** 3 * pmf))
    return OffspringMoments(m, m * (1.0 + m), third, (2 - beta) * beta / (1 - beta) ** 3)


def offspring_product(renv, k, start_site=1):
    """prod_{i<=k} m_i, computed as exp(-(l_1 + ... + l_k)/D_n)."""
    return float(np.exp(-np.sum(scaled_logit_schedule(renv, k, start_site))))


def h_survival(b, delta):
    if delta <= 0:
        raise ParameterError("delta must be positive")
    if b == 0:
        return 1.0 / delta
    return -b / np.expm1(-b * delta)


def survival_exact(betas):
    """P(Z_k > 0 | Z_0 = 1) for linear-fractional (geometric) offspring.

    1/P = 1/mu_k + sum_{j=1..k} 1/mu_{j-1}, with mu_j the product of the
    first j offspring means.
    """
    betas = np.asarray(betas, dtype=float)
    log_mu = np.concatenate([[0.0], np.cumsum(np.log(betas) - np.log1p(-betas))])
    inv = np.exp(-log_mu)
    return 1.0 / (inv[-1] + inv[:-1].sum(axis=-1))


def wilson_interval(successes, trials, level=0.95):
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return ci.low, ci.high


def survival_estimate(schedule, n, delta, replicas, seed, k0=1):
    """n * P(Z_{floor(n delta)} > 0) by Monte Carlo with a Wilson interval."""
    if replicas < 10 ** 4:
        raise ParameterError("survival estimates need at least 1e4 replicas")
    gens = int(np.floor(n * delta))
    if isinstance(schedule, _EnvSchedule):
        sched = schedule.with_length(gens)
    elif callable(schedule):
        sched = schedule
    else:
        sched = np.asarray(schedule, dtype=float)[:gens]
        if len(sched) < gens:
            raise ParameterError("schedule shorter than floor(n delta)")
    if k0 == 0:
        return SurvivalEstimate(0.0, 0.0, 0.0, 0, replicas, n)
    final = bpre_ensemble(sched, k0, replicas, seed, record=[gens])[:, 0]
    hits = int(np.count_nonzero(final))
    lo, hi = wilson_interval(hits, replicas)
    return SurvivalEstimate(n * hits / replicas, n * lo, n * hi, hits, replicas, n)


def fixed_geometric_schedule(b, n, generations):
    """beta with 1 - beta = 1/2 - b/(4n) in every generation."""
    return np.full(generations, 0.5 + b / (4.0 * n))


def environment_schedule(spec, n, generations=None):
    """Callable drawing fresh rescaled environments for ``bpre_ensemble``."""
    return _EnvSchedule(spec, n, generations)


class _EnvSchedule:
    def __init__(self, spec, n, generations=None):
        self.spec = spec
        self.n = n
        self.generations = generations

    def with_length(self, generations):
        return _EnvSchedule(self.spec, self.n, generations)

    def __call__(self, rng, size):
        x = sample_scaled_logits(self.spec, self.n, self.generations, size, rng)
        return 1.0 / (1.0 + np.exp(x))


def matched_b(spec, n, delta):
    """b* with e^{b* delta} = 1 + E[(l_1 + ... + l_{floor(n delta)})^2] / (2 D_n^2)."""
    return float(np.log(mean_bound_rhs(spec, n, delta)) / delta)


def mean_bound_rhs(spec, n, delta):
    k = int(np.floor(n * delta))
    return 1.0 + partial_sum_variance(spec, k) / (2.0 * compute_Dn(spec, n) ** 2)


def variance_functional(renv, t):
    """V(t) = (1/n) sum_{i <= floor(nt)} beta/(1-beta)^2."""
    k = int(np.floor(renv.n * t + 1e-9))
    if k == 0:
        return 0.0
    m = renv.offspring_means(np.arange(1, k + 1))
    return float(np.sum(m * (1.0 + m)) / renv.n)


@dataclass(frozen=True)
class MeanBound:
    mc_mean: float
    mc_se: float
    rhs: float
    exact_mean: float


def mean_bound(spec, n, delta, replicas, seed):
    """Annealed mean of M(floor(n delta)) from mass 1 against 1 + E[S^2]/(2 D_n^2).

    ``exact_mean`` averages the conditional means prod m_i over the same
    environments, a lower-variance estimate of the same quantity.
    """
    gens = int(np.floor(n * delta))
    sched = _EnvSchedule(spec, n, gens)
    final = bpre_ensemble(sched, n, replicas, seed, record=[gens])[:, 0] / n
    cond = []
    for block, start in enumerate(range(0, replicas, BLOCK)):
        size = min(BLOCK, replicas - start)
        b = sched(replica_rng(seed, block, _STREAM_SCHEDULE), size)
        cond.append(np.prod(b / (1 - b), axis=1))
    cond = np.concatenate(cond)
    return MeanBound(float(final.mean()), float(final.std(ddof=1) / np.sqrt(replicas)),
                     mean_bound_rhs(spec, n, delta), float(cond.mean()))


def pgf_residual(logit, D_n):
    """|m - (1 - l/D + l^2/(2 D^2))| with m = beta/(1-beta) = exp(-l/D)."""
    x = logit / D_n
    return float(abs(np.exp(-x) - (1.0 - x + 0.5 * x * x)))


def pgf_expansion_check(renv, i):
    return pgf_residual(float(renv.base.logit(i)), renv.D_n)
