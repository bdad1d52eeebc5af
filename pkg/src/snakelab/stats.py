"""Two-sample and goodness-of-fit tests, variance-growth regression, martingale checks."""
import itertools
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats as sps
from scipy.special import gamma

from .config import THRESHOLDS, replica_rng
from .environment import sample_scaled_logits
from .errors import ParameterError


@dataclass(frozen=True)
class StatReport:
    name: str
    statistic: float
    passed: bool
    p_value: float = None
    threshold: float = None
    sizes: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ParameterError(f"p-value {self.p_value} outside [0, 1]")

    def to_json(self):
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return json.dumps(d, default=_jsonable, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["sizes"] = tuple(d["sizes"])
        return cls(**d)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f" p={self.p_value:.4g}" if self.p_value is not None else ""
        return f"[{tag}] {self.name}: statistic={self.statistic:.6g}{extra}"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x)}")


def p_value_report(name, statistic, p, sizes=(), threshold=None, **meta):
    threshold = THRESHOLDS["p_min"] if threshold is None else threshold
    return StatReport(name, float(statistic), bool(p > threshold), float(p), threshold, tuple(sizes), meta)


def se_report(name, estimate, target, se, k=None, sizes=(), **meta):
    """Pass when |estimate - target| < k * se."""
    k = THRESHOLDS["se_moment"] if k is None else k
    z = abs(estimate - target) / se if se > 0 else (0.0 if estimate == target else np.inf)
    meta.update(estimate=float(estimate), target=float(target), se=float(se))
    return StatReport(name, float(z), bool(z < k), None, k, tuple(sizes), meta)


# ----------------------------------------------------------------------------
# Kolmogorov-Smirnov

def ks_statistic(a, b):
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_statistic_bruteforce(a, b):
    """Same statistic by evaluating both empirical CDFs pointwise (for validation)."""
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


def ks_asymptotic_p(d, na, nb):
    en = na * nb / (na + nb)
    return float(np.clip(sps.kstwobign.sf(np.sqrt(en) * d), 0.0, 1.0))


def ks_exact_p(a, b):
    """Permutation p-value P(D >= d) by enumerating all splits of the pooled sample (sizes <= 6)."""
    na, nb = len(a), len(b)
    if max(na, nb) > 6:
        raise ParameterError("exact enumeration is for sizes <= 6")
    pooled = np.concatenate([a, b]).astype(float)
    d = ks_statistic(a, b)
    hits = total = 0
    for idx in itertools.combinations(range(na + nb), na):
        mask = np.zeros(na + nb, dtype=bool)
        mask[list(idx)] = True
        total += 1
        hits += ks_statistic(pooled[mask], pooled[~mask]) >= d - 1e-12
    return hits / total


def ks_two_sample(a, b, name="ks", threshold=None, **meta):
    if len(a) < 20 or len(b) < 20:
        raise ParameterError("KS needs at least 20 points per sample")
    d = ks_statistic(a, b)
    return p_value_report(name, d, ks_asymptotic_p(d, len(a), len(b)), (len(a), len(b)), threshold, **meta)


def wasserstein(a, b):
    return float(sps.wasserstein_distance(a, b))


# ----------------------------------------------------------------------------
# chi-square for discrete laws

def pool_bins(counts, expected, min_expected=5.0):
    """Merge bins from the right until each has expected count >= min_expected."""
    counts = list(map(float, counts))
    expected = list(map(float, expected))
    while len(expected) > 1 and expected[-1] < min_expected:
        e, c = expected.pop(), counts.pop()
        expected[-1] += e
        counts[-1] += c
    # low bins can still be small when the pmf starts small
    i = 0
    while i < len(expected) - 1:
        if expected[i] < min_expected:
            e, c = expected.pop(i), counts.pop(i)
            expected[i] += e
            counts[i] += c
        else:
            i += 1
    return np.array(counts), np.array(expected)


def chi_square_discrete(counts, pmf, name="chi2", threshold=None, **meta):
    """Pearson chi-square of ``counts`` on {0, 1, ...} against ``pmf``.

    The last bin takes the remaining tail mass so expected counts sum to
    the total.
    """
    counts = np.asarray(counts, dtype=float)
    pmf = np.asarray(pmf, dtype=float)
    size = max(len(counts), len(pmf))
    c = np.zeros(size)
    c[:len(counts)] = counts
    p = np.zeros(size)
    p[:len(pmf)] = pmf[:size]
    p[-1] += max(0.0, 1.0 - p.sum())
    total = c.sum()
    obs, exp = pool_bins(c, total * p)
    if np.any((exp == 0) & (obs > 0)):
        return p_value_report(name, np.inf, 0.0, (int(total),), threshold, bins=len(obs), **meta)
    keep = exp > 0
    obs, exp = obs[keep], exp[keep]
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(obs) - 1
    p_val = float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return p_value_report(name, stat, p_val, (int(total),), threshold, bins=len(obs), **meta)


# ----------------------------------------------------------------------------
# covariance and variance growth

def autocovariance(paths, max_lag):
    """Per-row sample autocovariance (known mean 0); returns mean and SE across rows."""
    x = np.atleast_2d(np.asarray(paths, dtype=float))
    L = x.shape[1]
    rows = np.stack([np.sum(x[:, :L - k] * x[:, k:], axis=1) / (L - k) for k in range(max_lag + 1)], axis=1)
    se = rows.std(axis=0, ddof=1) / np.sqrt(len(rows)) if len(rows) > 1 else np.full(max_lag + 1, np.nan)
    return rows.mean(axis=0), se


def variance_growth(x, ns):
    """Block-sum variances: rows of ``x`` are independent stationary sequences."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    table = []
    for n in ns:
        blocks = x.shape[1] // n
        if blocks < 1:
            raise ParameterError(f"sequence shorter than block size {n}")
        sums = x[:, :blocks * n].reshape(x.shape[0], blocks, n).sum(axis=2)
        table.append((n, float(np.mean(sums ** 2))))
    return table


def hurst_regress(table):
    """H from the log-log slope of Var(S_n) ~ n^{2H}."""
    table = list(table)
    if len(table) < 2:
        raise ParameterError("need at least two block sizes")
    ns = np.array([t[0] for t in table], dtype=float)
    vs = np.array([t[1] for t in table], dtype=float)
    if len(np.unique(ns)) < 2 or np.any(vs <= 0):
        raise ParameterError("degenerate variance-growth table")
    slope = np.polyfit(np.log(ns), np.log(vs), 1)[0]
    return float(slope / 2.0)


# ----------------------------------------------------------------------------
# martingale checks

def bonferroni_z(m, alpha=None):
    alpha = THRESHOLDS["p_min"] if alpha is None else alpha
    return float(max(THRESHOLDS["se_tight"], sps.norm.isf(alpha / (2 * m))))


def martingale_check(increments, name="martingale", k=None, **meta):
    """Increments (reps, T): mean at every time within k SE of 0.

    With many time points the per-time threshold is raised to the
    Bonferroni level for a family-wise rate p_min, never below 3 SE.
    """
    x = np.atleast_2d(np.asarray(increments, dtype=float))
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    live = se > 0
    z = np.zeros_like(mean)
    z[live] = np.abs(mean[live]) / se[live]
    z[~live & (mean != 0)] = np.inf
    k = bonferroni_z(x.shape[1]) if k is None else k
    zmax = float(z.max()) if len(z) else 0.0
    return StatReport(name, zmax, bool(zmax < k), None, k, x.shape, meta)


def lag1_autocorrelation(increments):
    """Pooled lag-1 correlation of increments and its SE under independence."""
    x = np.atleast_2d(np.asarray(increments, dtype=float))
    a, b = x[:, :-1].ravel(), x[:, 1:].ravel()
    r = float(np.corrcoef(a, b)[0, 1])
    return r, 1.0 / np.sqrt(len(a))


# ----------------------------------------------------------------------------
# moment ratios

@dataclass(frozen=True)
class MomentRow:
    n: int
    ratio: float
    se: float


def moment_ratio(spec, ns, k, reps=4000, seed=0):
    """(1/D_n^k) E|l_1 + ... + l_n|^k by Monte Carlo over fresh environments."""
    out = []
    for j, n in enumerate(ns):
        rng = replica_rng(seed, j, 9)
        x = np.abs(sample_scaled_logits(spec, n, n, reps, rng).sum(axis=1)) ** k
        out.append(MomentRow(int(n), float(x.mean()), float(x.std(ddof=1) / np.sqrt(reps))))
    return out


def gaussian_abs_moment(k):
    """E|N(0,1)|^k."""
    return float(2 ** (k / 2) * gamma((k + 1) / 2) / np.sqrt(np.pi))

