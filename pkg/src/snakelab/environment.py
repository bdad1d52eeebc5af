"""Random environments, their rescaling and the discrete potential.

An environment is a two-sided sequence of up-step probabilities beta_i on the
sites -N..N, stored through its logits l_i = ln((1 - beta_i) / beta_i). Two
kinds are provided:

``iid-logit``
    independent logits, uniform on a symmetric interval bounded by g0.
``gaussian-hermite``
    l_i = g0 * tanh(X_i) where X is fractional Gaussian noise with Hurst
    index H, generated exactly by circulant embedding.

Rescaling by a normalising sequence D_n gives beta_i^(n) = 1 / (1 + exp(l_i / D_n)),
and the partial sums of l_i / D_n give the piecewise-constant potential W^n.
"""
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from .config import replica_rng
from .errors import ParameterError

KINDS = ("iid-logit", "gaussian-hermite")
QUAD_NODES = 64
_STREAM_ENV = 1


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "gaussian-hermite"
    length: int = 1024
    v_bound: float = 0.25
    sigma: float = 1.0
    hurst: float = 0.7
    moment_order: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown environment kind {self.kind!r}")
        if not 0.0 < self.v_bound < 0.5:
            raise ParameterError("v_bound must lie in (0, 1/2)")
        if self.length < 1:
            raise ParameterError("length must be positive")
        if self.sigma <= 0:
            raise ParameterError("sigma must be positive")
        if self.moment_order < 3:
            raise ParameterError("moment_order must be at least 3")
        # H = 1/2 is admitted as the independent boundary case.
        if self.kind == "gaussian-hermite" and not 0.5 <= self.hurst < 1.0:
            raise ParameterError("hurst must lie in [1/2, 1)")

    @property
    def g0(self):
        return float(np.log((1.0 - self.v_bound) / self.v_bound))

    @property
    def n_sites(self):
        return 2 * self.length + 1

    @property
    def iid_half_width(self):
        # uniform on [-a, a] has variance a^2/3; cap the width at g0
        return min(self.sigma * np.sqrt(3.0), self.g0)

    @property
    def logit_sd(self):
        """Standard deviation of a single logit (after truncation)."""
        if self.kind == "iid-logit":
            return self.iid_half_width / np.sqrt(3.0)
        return float(np.sqrt(transform_covariance(self.hurst, self.g0, 1)[0]))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GaussianSeq:
    values: np.ndarray
    hurst: float


@dataclass(frozen=True)
class Environment:
    """Logits and betas on sites ``-N..N`` (array index = site + N)."""
    logits: np.ndarray
    betas: np.ndarray
    spec: EnvironmentSpec
    gaussians: np.ndarray = field(default=None, repr=False)

    @property
    def first_site(self):
        return -((len(self.logits) - 1) // 2)

    @property
    def last_site(self):
        return (len(self.logits) - 1) // 2

    def index(self, sites):
        sites = np.asarray(sites)
        if np.any(sites < self.first_site) or np.any(sites > self.last_site):
            raise ParameterError("site outside generated environment")
        return sites - self.first_site

    def logit(self, sites):
        return self.logits[self.index(sites)]

    def beta(self, sites):
        return self.betas[self.index(sites)]


@dataclass(frozen=True)
class RescaledEnvironment:
    base: Environment
    n: int
    D_n: float
    scaled_logits: np.ndarray
    betas: np.ndarray

    @property
    def first_site(self):
        return self.base.first_site

    @property
    def last_site(self):
        return self.base.last_site

    @property
    def v_prime(self):
        return 1.0 / (1.0 + np.exp(self.base.spec.g0 / self.D_n))

    def index(self, sites):
        return self.base.index(sites)

    def beta(self, sites):
        return self.betas[self.index(sites)]

    def scaled_logit(self, sites):
        return self.scaled_logits[self.index(sites)]

    def offspring_means(self, sites):
        """beta / (1 - beta) = exp(-l / D_n), evaluated from the logits."""
        return np.exp(-self.scaled_logit(sites))


@dataclass(frozen=True)
class PotentialPath:
    """Piecewise-constant potential; ``values[k]`` holds W on cell first_cell + k.

    Cell c is the interval [c/n, (c+1)/n).
    """
    n: int
    first_cell: int
    values: np.ndarray

    @property
    def grid_step(self):
        return 1.0 / self.n

    @property
    def last_cell(self):
        return self.first_cell + len(self.values) - 1

    @property
    def window(self):
        return self.first_cell / self.n, (self.last_cell + 1) / self.n

    def cell_of(self, x):
        return np.floor(np.asarray(x, dtype=float) * self.n).astype(np.int64)

    def __call__(self, x):
        cells = self.cell_of(x)
        if np.any(cells < self.first_cell) or np.any(cells > self.last_cell):
            raise ParameterError("point outside the potential window")
        return self.values[cells - self.first_cell]

    @classmethod
    def constant(cls, value, n, x_lo, x_hi):
        lo = int(np.floor(x_lo * n))
        hi = int(np.ceil(x_hi * n))
        return cls(n, lo, np.full(hi - lo, float(value)))


# ----------------------------------------------------------------------------
# generation

def logit_to_beta(logits):
    return expit(-np.asarray(logits, dtype=float))


def beta_to_logit(betas):
    betas = np.asarray(betas, dtype=float)
    return np.log1p((1.0 - 2.0 * betas) / betas)


def gen_iid_logits(spec, replica=0):
    if spec.kind != "iid-logit":
        raise ParameterError("gen_iid_logits needs kind 'iid-logit'")
    rng = replica_rng(spec.seed, replica, _STREAM_ENV)
    a = spec.iid_half_width
    logits = rng.uniform(-a, a, size=spec.n_sites)
    return Environment(logits, logit_to_beta(logits), spec)


def fgn_autocov(hurst, lags):
    k = np.abs(np.asarray(lags, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k ** h2 + np.abs(k - 1) ** h2)


def _embedding_sqrt_eigs(hurst, m):
    r = fgn_autocov(hurst, np.arange(m + 1))
    row = np.concatenate([r, r[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -1e-9 * eig.max():
        raise RuntimeError("circulant embedding is not nonnegative definite")
    return np.sqrt(np.clip(eig, 0.0, None) / len(row))


def fgn_paths(hurst, length, n_paths, rng):
    """``n_paths`` independent unit-variance fGn sequences of ``length``.

    Davies-Harte: both real and imaginary parts of one FFT are used, each an
    exact independent draw.
    """
    m = 1
    while m < length:
        m *= 2
    scale = _embedding_sqrt_eigs(hurst, m)
    out = np.empty((n_paths, length))
    done = 0
    while done < n_paths:
        noise = rng.standard_normal((2, 2 * m))
        y = np.fft.fft(scale * (noise[0] + 1j * noise[1]))
        for part in (y.real, y.imag):
            if done < n_paths:
                out[done] = part[:length]
                done += 1
    return out


def gen_fgn(spec, replica=0, length=None):
    if length is None:
        length = spec.n_sites
    rng = replica_rng(spec.seed, replica, _STREAM_ENV)
    return GaussianSeq(fgn_paths(spec.hurst, length, 1, rng)[0], spec.hurst)


def transform(x, g0):
    """The bounded odd transform G(x) = g0 tanh(x)."""
    return g0 * np.tanh(x)


def hermite_transform(x, spec):
    values = x.values if isinstance(x, GaussianSeq) else np.asarray(x)
    logits = transform(values, spec.g0)
    return Environment(logits, logit_to_beta(logits), spec, gaussians=values)


def generate_environment(spec, replica=0):
    if spec.kind == "iid-logit":
        return gen_iid_logits(spec, replica)
    return hermite_transform(gen_fgn(spec, replica), spec)


# ----------------------------------------------------------------------------
# normalisation

def _gh_rule(nodes=QUAD_NODES):
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / w.sum()


def hermite_c1(g0, nodes=QUAD_NODES):
    """First Hermite coefficient E[G(X) X]."""
    x, w = _gh_rule(nodes)
    return float(np.sum(w * transform(x, g0) * x))


_COV_CACHE = {}


def transform_covariance(hurst, g0, max_lag):
    """c(k) = E[G(X)G(Y)], corr(X, Y) = r(k), for k < max_lag (cached)."""
    key = (float(hurst), float(g0))
    have = _COV_CACHE.get(key)
    if have is not None and len(have) >= max_lag:
        return have[:max_lag]
    size = max(max_lag, 2 * len(have) if have is not None else 1024)
    x, w = _gh_rule()
    gx = transform(x, g0)
    rho = fgn_autocov(hurst, np.arange(size))
    rho[0] = 1.0
    out = np.empty(size)
    for start in range(0, size, 1024):
        r = rho[start:start + 1024, None, None]
        s = np.sqrt(np.clip(1.0 - r * r, 0.0, None))
        gy = transform(r * x[None, :, None] + s * x[None, None, :], g0)
        inner = np.einsum("kab,b->ka", gy, w)
        out[start:start + 1024] = inner @ (w * gx)
    _COV_CACHE[key] = out
    return out[:max_lag]


def partial_sum_variance(spec, n):
    """Var(l_1 + ... + l_n)."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    if spec.kind == "iid-logit":
        return n * spec.logit_sd ** 2
    c = transform_covariance(spec.hurst, spec.g0, n)
    k = np.arange(1, n)
    return float(n * c[0] + 2.0 * np.sum((n - k) * c[1:]))


def compute_Dn(spec, n):
    return float(np.sqrt(partial_sum_variance(spec, n)))


def variance_growth_table(spec, ns):
    return np.array([[n, partial_sum_variance(spec, int(n))] for n in ns], dtype=float)


def rescale_env(env, n, D_n):
    if D_n <= 0:
        raise ParameterError("D_n must be positive")
    scaled = env.logits / D_n
    return RescaledEnvironment(env, int(n), float(D_n), scaled, logit_to_beta(scaled))


def rescaled_environment(spec, n, replica=0):
    """Generate an environment and rescale it with the exact D_n."""
    env = generate_environment(spec, replica)
    return rescale_env(env, n, compute_Dn(spec, n))


def constant_environment(beta, length, n=1, D_n=1.0):
    """Deterministic environment with every beta^(n)_i equal to ``beta``."""
    spec = EnvironmentSpec(kind="iid-logit", length=length, sigma=1e-300)
    logit = float(beta_to_logit(beta)) * D_n
    logits = np.full(spec.n_sites, logit)
    env = Environment(logits, logit_to_beta(logits), spec)
    return rescale_env(env, n, D_n)


def discrete_potential(renv, x_range):
    """W^n on the cells covering ``x_range = (x_lo, x_hi)``."""
    n = renv.n
    lo = int(np.floor(x_range[0] * n))
    hi = int(np.ceil(x_range[1] * n)) - 1
    hi = max(hi, lo)
    if lo + 1 < renv.first_site or hi > renv.last_site:
        raise ParameterError("potential range outside generated environment")
    cells = np.arange(lo, hi + 1)
    values = np.zeros(len(cells))
    pos = cells > 0
    if pos.any():
        csum = np.cumsum(renv.scaled_logit(np.arange(1, cells[-1] + 1)))
        values[pos] = csum[cells[pos] - 1]
    neg = cells < 0
    if neg.any():
        # W(c) = -(l_{c+1} + ... + l_0)/D_n for c < 0
        sites = np.arange(cells[0] + 1, 1)
        tail = np.cumsum(renv.scaled_logit(sites)[::-1])[::-1]
        values[neg] = -tail[cells[neg] - cells[0]]
    return PotentialPath(n, lo, values)


# ----------------------------------------------------------------------------
# serialisation

def write_env_jsonl(env, fh):
    fh.write(json.dumps({"spec": env.spec.to_dict()}) + "\n")
    for site, logit, beta in zip(range(env.first_site, env.last_site + 1), env.logits, env.betas):
        fh.write(json.dumps({"i": site, "logit": float(logit), "beta": float(beta)}) + "\n")


def read_env_jsonl(fh):
    lines = [line for line in fh if line.strip() and not line.startswith("#")]
    if not lines:
        raise ParameterError("empty environment file")
    spec = EnvironmentSpec(**json.loads(lines[0])["spec"])
    rows = [json.loads(line) for line in lines[1:]]
    logits = np.array([r["logit"] for r in rows])
    gaussians = None
    if spec.kind == "gaussian-hermite":
        gaussians = np.arctanh(np.clip(logits / spec.g0, -1.0, 1.0))
    return Environment(logits, logit_to_beta(logits), spec, gaussians)


def sample_scaled_logits(spec, n, length, size, rng):
    """``size`` fresh environments: rows hold l_1/D_n, ..., l_length/D_n."""
    D_n = compute_Dn(spec, n)
    if spec.kind == "iid-logit":
        a = spec.iid_half_width
        return rng.uniform(-a, a, size=(size, length)) / D_n
    return transform(fgn_paths(spec.hurst, length, size, rng), spec.g0) / D_n
