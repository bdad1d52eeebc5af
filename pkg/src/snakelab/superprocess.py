"""Branching Brownian motion in a random environment and its martingale decomposition.

Generation i consists of the particles born at time i/n. Each one moves by
an independent N(0, I/n) displacement and at time (i+1)/n is replaced by
Geom(1 - beta^(n)_{i+1}) children placed at its final position. The
measure X_{i/n} puts mass 1/n on the birth positions of generation i, and
X_K is set to 0.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .config import replica_rng
from .environment import fgn_autocov, transform, _gh_rule
from .errors import ParameterError, ResourceError
from .snake import MeasureState, upcrossing_steps

_STREAM_BBM = 8
POPULATION_GUARD = 10 ** 8


# ----------------------------------------------------------------------------
# test functions with closed-form heat flow

class TestFunction:
    __test__ = False

    def __call__(self, x):
        raise NotImplementedError

    def laplacian(self, x):
        raise NotImplementedError

    def heat(self, t):
        raise NotImplementedError

    def square(self):
        raise NotImplementedError

    def scale(self, c):
        raise NotImplementedError

    def __add__(self, other):
        return SumFunction([self, other])


@dataclass(frozen=True)
class Constant(TestFunction):
    value: float = 1.0

    def __call__(self, x):
        return np.full(np.shape(x)[0], float(self.value))

    def laplacian(self, x):
        return np.zeros(np.shape(x)[0])

    def heat(self, t):
        return self

    def square(self):
        return Constant(self.value ** 2)

    def scale(self, c):
        return Constant(c * self.value)


@dataclass(frozen=True)
class Cosine(TestFunction):
    """amplitude * cos(theta . x + phase)."""
    theta: tuple
    amplitude: float = 1.0
    phase: float = 0.0

    def _arg(self, x):
        return np.asarray(x) @ np.asarray(self.theta, dtype=float) + self.phase

    def __call__(self, x):
        return self.amplitude * np.cos(self._arg(x))

    def laplacian(self, x):
        return -float(np.dot(self.theta, self.theta)) * self(x)

    def heat(self, t):
        q = float(np.dot(self.theta, self.theta))
        return Cosine(self.theta, self.amplitude * np.exp(-0.5 * t * q), self.phase)

    def square(self):
        a2 = 0.5 * self.amplitude ** 2
        return SumFunction([Constant(a2), Cosine(tuple(2.0 * np.asarray(self.theta, dtype=float)), a2, 2.0 * self.phase)])

    def scale(self, c):
        return Cosine(self.theta, c * self.amplitude, self.phase)


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    """amplitude * exp(-|x - center|^2 / (2 variance))."""
    center: tuple
    variance: float = 1.0
    amplitude: float = 1.0

    def __call__(self, x):
        r2 = np.sum((np.asarray(x) - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.variance)

    def laplacian(self, x):
        d = len(self.center)
        r2 = np.sum((np.asarray(x) - np.asarray(self.center)) ** 2, axis=-1)
        return self(x) * (r2 / self.variance ** 2 - d / self.variance)

    def heat(self, t):
        d = len(self.center)
        v = self.variance + t
        return GaussianBump(self.center, v, self.amplitude * (self.variance / v) ** (d / 2))

    def square(self):
        return GaussianBump(self.center, self.variance / 2, self.amplitude ** 2)

    def scale(self, c):
        return GaussianBump(self.center, self.variance, c * self.amplitude)


@dataclass(frozen=True)
class SumFunction(TestFunction):
    terms: list = field(default_factory=list)

    def __call__(self, x):
        return sum(t(x) for t in self.terms)

    def laplacian(self, x):
        return sum(t.laplacian(x) for t in self.terms)

    def heat(self, t):
        return SumFunction([f.heat(t) for f in self.terms])

    def square(self):
        if len(self.terms) == 1:
            return self.terms[0].square()
        raise ParameterError("square of a sum is not in the closed-form family")

    def scale(self, c):
        return SumFunction([f.scale(c) for f in self.terms])


def heat_evolve(phi, t):
    if t < 0:
        raise ParameterError("t must be nonnegative")
    return phi.heat(t)


def parse_test_function(text, d):
    """``const:c``, ``cos:t1,...,td`` or ``bump:c1,...,cd:variance``."""
    kind, _, rest = text.partition(":")
    try:
        if kind == "const":
            return Constant(float(rest or 1.0))
        if kind == "cos":
            theta = tuple(float(v) for v in rest.split(","))
            if len(theta) != d:
                raise ParameterError("theta must have d components")
            return Cosine(theta)
        if kind == "bump":
            center, _, var = rest.partition(":")
            c = tuple(float(v) for v in center.split(","))
            if len(c) != d:
                raise ParameterError("center must have d components")
            return GaussianBump(c, float(var or 1.0))
    except ValueError as exc:
        raise ParameterError(f"cannot parse test function {text!r}") from exc
    raise ParameterError(f"unknown test function {text!r}")


# ----------------------------------------------------------------------------
# particle system

@dataclass(frozen=True)
class Generation:
    births: np.ndarray      # (m, d) positions at time i/n
    ends: np.ndarray        # (m, d) positions at time (i+1)/n
    parent: np.ndarray      # index into the previous generation (-1 for generation 0)
    offspring: np.ndarray   # children of each particle


@dataclass(frozen=True)
class ParticleSystem:
    generations: List[Generation]
    n: int
    K: float
    d: int
    env_ref: object = None

    @property
    def nK(self):
        return int(round(self.K * self.n))

    def measure(self, i):
        if i >= self.nK or i >= len(self.generations):
            return MeasureState(np.zeros((0, self.d)), self.n, i / self.n)
        return MeasureState(self.generations[i].births, self.n, i / self.n)

    def total_mass(self):
        masses = np.zeros(self.nK + 1)
        for i, g in enumerate(self.generations[:self.nK]):
            masses[i] = len(g.births) / self.n
        return masses

    def label(self, i, k):
        """Genealogy label (alpha_0, ..., alpha_i) of particle k of generation i."""
        out = []
        for g in range(i, -1, -1):
            gen = self.generations[g]
            if g == 0:
                out.append(int(k))
                break
            p = int(gen.parent[k])
            rank = int(k - np.searchsorted(gen.parent, p))
            out.append(rank)
            k = p
        return tuple(reversed(out))

    def alive(self, t):
        """Positions (at birth) of particles alive at time t, Lambda-free."""
        i = int(np.floor(t * self.n + 1e-9))
        return self.measure(i).atoms


def _propagate(n, K, d, offspring_for, increments_for, env_ref=None):
    nK = int(round(K * n))
    births = np.zeros((n, d))
    parent = np.full(n, -1, dtype=np.int64)
    gens = []
    total = 0
    for i in range(nK):
        m = len(births)
        ends = births + increments_for(i, m)
        kids = offspring_for(i, m)
        gens.append(Generation(births, ends, parent, kids))
        total += m
        nxt = int(kids.sum())
        if total + nxt > POPULATION_GUARD:
            raise ResourceError("population guard exceeded", ParticleSystem(gens, n, K, d, env_ref))
        if i + 1 < nK:
            births = np.repeat(ends, kids, axis=0)
            parent = np.repeat(np.arange(m), kids)
    return ParticleSystem(gens, n, K, d, env_ref)


def simulate_bbmre(renv, n, K, d, seed, replica=0):
    if abs(K * n - round(K * n)) > 1e-9:
        raise ParameterError("K * n must be an integer")
    if renv is not None and renv.n != n:
        raise ParameterError("environment scaled for a different n")
    rng = replica_rng(seed, replica, _STREAM_BBM)
    nK = int(round(K * n))
    betas = renv.beta(np.arange(1, nK + 1)) if renv is not None else np.full(nK, 0.5)
    sd = np.sqrt(1.0 / n)

    def increments(i, m):
        return sd * rng.standard_normal((m, d))

    def offspring(i, m):
        return rng.geometric(1.0 - betas[i], size=m) - 1

    return _propagate(n, K, d, offspring, increments, renv)


def particles_from_snake(snake):
    """Particle system driven by the snake's tree and segments.

    Generation i is the list of edges from depth i to i + 1 in contour order;
    each carries its child's segment and has as many offspring as the child
    node has children. Positions are propagated generation by generation.
    """
    n, d = snake.n, snake.d
    K = snake.contour.K
    nK = snake.contour.nK
    inc = snake.increments
    children = np.bincount(snake.parent[1:], minlength=len(snake.parent))
    per_level = []
    for i in range(nK):
        steps = upcrossing_steps(snake, i)
        per_level.append(snake.cursor[steps + 1])

    def increments(i, m):
        return inc[per_level[i]]

    def offspring(i, m):
        return children[per_level[i]]

    return _propagate(n, K, d, offspring, increments, snake.contour.env_ref)


# ----------------------------------------------------------------------------
# conditional environment means

def gaussian_predictions(x, hurst):
    """Mean and variance of X_{k+1} given X_1..X_k, k = 0..L-1 (Levinson-Durbin).

    ``x`` may be (L,) or (reps, L); variances are shared across rows.
    """
    x = np.asarray(x, dtype=float)
    L = x.shape[-1]
    r = fgn_autocov(hurst, np.arange(L + 1))
    means = np.zeros(x.shape)
    var = np.empty(L)
    var[0] = r[0]
    phi = np.zeros(0)
    v = r[0]
    for k in range(1, L):
        a = (r[k] - phi @ r[k - 1:0:-1]) / v if k > 1 else r[1] / v
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1.0 - a * a
        var[k] = v
        means[..., k] = x[..., k - 1::-1] @ phi
    return means, var


def conditional_offspring_moments(renv, env_model, length):
    """E[m_{i} | past] and E[m_i (1 + m_i) | past] for sites i = 1..length.

    ``env_model`` 'iid' uses the logit law; 'gaussian-hermite' conditions the
    underlying Gaussians X_1..X_{i-1} exactly.
    """
    spec = renv.base.spec
    D = renv.D_n
    if env_model == "iid":
        if spec.kind != "iid-logit":
            raise ParameterError("env_model 'iid' needs an iid-logit environment")
        a = spec.iid_half_width / D
        m1 = np.sinh(a) / a if a > 0 else 1.0
        m2 = np.sinh(2 * a) / (2 * a) if a > 0 else 1.0
        return np.full(length, m1), np.full(length, m1 + m2)
    if env_model == "gaussian-hermite":
        if spec.kind != "gaussian-hermite" or renv.base.gaussians is None:
            raise ParameterError("env_model 'gaussian-hermite' needs a gaussian-hermite environment")
        x = renv.base.gaussians[renv.index(np.arange(1, length + 1))]
        mu, var = gaussian_predictions(x, spec.hurst)
        z, w = _gh_rule()
        pts = mu[:, None] + np.sqrt(var)[:, None] * z[None, :]
        m = np.exp(-transform(pts, spec.g0) / D)
        return m @ w, (m * (1.0 + m)) @ w
    raise ParameterError(f"unknown env_model {env_model!r}")


# ----------------------------------------------------------------------------
# decomposition

@dataclass(frozen=True)
class DecompositionSeries:
    times: np.ndarray
    X: np.ndarray
    drift: np.ndarray
    Z: np.ndarray
    N: np.ndarray
    M: np.ndarray
    A: np.ndarray
    residual: np.ndarray
    qv_predictable: np.ndarray
    qv_realized: np.ndarray
    qv_target: np.ndarray
    env_integral: np.ndarray     # sum X~(phi) (m - 1), equal to A + N
    taylor_integral: np.ndarray  # sum X~(phi) (-dW + dW^2 / 2)

    @property
    def relative_residual(self):
        scale = np.abs(self.X) + np.abs(self.X[0]) + np.abs(self.drift) + np.abs(self.Z) \
            + np.abs(self.N) + np.abs(self.M) + np.abs(self.A)
        return float(np.max(np.abs(self.residual) / np.maximum(scale, 1e-300)))

    def rows(self):
        return zip(self.times, self.Z, self.N, self.M, self.A, self.residual)


def decomposition(run, phi, env_model, renv=None):
    """Series Z, N, M, A of the martingale decomposition of X_t(phi) on the grid i/n."""
    renv = run.env_ref if renv is None else renv
    n = run.n
    G = min(len(run.generations), run.nK)
    logits = renv.scaled_logit(np.arange(1, G + 1))
    m = np.exp(-logits)
    cm, cv = conditional_offspring_moments(renv, env_model, G)
    phi2_heat = phi.square().heat(1.0 / n)
    phi2 = phi.square()
    size = G
    X = np.zeros(size)
    inc = {k: np.zeros(size) for k in ("drift", "Z", "N", "M", "A", "qp", "qr", "qt", "env", "tay")}
    for i in range(G):
        g = run.generations[i]
        X[i] = np.sum(phi(g.births)) / n if len(g.births) else 0.0
        if i == G - 1:
            break
        if len(g.births) == 0:
            continue
        py = phi(g.ends)
        px = phi(g.births)
        quad = 0.5 * (1.0 / n) * 0.5 * (phi.laplacian(g.births) + phi.laplacian(g.ends))
        kids = g.offspring
        z_inc = np.sum(py * (kids - m[i])) / n
        inc["Z"][i + 1] = z_inc
        inc["N"][i + 1] = np.sum(py) * (m[i] - cm[i]) / n
        inc["A"][i + 1] = np.sum(py) * (cm[i] - 1.0) / n
        inc["M"][i + 1] = np.sum(py - px - quad) / n
        inc["drift"][i + 1] = np.sum(quad) / n
        inc["qp"][i + 1] = np.sum(phi2_heat(g.births)) * cv[i] / n ** 2
        inc["qr"][i + 1] = z_inc ** 2
        inc["qt"][i + 1] = 2.0 * np.sum(phi2(g.births)) / n ** 2
        xt = np.sum(py) / n
        inc["env"][i + 1] = xt * (m[i] - 1.0)
        dw = logits[i]
        inc["tay"][i + 1] = xt * (-dw + 0.5 * dw * dw)
    c = {k: np.cumsum(v) for k, v in inc.items()}
    residual = (X - X[0] - c["drift"]) - (c["Z"] + c["N"] + c["M"] + c["A"])
    return DecompositionSeries(np.arange(size) / n, X, c["drift"], c["Z"], c["N"], c["M"], c["A"],
                               residual, c["qp"], c["qr"], c["qt"], c["env"], c["tay"])


@dataclass(frozen=True)
class QVReport:
    times: np.ndarray
    predictable: np.ndarray
    realized: np.ndarray
    target: np.ndarray

    def relative_gap(self, k=-1):
        return float(abs(self.predictable[k] - self.target[k]) / abs(self.target[k]))


def qv_estimate(ensemble):
    """Ensemble means of predictable QV, realized QV and 2 int X(phi^2) ds."""
    pred = np.mean([s.qv_predictable for s in ensemble], axis=0)
    real = np.mean([s.qv_realized for s in ensemble], axis=0)
    targ = np.mean([s.qv_target for s in ensemble], axis=0)
    return QVReport(ensemble[0].times, pred, real, targ)


@dataclass(frozen=True)
class DriftReport:
    drift_mean: np.ndarray
    mean_gap: float
    se_gap: float
    mean_abs_gap: float
    mean_abs_integral: float


def drift_comparison(ensemble, k=-1):
    """Compare the environment term A + N = sum X~(phi)(m - 1) with its Taylor integral.

    The integral is sum X~(phi) (-dW + dW^2/2), dW = l/D_n the potential
    increment, i.e. the discrete semimartingale integral against -W plus
    its Ito correction.
    """
    gaps = np.array([s.env_integral[k] - s.taylor_integral[k] for s in ensemble])
    ints = np.array([s.taylor_integral[k] for s in ensemble])
    return DriftReport(np.mean([s.A for s in ensemble], axis=0), float(gaps.mean()),
                       float(gaps.std(ddof=1) / np.sqrt(len(gaps))),
                       float(np.abs(gaps).mean()), float(np.abs(ints).mean()))
