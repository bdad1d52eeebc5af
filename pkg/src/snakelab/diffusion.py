"""Diffusions associated with a potential, Brownian local time and Feller diffusion.

For a potential Z the scale function is A(y) = int_0^y exp(Z(x)) dx and the
associated process is Y(t) = A^{-1}(B(M^{-1}(t))) with
M(s) = int_0^s exp(-2 Z(A^{-1}(B(u)))) du. When B leaves the range of A on
the available window, Y is sent to a cemetery state, stored as NaN.
"""
from dataclasses import dataclass

import numpy as np

from .config import replica_rng
from .environment import PotentialPath
from .errors import ParameterError

_STREAM_DRIVE = 5
_STREAM_FELLER = 6
_BLOCK = 2048


@dataclass(frozen=True)
class ScaleMap:
    """Piecewise-linear scale function on the potential window."""
    edges: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    potential: PotentialPath
    sampled: bool = False

    @property
    def range(self):
        return self.values[0], self.values[-1]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        k = np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, len(self.slopes) - 1)
        out = self.values[k] + self.slopes[k] * (y - self.edges[k])
        return np.where((y < self.edges[0]) | (y > self.edges[-1]), np.nan, out)

    def inverse(self, a):
        """A^{-1}(a); NaN outside ran(A)."""
        a = np.asarray(a, dtype=float)
        k = np.clip(np.searchsorted(self.values, a, side="right") - 1, 0, len(self.slopes) - 1)
        out = self.edges[k] + (a - self.values[k]) / self.slopes[k]
        return np.where((a < self.values[0]) | (a > self.values[-1]), np.nan, out)

    def potential_at(self, y):
        """Z at y (cell value, or linear interpolation for sampled potentials)."""
        if self.sampled:
            return np.interp(y, self.edges, self.potential.values)
        pot = self.potential
        k = np.clip(np.floor(np.asarray(y) * pot.n).astype(np.int64) - pot.first_cell, 0, len(pot.values) - 1)
        return pot.values[k]


def scale_map(potential, sampled=False):
    """Scale function of ``potential``.

    By default the potential is piecewise constant and each cell contributes
    exp(Z_c)/n exactly. With ``sampled=True`` the values are read as samples
    at the grid points first_cell/n, (first_cell+1)/n, ... and integrated by
    the trapezoid rule.
    """
    n, z = potential.n, potential.values
    if sampled:
        edges = (potential.first_cell + np.arange(len(z))) / n
        ez = np.exp(z)
        slopes = 0.5 * (ez[1:] + ez[:-1])
    else:
        edges = (potential.first_cell + np.arange(len(z) + 1)) / n
        slopes = np.exp(z)
    if not edges[0] <= 0.0 <= edges[-1]:
        raise ParameterError("potential window must contain 0")
    values = np.concatenate([[0.0], np.cumsum(slopes / n)])
    values -= np.interp(0.0, edges, values)
    return ScaleMap(edges, values, slopes, potential, sampled)


def scale_function(potential, y):
    return scale_map(potential)(y)


def inverse_scale(potential, a):
    return scale_map(potential).inverse(a)


@dataclass(frozen=True)
class DiffusionPath:
    times: np.ndarray
    values: np.ndarray
    potential_ref: PotentialPath = None

    @property
    def dead(self):
        return np.isnan(self.values)


def _check_guard(potential, ds):
    if ds > 1.0 / (10.0 * potential.n ** 2) * (1 + 1e-12):
        raise ParameterError("ds must not exceed 1/(10 n^2) for a potential on the 1/n grid")


def _bridge_hit(x0, x1, barrier, ds, u):
    """Did a Brownian bridge from x0 to x1 over ds cross ``barrier`` (both on one side)?"""
    gap = (barrier - x0) * (barrier - x1)
    return (gap <= 0) | (u < np.exp(-2.0 * np.maximum(gap, 0.0) / ds))


def associated_batch(potential, horizon, ds, reps, seed, out_times=None, x0=0.0, bridge=True,
                     check_guard=True, max_steps=10 ** 8, replica=0):
    """Values of Y at ``out_times`` (default: [horizon]) for ``reps`` paths.

    Returns an array (reps, len(out_times)); NaN marks the cemetery.
    """
    if check_guard:
        _check_guard(potential, ds)
    smap = scale_map(potential)
    out_times = np.atleast_1d(np.asarray([horizon] if out_times is None else out_times, dtype=float))
    lo, hi = smap.range
    sq = np.sqrt(ds)
    result = np.full((reps, len(out_times)), np.nan)
    for block, start in enumerate(range(0, reps, _BLOCK)):
        size = min(_BLOCK, reps - start)
        rng = replica_rng(seed, replica + block, _STREAM_DRIVE)
        b = np.full(size, float(smap(x0)))
        clock = np.zeros(size)
        nxt = np.zeros(size, dtype=np.int64)
        res = result[start:start + size]
        live = np.arange(size)
        zero = out_times <= 0
        if zero.any():
            res[:, zero] = x0
            nxt[:] = np.count_nonzero(zero)
        steps = 0
        while len(live):
            b0 = b[live]
            rate = np.exp(-2.0 * smap.potential_at(smap.inverse(b0)))
            b1 = b0 + sq * rng.standard_normal(len(live))
            c1 = clock[live] + rate * ds
            dead = (b1 <= lo) | (b1 >= hi)
            if bridge:
                u = rng.random((2, len(live)))
                dead |= _bridge_hit(b0, b1, hi, ds, u[0]) | _bridge_hit(b0, b1, lo, ds, u[1])
            # record outputs whose time falls inside this step
            while True:
                idx = nxt[live]
                pending = idx < len(out_times)
                tgt = out_times[np.minimum(idx, len(out_times) - 1)]
                hit = pending & (c1 >= tgt) & ~dead
                if not hit.any():
                    break
                w = (tgt[hit] - clock[live][hit]) / (c1[hit] - clock[live][hit])
                res[live[hit], idx[hit]] = smap.inverse(b0[hit] + w * (b1[hit] - b0[hit]))
                nxt[live[hit]] += 1
            b[live] = b1
            clock[live] = c1
            finished = dead | (nxt[live] >= len(out_times))
            live = live[~finished]
            steps += 1
            if steps > max_steps:
                raise ParameterError("associated process did not reach the horizon")
    return result


def simulate_associated(potential, horizon, ds, seed, replica=0, n_out=100, x0=0.0, bridge=True):
    times = np.linspace(0.0, horizon, n_out + 1)
    vals = associated_batch(potential, horizon, ds, 1, seed, times, x0, bridge, replica=replica)[0]
    return DiffusionPath(times, vals, potential)


def exit_right_frequency(potential, cell, runs, ds, seed, bridge=True):
    """Empirical P(Y started at cell/n leaves ((cell-1)/n, (cell+1)/n) on the right).

    Y is driven by B in scale coordinates; the time change does not move the
    exit point, so each run follows B until it leaves (A((cell-1)/n), A((cell+1)/n)).
    """
    _check_guard(potential, ds)
    smap = scale_map(potential)
    n = potential.n
    a_lo, a0, a_hi = smap(np.array([cell - 1, cell, cell + 1]) / n)
    sq = np.sqrt(ds)
    right = 0
    for block, start in enumerate(range(0, runs, _BLOCK)):
        size = min(_BLOCK, runs - start)
        rng = replica_rng(seed, block, _STREAM_DRIVE)
        b = np.full(size, a0)
        while len(b):
            b1 = b + sq * rng.standard_normal(len(b))
            up = b1 >= a_hi
            down = b1 <= a_lo
            if bridge:
                u = rng.random((2, len(b)))
                up |= ~down & _bridge_hit(b, b1, a_hi, ds, u[0])
                down |= ~up & _bridge_hit(b, b1, a_lo, ds, u[1])
            right += int(np.count_nonzero(up))
            b = b1[~(up | down)]
    return right / runs


# ----------------------------------------------------------------------------
# Brownian local time

@dataclass(frozen=True)
class DrivingPath:
    values: np.ndarray
    ds: float

    @property
    def horizon(self):
        return (len(self.values) - 1) * self.ds


def simulate_driving(horizon, ds, seed, replica=0, reflect=None):
    """Brownian path on the grid k*ds; ``reflect=(lo, hi)`` folds it into [lo, hi]."""
    rng = replica_rng(seed, replica, _STREAM_DRIVE)
    steps = int(round(horizon / ds))
    b = np.concatenate([[0.0], np.cumsum(np.sqrt(ds) * rng.standard_normal(steps))])
    if reflect is not None:
        b = _fold_interval(b, *reflect)
    return DrivingPath(b, ds)


def _fold_interval(x, lo, hi):
    width = hi - lo
    r = np.mod(x - lo, 2 * width)
    return lo + np.where(r <= width, r, 2 * width - r)


def _check_bandwidth(eps, ds):
    if eps < 2.0 * np.sqrt(ds) * (1 - 1e-12):
        raise ParameterError("bandwidth must be at least 2 sqrt(ds)")


def default_bandwidth(ds):
    return 4.0 * np.sqrt(ds)


def bm_local_time(driving, x, s, eps=None):
    """Occupation-density estimate (1/2 eps) * ds * #{k : k ds < s, |B_k - x| < eps}."""
    eps = default_bandwidth(driving.ds) if eps is None else eps
    _check_bandwidth(eps, driving.ds)
    k = min(int(np.ceil(s / driving.ds - 1e-9)), len(driving.values))
    inside = np.abs(driving.values[:k] - x) < eps
    return float(np.count_nonzero(inside) * driving.ds / (2.0 * eps))


# expected overshoot of a Gaussian random walk over a level, in step sd units
OVERSHOOT = 0.5825971579390106


def bm_local_time_crossings(driving, x, s, h, correct=True):
    """Downcrossing estimate 2h * #{downcrossings of [x, x+h] before s}.

    On a grid the sampled path overshoots each band edge by about
    OVERSHOOT * sqrt(ds) before it is seen, so the band acts as one of width
    h + 2 OVERSHOOT sqrt(ds); ``correct`` uses that width.
    """
    k = min(int(np.ceil(s / driving.ds - 1e-9)), len(driving.values))
    b = driving.values[:k]
    state = np.where(b >= x + h, 1, np.where(b <= x, -1, 0))
    marks = state[state != 0]
    down = np.count_nonzero((marks[:-1] == 1) & (marks[1:] == -1))
    width = h + 2.0 * OVERSHOOT * np.sqrt(driving.ds) if correct else h
    return 2.0 * width * down


def local_time_profile(driving, levels, s, eps=None):
    return np.array([bm_local_time(driving, x, s, eps) for x in levels])


def psi_time(driving, eps=None, threshold=1.0, half=False):
    """inf{s : l(0, s) > threshold}; ``inf`` when not reached within the path.

    ``half=True`` measures local time as half the occupation density, the
    normalisation matched by rescaled up-crossing counts.
    """
    eps = default_bandwidth(driving.ds) if eps is None else eps
    _check_bandwidth(eps, driving.ds)
    weight = driving.ds / (2.0 * eps) * (0.5 if half else 1.0)
    cum = np.cumsum(np.abs(driving.values) < eps) * weight
    k = np.searchsorted(cum, threshold, side="right")
    if k >= len(cum):
        return np.inf
    return (k + 1) * driving.ds


# ----------------------------------------------------------------------------
# Feller diffusion

@dataclass(frozen=True)
class FellerPath:
    times: np.ndarray
    values: np.ndarray
    c: float

    def at(self, t):
        """Value at a grid time (nearest grid point)."""
        k = int(round(t / (self.times[1] - self.times[0])))
        return self.values[..., k]


def feller_step(eta, c, dt, rng):
    """Exact transition of d eta = sqrt(c eta) dB over dt."""
    eta = np.asarray(eta, dtype=float)
    if dt == 0:
        return eta.copy()
    births = np.atleast_1d(rng.poisson(2.0 * eta / (c * dt)))
    out = np.zeros(births.shape)
    pos = births > 0
    out[pos] = rng.gamma(births[pos], c * dt / 2.0)
    return out.reshape(eta.shape)


def simulate_feller(x0, c, T, dt, seed, replica=0, reps=None):
    if x0 < 0:
        raise ParameterError("x0 must be nonnegative")
    rng = replica_rng(seed, replica, _STREAM_FELLER)
    steps = int(round(T / dt))
    shape = () if reps is None else (reps,)
    vals = np.empty(shape + (steps + 1,))
    eta = np.full(shape, float(x0))
    vals[..., 0] = eta
    for k in range(steps):
        eta = feller_step(eta, c, dt, rng)
        vals[..., k + 1] = eta
    return FellerPath(np.arange(steps + 1) * dt, vals, c)


def feller_marginal(x0, c, T, reps, seed, replica=0):
    """reps exact draws of eta(T) (a single transition)."""
    rng = replica_rng(seed, replica, _STREAM_FELLER)
    return feller_step(np.full(reps, float(x0)), c, T, rng)


def feller_laplace(x0, c, T, lam):
    return np.exp(-x0 * lam / (1.0 + c * T * lam / 2.0))


# ----------------------------------------------------------------------------
# Ray-Knight right-hand side

@dataclass(frozen=True)
class RKSample:
    levels: np.ndarray
    values: np.ndarray
    discarded: int = 0


def time_changed_H(potential, feller, t):
    """H(t) = e^{-W(t)} eta(2 A_W(t)) read from a c = 1 Feller path."""
    smap = scale_map(potential)
    return np.exp(-potential(t)) * feller.at(2.0 * float(smap(t)))


def sample_H(potential, t, reps, seed):
    """reps exact draws of H(t), each with its own Feller path started at 1."""
    smap = scale_map(potential)
    eta = feller_marginal(1.0, 1.0, 2.0 * float(smap(t)), reps, seed)
    return np.exp(-float(potential(t))) * eta


def rk_rhs_sampler(potential, levels, reps, seed, ds=1e-5, eps=None, margin=None, chunk=256):
    """e^{-W(x)} l(A_W(x), psi) for x in ``levels`` and ``reps`` driving paths.

    Here l is half the occupation density (the limit of rescaled up-crossing
    counts) and psi = inf{s : l(0, s) > 1}. With that normalisation
    l(x, psi), x >= 0, solves d eta = sqrt(2 eta) dB from 1.

    Only levels between 0 and max A_W(x) matter, so each driving path is
    folded into [-margin, max A + margin]. Excursions outside that band
    carry no local time at the levels of interest, and removing them leaves
    the joint law of the local-time field inside the band unchanged.
    """
    eps = default_bandwidth(ds) if eps is None else eps
    _check_bandwidth(eps, ds)
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any(levels < 0):
        raise ParameterError("levels must be nonnegative")
    smap = scale_map(potential)
    targets = np.asarray(smap(levels), dtype=float)
    if np.any(np.isnan(targets)):
        raise ParameterError("levels outside the potential window")
    margin = 10.0 * eps if margin is None else margin
    lo, hi = -margin, targets.max() + margin
    weight = ds / (4.0 * eps)
    sq = np.sqrt(ds)
    out = np.empty((reps, len(levels)))
    for block, start in enumerate(range(0, reps, _BLOCK)):
        size = min(_BLOCK, reps - start)
        rng = replica_rng(seed, block, _STREAM_DRIVE)
        free = np.zeros(size)
        l0 = np.full(size, weight)                  # sample B_0 = 0
        lt = np.where(np.abs(targets) < eps, weight, 0.0)[None, :].repeat(size, 0)
        live = np.arange(size)
        while len(live):
            steps = free[live, None] + np.cumsum(sq * rng.standard_normal((len(live), chunk)), axis=1)
            b = _fold_interval(steps, lo, hi)
            cum0 = l0[live, None] + np.cumsum(np.abs(b) < eps, axis=1) * weight
            crossed = cum0 > 1.0
            stop = np.where(crossed.any(axis=1), crossed.argmax(axis=1), chunk)
            # samples taken strictly before psi, i.e. up to and including the crossing index
            use = np.arange(chunk)[None, :] <= stop[:, None]
            for k, a in enumerate(targets):
                lt[live, k] += np.count_nonzero((np.abs(b - a) < eps) & use, axis=1) * weight
            l0[live] = cum0[:, -1]
            free[live] = steps[:, -1]
            live = live[stop == chunk]
        out[start:start + size] = lt
    return RKSample(levels, np.exp(-potential(levels))[None, :] * out)
