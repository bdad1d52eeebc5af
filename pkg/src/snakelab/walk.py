"""Nearest-neighbour walks in a random environment and their local times.

Sites are unrescaled integers; the rescaled walk is S_t = S_{floor(n^2 t)} / n.
A step from site i goes up with probability beta^(n)_i.

Two reflected versions are available. ``reflect_walk`` folds a free walk into
[0, nK] with a triangle wave of period 2nK. ``simulate_reflected_walk`` runs
a walk that is forced up at 0 and forced down at nK and uses the environment
value of the level it stands on; its upcrossing counts form exactly the
branching process with geometric offspring of parameter 1 - beta^(n)_i.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import replica_rng
from .environment import RescaledEnvironment
from .errors import EnvironmentExhausted, IncompletePathError, ParameterError

_STREAM_WALK = 2
_CHUNK = 1 << 18
_STOP_KINDS = {"steps": 0, "returns": 1, "local": 2}


@dataclass(frozen=True)
class StopRule:
    """``value`` is a step count, a return count, or a local time r (rescaled)."""
    kind: str
    value: float
    level: int = 0

    def __post_init__(self):
        if self.kind not in _STOP_KINDS:
            raise ParameterError(f"unknown stop rule {self.kind!r}")
        if self.value < 0:
            raise ParameterError("stop value must be nonnegative")

    @classmethod
    def parse(cls, text):
        """``steps:N``, ``returns:k`` or ``local:a:r`` (stop once L^{n,a/n} exceeds r)."""
        parts = text.split(":")
        try:
            if parts[0] == "local":
                return cls("local", float(parts[2]), int(parts[1]))
            return cls(parts[0], int(parts[1]))
        except (IndexError, ValueError) as exc:
            raise ParameterError(f"cannot parse stop rule {text!r}") from exc


@dataclass(frozen=True)
class WalkPath:
    sites: np.ndarray
    n: int
    env_ref: RescaledEnvironment = None

    def rescaled(self, t):
        """S_t = S_{floor(n^2 t)} / n."""
        j = np.floor(np.asarray(t) * self.n ** 2).astype(np.int64)
        return self.sites[j] / self.n


@dataclass(frozen=True)
class ReflectedWalkPath(WalkPath):
    K: float = 1.0

    @property
    def nK(self):
        return int(round(self.K * self.n))


def fold(sites, nK):
    """Triangle-wave fold of |s| into [0, nK]."""
    r = np.abs(np.asarray(sites)) % (2 * nK)
    return np.where(r <= nK, r, 2 * nK - r)


@njit(cache=True)
def _fold1(s, nk):
    r = abs(s) % (2 * nk)
    return r if r <= nk else 2 * nk - r


@njit(cache=True)
def _walk_chunk(u, out, pos, betas, first_site, stop_kind, stop_value, level, fold_nk, counter, written):
    """Advance the walk over the uniforms ``u``.

    Returns (written, pos, counter, status) where status is 0 when the chunk
    ran out, 1 when the stop rule fired and 2 when the environment was left.
    """
    for idx in range(u.shape[0]):
        i = pos - first_site
        if i < 0 or i >= betas.shape[0]:
            return written, pos, counter, 2
        new = pos + 1 if u[idx] < betas[i] else pos - 1
        out[written] = new
        written += 1
        if fold_nk > 0:
            a = _fold1(pos, fold_nk)
            b = _fold1(new, fold_nk)
        else:
            a = abs(pos)
            b = abs(new)
        pos = new
        if stop_kind == 0:
            if written >= stop_value:
                return written, pos, counter, 1
        elif stop_kind == 1:
            if b == 0:
                counter += 1
                if counter >= stop_value:
                    return written, pos, counter, 1
        else:
            if a == level and b == a + 1:
                counter += 1
                if counter > stop_value:
                    return written, pos, counter, 1
    return written, pos, counter, 0


def simulate_walk(renv, stop, seed, replica=0, fold_nK=None, max_steps=10 ** 8):
    """Walk from 0 until ``stop`` fires.

    With ``fold_nK`` the return and local-time rules are evaluated on the
    folded path; otherwise on |S|.
    """
    if isinstance(stop, str):
        stop = StopRule.parse(stop)
    if stop.kind == "steps" and stop.value == 0:
        return WalkPath(np.zeros(1, dtype=np.int64), renv.n, renv)
    rng = replica_rng(seed, replica, _STREAM_WALK)
    chunks = [np.zeros(1, dtype=np.int64)]
    pos, counter, total = 0, 0, 0
    kind = _STOP_KINDS[stop.kind]
    remaining = int(np.floor(renv.n * stop.value + 1e-9)) if kind == 2 else int(stop.value)
    while True:
        u = rng.random(_CHUNK)
        out = np.empty(_CHUNK, dtype=np.int64)
        written, pos, counter, status = _walk_chunk(
            u, out, pos, renv.betas, renv.first_site, kind,
            remaining, stop.level, fold_nK or 0, counter, 0)
        chunks.append(out[:written])
        total += written
        if status == 1:
            break
        if status == 2:
            raise EnvironmentExhausted(pos, (renv.first_site, renv.last_site))
        if kind == 0:
            remaining -= written
        if total >= max_steps:
            raise IncompletePathError(f"stop rule not met within {max_steps} steps")
    return WalkPath(np.concatenate(chunks), renv.n, renv)


def simulate_walk_with_retry(spec, n, stop, seed, replica=0, fold_nK=None, grow=4):
    """Regenerate a longer environment (same seed stream) when the walk leaves it."""
    from dataclasses import replace
    from .environment import rescaled_environment
    while True:
        renv = rescaled_environment(spec, n, replica)
        try:
            return simulate_walk(renv, stop, seed, replica, fold_nK)
        except EnvironmentExhausted:
            spec = replace(spec, length=spec.length * grow)


def reflect_walk(path, K):
    nK = K * path.n
    if abs(nK - round(nK)) > 1e-9:
        raise ParameterError("K * n must be an integer")
    return ReflectedWalkPath(fold(path.sites, int(round(nK))), path.n, path.env_ref, K)


@njit(cache=True)
def _reflected_chunk(u, out, pos, level_betas, nk, target, returns, written):
    for idx in range(u.shape[0]):
        if pos == 0:
            new = 1
        elif pos == nk:
            new = nk - 1
        else:
            new = pos + 1 if u[idx] < level_betas[pos] else pos - 1
        out[written] = new
        written += 1
        pos = new
        if new == 0:
            returns += 1
            if returns >= target:
                return written, pos, returns, 1
    return written, pos, returns, 0


def _level_betas(renv, nK):
    betas = np.empty(nK + 1)
    betas[0] = 1.0
    betas[nK] = 0.0
    if nK > 1:
        betas[1:nK] = renv.beta(np.arange(1, nK))
    return betas


def simulate_reflected_walk(renv, K, excursions, seed, replica=0):
    """Walk on {0, ..., nK} reflected at both ends, run for ``excursions`` returns to 0."""
    nK = int(round(K * renv.n))
    if nK < 1 or abs(K * renv.n - nK) > 1e-9:
        raise ParameterError("K * n must be a positive integer")
    betas = _level_betas(renv, nK)
    rng = replica_rng(seed, replica, _STREAM_WALK)
    chunks = [np.zeros(1, dtype=np.int64)]
    pos, returns = 0, 0
    while excursions > 0:
        u = rng.random(_CHUNK)
        out = np.empty(_CHUNK, dtype=np.int64)
        written, pos, returns, status = _reflected_chunk(u, out, pos, betas, nK, excursions, returns, 0)
        chunks.append(out[:written])
        if status == 1:
            break
    return ReflectedWalkPath(np.concatenate(chunks), renv.n, renv, K)


@njit(cache=True)
def _reflected_counts_chunk(u, counts, pos, level_betas, nk, target, returns):
    for idx in range(u.shape[0]):
        if pos == 0:
            new = 1
        elif pos == nk:
            new = nk - 1
        else:
            new = pos + 1 if u[idx] < level_betas[pos] else pos - 1
        if new > pos:
            counts[pos] += 1
        pos = new
        if new == 0:
            returns += 1
            if returns >= target:
                return pos, returns, 1
    return pos, returns, 0


def reflected_upcounts(renv, K, excursions, seed, replica=0):
    """Up-crossing counts per level of ``simulate_reflected_walk`` without storing the path.

    Consumes the random stream exactly as ``simulate_reflected_walk`` does,
    so the counts agree with ``upcrossing_counts`` on the stored path.
    """
    nK = int(round(K * renv.n))
    betas = _level_betas(renv, nK)
    rng = replica_rng(seed, replica, _STREAM_WALK)
    counts = np.zeros(nK + 1, dtype=np.int64)
    pos, returns = 0, 0
    while excursions > 0:
        pos, returns, status = _reflected_counts_chunk(rng.random(_CHUNK), counts, pos, betas, nK, excursions, returns)
        if status == 1:
            break
    return counts


# ----------------------------------------------------------------------------
# counting

def _convention_values(path, convention):
    if convention == "absolute":
        return np.abs(path.sites)
    if convention == "reflected":
        return path.sites
    raise ParameterError("convention must be 'absolute' or 'reflected'")


def upcrossing_counts(path, level, convention="reflected"):
    """c[t] = #{j < t : v_j = level, v_{j+1} = level + 1} for each step t."""
    v = _convention_values(path, convention)
    hits = (v[:-1] == level) & (v[1:] == level + 1)
    return np.concatenate([[0], np.cumsum(hits)])


@dataclass(frozen=True)
class LocalTimeField:
    """Up-crossing events grouped by level (CSR layout).

    ``steps[offsets[a]:offsets[a+1]]`` are the step indices j, increasing,
    at which an up-step from level a starts.
    """
    n: int
    offsets: np.ndarray
    steps: np.ndarray
    n_steps: int

    @property
    def max_level(self):
        return len(self.offsets) - 2

    def events(self, level):
        if level < 0 or level > self.max_level:
            return self.steps[:0]
        return self.steps[self.offsets[level]:self.offsets[level + 1]]

    def count(self, level, t):
        """Unrescaled number of up-steps from ``level`` starting at j < t."""
        return int(np.searchsorted(self.events(level), t, side="left"))

    def local_time(self, s, t):
        """L^{n,s}_t: (1/n) * up-steps from floor(ns) starting at j <= floor(n^2 t)."""
        j = int(np.floor(t * self.n ** 2 + 1e-9))
        return self.count(int(np.floor(s * self.n + 1e-9)), j + 1) / self.n


def local_time_field(path, n=None, convention="reflected"):
    n = path.n if n is None else n
    v = _convention_values(path, convention)
    j = np.flatnonzero(v[1:] > v[:-1])
    lv = v[j]
    keep = lv >= 0
    j, lv = j[keep], lv[keep]
    order = np.argsort(lv, kind="stable")
    top = int(lv.max()) if len(lv) else -1
    offsets = np.concatenate([[0], np.cumsum(np.bincount(lv, minlength=top + 1))])
    return LocalTimeField(n, offsets, j[order], len(v) - 1)


def inverse_local_time(field, a, r):
    """inf{s : L^{n,a}_s > r}; ``inf`` when the path is too short."""
    if r < 0:
        raise ParameterError("r must be nonnegative")
    nr = field.n * r
    k = int(np.floor(nr + 1e-9)) + 1
    ev = field.events(int(np.floor(a * field.n + 1e-9)))
    if k > len(ev):
        return np.inf
    return ev[k - 1] / field.n ** 2


@dataclass(frozen=True)
class StoppingTimes:
    return_times: np.ndarray
    field: LocalTimeField

    def kth(self, k):
        if k < 1 or k > len(self.return_times):
            raise IncompletePathError(f"path has {len(self.return_times)} returns, need {k}")
        return int(self.return_times[k - 1])

    def inverse_local(self, a, r):
        return inverse_local_time(self.field, a, r)


def return_times(path, convention=None):
    if path.sites[0] != 0:
        raise ParameterError("path must start at 0")
    if convention is None:
        convention = "reflected" if isinstance(path, ReflectedWalkPath) else "absolute"
    v = _convention_values(path, convention)
    times = np.flatnonzero(v[1:] == 0) + 1
    return StoppingTimes(times, local_time_field(path, convention=convention))


@dataclass(frozen=True)
class BranchingTrajectory:
    masses: np.ndarray
    n: int
    init_mass: float = 1.0

    @property
    def counts(self):
        return np.rint(self.masses * self.n).astype(np.int64)


def extract_bpre(path, n=None, K=None, convention=None):
    """Branching mass per level from up-crossings before the n-th return to 0.

    ``convention`` defaults to |S| for free walks and the path itself for
    reflected walks. With ``K`` the masses at levels >= nK are set to 0.
    """
    n = path.n if n is None else n
    if convention is None:
        convention = "reflected" if isinstance(path, ReflectedWalkPath) else "absolute"
    v = _convention_values(path, convention)
    zeros = np.flatnonzero(v[1:] == 0) + 1
    if len(zeros) < n:
        raise IncompletePathError(f"path has {len(zeros)} returns, need {n}")
    horizon = zeros[n - 1]
    seg = v[:horizon + 1]
    up = seg[1:] > seg[:-1]
    counts = np.bincount(seg[:-1][up], minlength=1)
    if K is not None:
        nK = int(round(K * n))
        counts = np.bincount(seg[:-1][up], minlength=nK + 1)[:nK + 1]
        counts[nK:] = 0
    return BranchingTrajectory(counts / n, n, counts[0] / n)


def split_excursions(path):
    """Sub-paths between consecutive returns to 0 (|S| or reflected convention)."""
    conv = "reflected" if isinstance(path, ReflectedWalkPath) else "absolute"
    zeros = np.concatenate([[0], return_times(path, conv).return_times])
    kind = type(path)
    extra = {"K": path.K} if isinstance(path, ReflectedWalkPath) else {}
    return [kind(path.sites[a:b + 1], path.n, path.env_ref, **extra) for a, b in zip(zeros[:-1], zeros[1:])]


@njit(cache=True)
def _offspring_pass(v, out_levels, out_counts):
    stack_children = np.zeros(v.max() + 2, dtype=np.int64)
    depth = 0
    m = 0
    for j in range(v.shape[0] - 1):
        a = v[j]
        b = v[j + 1]
        if b == a + 1:
            if depth > 0:
                stack_children[depth - 1] += 1
            stack_children[depth] = 0
            depth += 1
        else:
            depth -= 1
            out_levels[m] = a - 1
            out_counts[m] = stack_children[depth]
            m += 1
    return m


def offspring_counts(path, convention=None):
    """Children per individual: (generation, count) for each closed up-crossing.

    An up-crossing from level a to a+1 is an individual of generation a; its
    children are the up-crossings from a+1 before the walk returns to a.
    The path must be a concatenation of complete excursions (ending at 0).
    """
    if convention is None:
        convention = "reflected" if isinstance(path, ReflectedWalkPath) else "absolute"
    v = np.ascontiguousarray(_convention_values(path, convention), dtype=np.int64)
    if v[0] != 0 or v[-1] != 0:
        raise ParameterError("path must start and end at 0")
    size = len(v) // 2 + 1
    levels = np.empty(size, dtype=np.int64)
    counts = np.empty(size, dtype=np.int64)
    m = _offspring_pass(v, levels, counts)
    return levels[:m], counts[:m]
