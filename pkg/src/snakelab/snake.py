"""Discrete Brownian snake over a reflected contour.

Each up-step of the contour opens a new edge of a plane tree and attaches a
fresh d-dimensional Gaussian segment (variance 1/n per coordinate) to it;
each down-step moves back to the parent. The stopped path at step j is the
concatenation of segments along the root-to-node path of the current node,
so paths are shared and never copied.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import replica_rng
from .errors import IncompletePathError, ParameterError
from .walk import ReflectedWalkPath

_STREAM_SNAKE = 7


@dataclass(frozen=True)
class MeasureState:
    """Atoms of mass 1/n at ``atoms`` (shape (m, d)) at time ``t``."""
    atoms: np.ndarray
    n: int
    t: float

    @property
    def mass(self):
        return len(self.atoms) / self.n

    def evaluate(self, phi):
        if len(self.atoms) == 0:
            return 0.0
        return float(np.sum(phi(self.atoms)) / self.n)


@dataclass(frozen=True)
class StoppedPath:
    """w on [0, lifetime] sampled at ``times``; constant after the lifetime."""
    times: np.ndarray
    values: np.ndarray
    lifetime: float

    @property
    def tip(self):
        return self.values[-1]

    def __call__(self, t):
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, self.lifetime)
        return np.stack([np.interp(t, self.times, self.values[:, k]) for k in range(self.values.shape[1])], axis=-1)


@njit(cache=True)
def _build_tree(sites, parent, depth, cursor):
    cur = 0
    nodes = 1
    cursor[0] = 0
    for j in range(sites.shape[0] - 1):
        if sites[j + 1] > sites[j]:
            parent[nodes] = cur
            depth[nodes] = depth[cur] + 1
            cur = nodes
            nodes += 1
        else:
            cur = parent[cur]
        cursor[j + 1] = cur
    return nodes


@njit(cache=True)
def _node_positions(parent, inc):
    pos = np.zeros((parent.shape[0], inc.shape[1]))
    for c in range(1, parent.shape[0]):
        pos[c] = pos[parent[c]] + inc[c]
    return pos


@dataclass(frozen=True)
class SnakeTrajectory:
    contour: ReflectedWalkPath
    d: int
    parent: np.ndarray
    depth: np.ndarray
    segments: np.ndarray     # (nodes, substeps, d); row 0 (root) is zero
    positions: np.ndarray    # (nodes, d) tip of the root path of each node
    cursor: np.ndarray       # node at each contour step

    @property
    def n(self):
        return self.contour.n

    @property
    def stored_segments(self):
        return len(self.parent) - 1

    @property
    def substeps(self):
        return self.segments.shape[1]

    @property
    def increments(self):
        return self.segments.sum(axis=1)

    def lifetime(self, j):
        return self.depth[self.cursor[j]] / self.n

    def node_path(self, node):
        """Stopped path of the root-to-node concatenation."""
        chain = []
        while node != 0:
            chain.append(node)
            node = self.parent[node]
        chain.reverse()
        m = self.substeps
        steps = self.segments[chain].reshape(-1, self.d) if chain else np.zeros((0, self.d))
        values = np.vstack([np.zeros((1, self.d)), np.cumsum(steps, axis=0)])
        if chain:
            # edge endpoints are taken from the stored node positions
            values[m::m] = self.positions[chain]
        times = np.arange(len(values)) / (self.n * m)
        return StoppedPath(times, values, len(chain) / self.n)

    def path(self, j):
        return self.node_path(int(self.cursor[j]))


def build_snake(contour, d, seed, replica=0, substeps=1):
    if contour.sites[0] != 0:
        raise ParameterError("contour must start at 0")
    if d < 1 or substeps < 1:
        raise ParameterError("d and substeps must be positive")
    sites = np.ascontiguousarray(contour.sites, dtype=np.int64)
    ups = int(np.count_nonzero(sites[1:] > sites[:-1]))
    parent = np.full(ups + 1, -1, dtype=np.int64)
    depth = np.zeros(ups + 1, dtype=np.int64)
    cursor = np.empty(len(sites), dtype=np.int64)
    _build_tree(sites, parent, depth, cursor)
    rng = replica_rng(seed, replica, _STREAM_SNAKE)
    segments = np.zeros((ups + 1, substeps, d))
    segments[1:] = rng.standard_normal((ups, substeps, d)) * np.sqrt(1.0 / (contour.n * substeps))
    positions = _node_positions(parent, segments.sum(axis=1))
    return SnakeTrajectory(contour, d, parent, depth, segments, positions, cursor)


def tip_series(snake):
    """(tip position, lifetime) at every contour step."""
    return snake.positions[snake.cursor], snake.depth[snake.cursor] / snake.n


def snake_distance(w1, w2):
    """sup_t |w1(t) - w2(t)| + |lifetime1 - lifetime2| with constant extension."""
    grid = np.union1d(w1.times, w2.times)
    gap = np.linalg.norm(w1(grid) - w2(grid), axis=-1)
    return float(gap.max() + abs(w1.lifetime - w2.lifetime))


def _horizon(snake):
    sites = snake.contour.sites
    zeros = np.flatnonzero(sites[1:] == 0) + 1
    if len(zeros) < snake.n:
        raise IncompletePathError(f"contour has {len(zeros)} returns, need {snake.n}")
    return zeros[snake.n - 1]


def upcrossing_steps(snake, level):
    """Steps j before the n-th return at which the contour goes from level to level + 1."""
    sites = snake.contour.sites
    horizon = _horizon(snake)
    seg = sites[:horizon + 1]
    return np.flatnonzero((seg[:-1] == level) & (seg[1:] == level + 1))


def measure_from_snake(snake, level, phi=None):
    """The measure at time level/n from the tips at up-crossings of ``level``.

    Returns the MeasureState, or its integral against ``phi`` when given.
    """
    level = int(level)
    n = snake.n
    if level >= snake.contour.nK:
        state = MeasureState(np.zeros((0, snake.d)), n, level / n)
    else:
        steps = upcrossing_steps(snake, level)
        state = MeasureState(snake.positions[snake.cursor[steps]], n, level / n)
    return state if phi is None else state.evaluate(phi)


def _ancestor(parent, nodes, generations):
    for _ in range(generations):
        nodes = parent[nodes]
    return nodes


def displacement_count(snake, a, delta, eta):
    """Atoms at time a_n + delta farther than delta^(1/2 - eta) from their ancestor at a_n."""
    n = snake.n
    base = int(np.floor(a * n + 1e-9))
    level = base + int(np.floor(delta * n + 1e-9))
    if level >= snake.contour.nK:
        return 0
    nodes = snake.cursor[upcrossing_steps(snake, level)]
    if len(nodes) == 0:
        return 0
    anc = _ancestor(snake.parent, nodes, level - base)
    dist = np.linalg.norm(snake.positions[nodes] - snake.positions[anc], axis=1)
    return int(np.count_nonzero(dist > delta ** (0.5 - eta)))
