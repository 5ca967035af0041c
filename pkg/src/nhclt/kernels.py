"""Finite-state transition kernels and the Dobrushin coefficient calculus.

A kernel is a row-stochastic matrix on a :class:`StateGrid`. The contraction
coefficient of a kernel is the largest total-variation distance between two
of its rows; on a finite grid the supremum over Borel sets reduces to half the
L1 distance between rows.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _backend

ROW_SUM_TOL = 1e-12
REACHABLE_TOL = 1e-14

_DYADIC_BITS = 52


class KernelError(ValueError):
    """Raised when a kernel or kernel sequence violates its invariants."""


@dataclass(frozen=True)
class StateGrid:
    """Strictly increasing, finite list of real state values."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise KernelError("state grid must be nonempty")
        if not np.all(np.isfinite(pts)):
            raise KernelError("state grid must be finite")
        if np.any(np.diff(pts) <= 0):
            raise KernelError("state grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, StateGrid):
            return NotImplemented
        return self is other or np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


class StochasticKernel:
    """One-step transition matrix; row = source state, column = destination."""

    __slots__ = ("grid", "rows", "_cum")

    def __init__(self, grid, rows):
        if not isinstance(grid, StateGrid):
            grid = StateGrid(grid)
        rows = np.array(rows, dtype=float)
        s = len(grid)
        if rows.shape != (s, s):
            raise KernelError(f"kernel must be {s}x{s}, got {rows.shape}")
        if not np.all(np.isfinite(rows)) or np.any(rows < 0):
            raise KernelError("kernel entries must be finite and nonnegative")
        drift = np.abs(rows.sum(axis=1) - 1.0).max()
        if drift > ROW_SUM_TOL:
            raise KernelError(f"row sums deviate from 1 by {drift:.3g}")
        rows.setflags(write=False)
        self.grid = grid
        self.rows = rows
        self._cum = None

    def __repr__(self):
        return f"StochasticKernel(states={len(self.grid)})"

    def apply(self, h):
        """Return the function ``x -> sum_y K(x, y) h(y)``."""
        return self.rows @ np.asarray(h, dtype=float)

    def push(self, mu):
        """Return the distribution after one step from ``mu``."""
        return np.asarray(mu, dtype=float) @ self.rows

    def cumulative(self):
        """Row-wise CDF used for inverse-transform sampling.

        Entries from the last positive-mass column onward are pinned to 1.0 so
        that a uniform draw in [0, 1) always lands on a state of positive mass.
        """
        if self._cum is None:
            cum = np.minimum(np.cumsum(self.rows, axis=1), 1.0)
            last = self.rows.shape[1] - 1 - np.argmax(self.rows[:, ::-1] > 0, axis=1)
            cols = np.arange(self.rows.shape[1])
            cum[cols[None, :] >= last[:, None]] = 1.0
            cum.setflags(write=False)
            self._cum = cum
        return self._cum


@dataclass(frozen=True)
class KernelSequence:
    """Kernels K_{i,i+1} for i = 1..n+m-1 on one shared grid.

    ``kernels[t]`` moves the chain from time ``t + 1`` to ``t + 2`` (times are
    1-based as in the usual notation). Repeated kernels may be the same object.
    """

    grid: StateGrid
    kernels: tuple
    horizon: int
    lookahead: int = 0

    def __post_init__(self):
        if not isinstance(self.grid, StateGrid):
            object.__setattr__(self, "grid", StateGrid(self.grid))
        kernels = tuple(self.kernels)
        object.__setattr__(self, "kernels", kernels)
        n, m = int(self.horizon), int(self.lookahead)
        if n < 1 or m < 0:
            raise KernelError("need horizon >= 1 and lookahead >= 0")
        if len(kernels) != max(n + m - 1, 0):
            raise KernelError(f"expected {n + m - 1} kernels, got {len(kernels)}")
        for k in kernels:
            if not isinstance(k, StochasticKernel):
                raise KernelError("kernel sequence entries must be StochasticKernel")
            if k.grid != self.grid:
                raise KernelError("all kernels must share one state grid")

    @property
    def length(self):
        """Number of chain times, n + m."""
        return self.horizon + self.lookahead

    def __getitem__(self, i):
        """One-step kernel K_{i,i+1} with 1-based ``i``."""
        if not 1 <= i < self.length:
            raise IndexError(f"step {i} outside 1..{self.length - 1}")
        return self.kernels[i - 1]


@dataclass(frozen=True)
class CoefficientReport:
    per_step_delta: np.ndarray
    alpha_n: float
    steps: tuple = field(default=())

    def to_dict(self):
        return {
            "per_step_delta": [float(d) for d in self.per_step_delta],
            "alpha_n": float(self.alpha_n),
            "steps": list(self.steps),
        }


def _distinct_rows(rows):
    if rows.shape[0] < 2:
        return rows
    return np.ascontiguousarray(np.unique(rows, axis=0))


def dobrushin_delta(K, support=None):
    """Contraction coefficient of ``K``.

    Parameters
    ----------
    K : StochasticKernel or 2-d array
    support : boolean mask, optional
        Restrict the scan to source states in the mask (e.g. the states the
        chain can actually occupy).

    Identical rows contribute nothing, so rows are de-duplicated before the
    exhaustive pair scan. Rows with disjoint supports give exactly 1.
    """
    rows = K.rows if isinstance(K, StochasticKernel) else np.asarray(K, dtype=float)
    if support is not None:
        rows = rows[np.asarray(support, dtype=bool)]
    rows = _distinct_rows(rows)
    if rows.shape[0] < 2:
        return 0.0
    return float(_backend.delta_rows(rows))


def compose(K1, K2):
    """Two-step kernel: first ``K1`` then ``K2``."""
    if K1.grid != K2.grid:
        raise KernelError("cannot compose kernels on different grids")
    rows = K1.rows @ K2.rows
    sums = rows.sum(axis=1, keepdims=True)
    if np.abs(sums - 1.0).max() > ROW_SUM_TOL:
        rows = rows / sums
    return StochasticKernel(K1.grid, rows)


def multistep(seq, i, j):
    """Kernel K_{i,j} = K_{i,i+1} ... K_{j-1,j} for 1 <= i < j <= n."""
    if not 1 <= i < j <= seq.horizon:
        raise IndexError(f"need 1 <= i < j <= {seq.horizon}, got ({i}, {j})")
    out = seq[i]
    for t in range(i + 1, j):
        out = compose(out, seq[t])
    return out


def minimal_ergodic_coefficient(seq, supports=None):
    """Minimal ergodic coefficient alpha_n over steps 1..n-1.

    ``per_step_delta`` lists every stored step (the trailing ``m`` steps are
    diagnostics only and do not enter ``alpha_n``). ``supports[t]`` is an
    optional mask of states occupied at time ``t + 1``.
    """
    if seq.horizon < 2:
        raise KernelError("minimal ergodic coefficient needs horizon n >= 2")
    cache = {}
    deltas = []
    for t, K in enumerate(seq.kernels):
        mask = None if supports is None else np.asarray(supports[t], dtype=bool)
        key = (id(K), None if mask is None else mask.tobytes())
        if key not in cache:
            cache[key] = dobrushin_delta(K, mask)
        deltas.append(cache[key])
    deltas = np.array(deltas)
    alpha = 1.0 - float(deltas[: seq.horizon - 1].max())
    return CoefficientReport(deltas, alpha, tuple(range(1, len(deltas) + 1)))


def oscillation(h, support=None):
    """max(h) - min(h), optionally over a mask of states."""
    h = np.asarray(h, dtype=float)
    if support is not None:
        h = h[np.asarray(support, dtype=bool)]
    if h.size == 0:
        return 0.0
    return float(h.max() - h.min())


def dyadic_masses(weights):
    """Quantize a probability vector to multiples of 2**-52 summing to 1.

    Every partial sum of such a vector is exactly representable, so any row
    built from it sums to exactly 1.0 regardless of summation order.
    Largest-remainder rounding keeps each entry within 2**-52 of the input.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise KernelError("weights must be nonnegative with positive total")
    scale = 2**_DYADIC_BITS
    target = w / w.sum() * scale
    units = np.floor(target).astype(np.int64)
    short = scale - int(units.sum())
    if short:
        order = np.argsort(-(target - units), kind="stable")
        units[order[:short]] += 1
    return units.astype(float) / scale


def sequence_to_dict(seq):
    """JSON-ready dict; shared kernels are stored once with an index list."""
    distinct, index, seen = [], [], {}
    for K in seq.kernels:
        if id(K) not in seen:
            seen[id(K)] = len(distinct)
            distinct.append(K)
        index.append(seen[id(K)])
    doc = {
        "grid": [float(x) for x in seq.grid.points],
        "n": seq.horizon,
        "m": seq.lookahead,
    }
    doc["kernels"] = [K.rows.tolist() for K in distinct]
    if len(distinct) != len(index):
        doc["kernel_index"] = index
    return doc


def sequence_from_dict(doc):
    grid = StateGrid(doc["grid"])
    distinct = [StochasticKernel(grid, rows) for rows in doc["kernels"]]
    index = doc.get("kernel_index", range(len(distinct)))
    return KernelSequence(grid, tuple(distinct[k] for k in index), doc["n"], doc.get("m", 0))


def dumps_sequence(seq):
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(sequence_to_dict(seq))


def loads_sequence(text):
    return sequence_from_dict(json.loads(text))
