"""Online selection of an alternating subsequence from uniform observations.

States are reflected: after selecting a local minimum ``v`` the state is
``v``; after a local maximum ``v`` it is ``1 - v``. In both cases the next
selection must exceed the state, and a selected value ``y`` moves the state
to ``1 - y``. The start state is 0 (nothing selected yet).

Observations are discretised to ``G`` equal cells with midpoints
``(j + 1/2) / G``; non-start states are the same midpoints, so the state
space is ``{0} U {midpoints}`` with ``G + 1`` points.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .decomposition import ChainLaw, RewardFunctionArray, marginals, supports
from .kernels import (
    KernelSequence,
    StateGrid,
    StochasticKernel,
    dobrushin_delta,
    dyadic_masses,
)

DEFAULT_CELLS = 400


class ReconstructionError(RuntimeError):
    """The solved thresholds violate a structural property they must have."""


@dataclass(frozen=True)
class AltSubSolution:
    cells: int
    threshold_index: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @property
    def n(self):
        return self.threshold_index.shape[0]

    @property
    def midpoints(self):
        return (np.arange(self.cells) + 0.5) / self.cells

    @property
    def states(self):
        return np.concatenate([[0.0], self.midpoints])

    @property
    def step(self):
        return 1.0 / self.cells

    @property
    def thresholds(self):
        """g_k(x) for k = 1..n (rows) and every state (columns); 1.0 means reject all."""
        ext = np.concatenate([self.midpoints, [1.0]])
        return ext[self.threshold_index]

    def to_csv(self, ks=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "x", "g_k"])
        g = self.thresholds
        xs = self.states
        for k in ks or range(1, self.n + 1):
            for x, gx in zip(xs, g[k - 1]):
                writer.writerow([k, repr(float(x)), repr(float(gx))])
        return buf.getvalue()


def _reflect_cell(cells):
    """State index reached by selecting each cell: 1 - y_j is midpoint G-1-j."""
    return (cells - 1 - np.arange(cells)) + 1


def solve_alt_thresholds(n, cells=DEFAULT_CELLS, check=True):
    """Threshold functions g_1..g_n by backward induction.

    With k observations left, u_k(x) is the optimal expected number of
    further selections from state x. Selecting y is feasible when y is at
    least x and is worthwhile when 1 + u_{k-1}(1 - y) >= u_{k-1}(x); g_k(x)
    is the smallest such y. A selection whose reflection equals x itself is
    treated as a rejection (it would not change the state).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if cells < 6:
        raise ValueError("need at least 6 cells")
    G = cells
    S = G + 1
    w = dyadic_masses(np.ones(G))
    refl = _reflect_cell(G)
    j = np.arange(G)
    s_idx = np.arange(S)
    lowest = np.maximum(s_idx - 1, 0)
    feasible = j[None, :] >= lowest[:, None]
    collide = np.zeros((S, G), dtype=bool)
    collide[s_idx[1:], G - 1 - (s_idx[1:] - 1)] = True
    u = np.zeros((n + 1, S))
    tidx = np.empty((n, S), dtype=np.int64)
    for k in range(1, n + 1):
        prev = u[k - 1]
        gain = 1.0 + prev[refl]
        accept = feasible & (gain[None, :] >= prev[:, None])
        has = accept.any(axis=1)
        t = np.where(has, np.argmax(accept, axis=1), G)
        if check and not np.array_equal(accept, j[None, :] >= t[:, None]):
            raise ReconstructionError(f"acceptance set is not an upper interval at k = {k}")
        counted = accept & ~collide
        u[k] = np.where(counted, gain[None, :], prev[:, None]) @ w
        tidx[k - 1] = t
    sol = AltSubSolution(G, tidx, u, w)
    if check:
        _check_properties(sol)
    tidx.setflags(write=False)
    u.setflags(write=False)
    return sol


def _check_properties(sol):
    g = sol.thresholds
    x = sol.states
    upper = x >= 1.0 / 3.0
    bad = np.flatnonzero(np.any(g[:, upper] != x[upper], axis=1))
    if bad.size:
        raise ReconstructionError(f"g_k(x) != x on [1/3, 1] for k = {bad[0] + 1}")
    if sol.n >= 3:
        low = g[2:].min()
        if low < 1.0 / 6.0 - 2 * sol.step:
            raise ReconstructionError(f"min g_k = {low:.6f} < 1/6 - 2 step for some k >= 3")
    if np.any(np.diff(sol.values, axis=0) < -1e-12):
        raise ReconstructionError("values are not nondecreasing in k")


@dataclass(frozen=True)
class AltSubChain:
    law: ChainLaw
    rewards: RewardFunctionArray
    solution: AltSubSolution


def _kernel_rows(sol, t):
    G = sol.cells
    S = G + 1
    w = sol.weights
    refl = _reflect_cell(G)
    rows = np.zeros((S, S))
    cum = np.concatenate([[0.0], np.cumsum(w)])
    for s in range(S):
        rows[s, s] += cum[t[s]]
        acc = np.arange(t[s], G)
        np.add.at(rows[s], refl[acc], w[acc])
    return rows


def build_altsub_chain(solution, n):
    """Chain with X_1 = 0 and kernel K_i built from g_{n-i+1}; reward 1(y != x)."""
    if solution.n < n:
        raise ValueError(f"solution horizon {solution.n} shorter than n = {n}")
    grid = StateGrid(solution.states)
    S = len(grid)
    cache = {}
    kernels = []
    for i in range(1, n + 1):
        t = solution.threshold_index[n - i]
        key = t.tobytes()
        if key not in cache:
            cache[key] = StochasticKernel(grid, _kernel_rows(solution, t))
        kernels.append(cache[key])
    initial = np.zeros(S)
    initial[0] = 1.0
    switch = 1.0 - np.eye(S)
    switch.setflags(write=False)
    law = ChainLaw(initial, KernelSequence(grid, tuple(kernels), n, 1))
    return AltSubChain(law, RewardFunctionArray((switch,) * n, n, 1), solution)


@dataclass(frozen=True)
class AltSubAlphaCertificate:
    passed: bool
    alpha: float
    per_step_delta: tuple
    max_state: float
    tolerance: float

    def to_dict(self):
        return {
            "passed": self.passed,
            "alpha": self.alpha,
            "per_step_delta": list(self.per_step_delta),
            "max_state_before_n_minus_1": self.max_state,
            "tolerance": self.tolerance,
        }


def altsub_alpha_certificate(chain):
    """delta(K_i) <= 5/6 + 2 step for i = 1..n-3 on the reachable states.

    The last two steps, where thresholds may drop below 1/6, are excluded.
    """
    law = chain.law
    n = law.n
    tol = 2 * chain.solution.step
    supp = supports(marginals(law))
    deltas = []
    cache = {}
    for i in range(1, n - 2):
        K = law.seq[i]
        key = (id(K), supp[i - 1].tobytes())
        if key not in cache:
            cache[key] = dobrushin_delta(K, supp[i - 1])
        deltas.append(cache[key])
    pts = law.grid.points
    max_state = max((float(pts[supp[t - 1]].max()) for t in range(1, n - 1)), default=0.0)
    alpha = 1.0 - max(deltas) if deltas else 1.0
    passed = all(d <= 5 / 6 + tol for d in deltas) and alpha >= 1 / 6 - tol and max_state <= 5 / 6 + tol
    return AltSubAlphaCertificate(bool(passed), alpha, tuple(deltas), max_state, tol)


def simulate_policy(solution, n, uniforms):
    """Run the threshold policy directly on observation uniforms.

    Parameters
    ----------
    uniforms : (N, n) array of U[0, 1) draws, one row per path.

    Returns
    -------
    paths : (N, n + 1) state indices
    selections : (N,) number of selected observations
    """
    u = np.asarray(uniforms, dtype=float)
    if u.ndim != 2 or u.shape[1] < n:
        raise ValueError("need an (N, n) array of uniforms")
    G = solution.cells
    refl = _reflect_cell(G)
    N = u.shape[0]
    paths = np.empty((N, n + 1), dtype=np.intp)
    paths[:, 0] = 0
    count = np.zeros(N, dtype=np.int64)
    state = np.zeros(N, dtype=np.intp)
    for i in range(1, n + 1):
        t = solution.threshold_index[n - i][state]
        cell = np.minimum((u[:, i - 1] * G).astype(np.intp), G - 1)
        nxt = refl[cell]
        take = (cell >= t) & (nxt != state)
        state = np.where(take, nxt, state)
        count += take
        paths[:, i] = state
    return paths, count
