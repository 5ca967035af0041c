"""Finite-horizon dynamic inventory control with backlogging.

Inventory levels live on the lattice ``h * Z``. Demand is discretised to
lattice atoms whose masses are exact dyadic rationals, so every transition
row of the induced chain sums to exactly one.

Index conventions: a lattice index ``k`` means inventory ``k * h``. The DP
works on indices ``-Jk..Jk`` (``Jk = J / h``); the chain grid is
``-Jk..top`` where ``top`` covers s_inf, every base-stock level, and the
start state.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats

from . import _backend
from .decomposition import ChainLaw, RewardFunctionArray, marginals, moments_exact, supports
from .kernels import (
    KernelSequence,
    StateGrid,
    StochasticKernel,
    dyadic_masses,
    minimal_ergodic_coefficient,
)

DENSITY_MASS_TOL = 1e-8
CONVEXITY_TOL = 1e-9


class InventoryModelError(ValueError):
    """Invalid cost parameters or demand density."""


class GridTooCoarseError(ValueError):
    """The lattice cannot resolve the newsvendor quantile to 2h."""


class Demand:
    """Demand law with density on ``[0, J]``.

    Parameters
    ----------
    kind : {"uniform", "beta", "truncated_exponential", "table", "custom"}
    params : dict
        ``beta``: ``a``, ``b``; ``truncated_exponential``: ``rate``;
        ``table``: ``weights`` (piecewise-constant density on equal bins);
        ``custom``: ``pdf`` (vectorised callable).
    J : float
        Right end of the support.
    """

    KINDS = ("uniform", "beta", "truncated_exponential", "table", "custom")

    def __init__(self, kind, params=None, J=1.0):
        params = dict(params or {})
        if kind not in self.KINDS:
            raise InventoryModelError(f"unknown demand kind {kind!r}")
        J = float(J)
        if not np.isfinite(J) or J <= 0:
            raise InventoryModelError("demand support [0, J] must have positive length")
        self.kind, self.params, self.J = kind, params, J
        self._dist = None
        self._table = None
        self._pdf = None
        if kind == "uniform":
            self._dist = stats.uniform(loc=0.0, scale=J)
        elif kind == "beta":
            a, b = float(params.get("a", 2.0)), float(params.get("b", 2.0))
            if a <= 0 or b <= 0:
                raise InventoryModelError("beta parameters must be positive")
            self._dist = stats.beta(a, b, loc=0.0, scale=J)
        elif kind == "truncated_exponential":
            rate = float(params.get("rate", 1.0))
            if rate <= 0:
                raise InventoryModelError("exponential rate must be positive")
            self._dist = stats.truncexpon(b=rate * J, loc=0.0, scale=1.0 / rate)
        elif kind == "table":
            w = np.asarray(params.get("weights", ()), dtype=float)
            if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InventoryModelError("table weights must be finite and nonnegative")
            width = J / w.size
            mass = w.sum() * width
            if abs(mass - 1.0) > DENSITY_MASS_TOL:
                raise InventoryModelError(f"table density integrates to {mass:.12g}, not 1")
            self._table = (w, width, np.concatenate([[0.0], np.cumsum(w * width)]))
        else:
            pdf = params.get("pdf")
            if not callable(pdf):
                raise InventoryModelError("custom demand needs a callable 'pdf'")
            self._pdf = pdf
            probe = np.asarray(pdf(np.linspace(0.0, J, 1001)), dtype=float)
            if np.any(probe < 0) or not np.all(np.isfinite(probe)):
                raise InventoryModelError("density must be finite and nonnegative")
            mass = integrate.quad(lambda x: float(pdf(np.array([x]))[0]), 0.0, J, limit=200)[0]
            if abs(mass - 1.0) > DENSITY_MASS_TOL:
                raise InventoryModelError(f"density integrates to {mass:.12g}, not 1")

    def __repr__(self):
        return f"Demand({self.kind!r}, J={self.J})"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        # closed support; absorb lattice round-off at the endpoints
        slack = 1e-12 * self.J
        inside = (x >= -slack) & (x <= self.J + slack)
        if self._dist is not None:
            out = self._dist.pdf(np.clip(x, 0.0, self.J))
        elif self._table is not None:
            w, width, _ = self._table
            out = w[np.clip((x // width).astype(int), 0, w.size - 1)]
        else:
            out = np.asarray(self._pdf(np.clip(x, 0.0, self.J)), dtype=float)
        return np.where(inside, out, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self._dist is not None:
            out = self._dist.cdf(x)
        elif self._table is not None:
            w, width, cum = self._table
            xc = np.clip(x, 0.0, self.J)
            k = np.clip((xc // width).astype(int), 0, w.size - 1)
            out = cum[k] + w[k] * (xc - k * width)
        else:
            xc = np.atleast_1d(np.clip(x, 0.0, self.J))
            out = np.array([integrate.quad(lambda t: float(self._pdf(np.array([t]))[0]),
                                           0.0, v, limit=200)[0] for v in xc.ravel()])
            out = out.reshape(np.shape(x))
        return np.clip(out, 0.0, 1.0)

    def ppf(self, p):
        """Smallest x with cdf(x) >= p (by root finding if no closed form)."""
        if self._dist is not None:
            return float(self._dist.ppf(p))
        if p <= 0:
            return 0.0
        if p >= 1:
            return self.J
        return float(optimize.brentq(lambda x: float(self.cdf(x)) - p, 0.0, self.J, xtol=1e-14))

    def to_dict(self):
        params = {k: v for k, v in self.params.items() if k != "pdf"}
        if "weights" in params:
            params["weights"] = [float(w) for w in params["weights"]]
        return {"kind": self.kind, "params": params, "J": self.J}


@dataclass(frozen=True)
class InventoryModel:
    c: float
    c_h: float
    c_p: float
    demand: Demand
    grid_step: float = None

    def __post_init__(self):
        if not (0 < self.c < self.c_p):
            raise InventoryModelError("need 0 < c < c_p")
        if not self.c_h > 0:
            raise InventoryModelError("need c_h > 0")
        h = self.demand.J / 400 if self.grid_step is None else float(self.grid_step)
        if not h > 0:
            raise InventoryModelError("grid step must be positive")
        Jk = int(round(self.demand.J / h))
        if Jk < 2 or abs(Jk * h - self.demand.J) > 1e-9 * self.demand.J:
            raise InventoryModelError("grid step must divide J into at least two cells")
        object.__setattr__(self, "grid_step", h)

    @property
    def h(self):
        return self.grid_step

    @property
    def Jk(self):
        return int(round(self.demand.J / self.grid_step))

    @property
    def s1_ratio(self):
        return (self.c_p - self.c) / (self.c_h + self.c_p)

    @property
    def s_inf_ratio(self):
        return self.c_p / (self.c_h + self.c_p)

    def alpha_bound(self):
        """min{c_h, c_p - c} / (c_h + c_p)."""
        return min(self.c_h, self.c_p - self.c) / (self.c_h + self.c_p)

    def carrying_cost(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.c_h * x, -self.c_p * x)

    def demand_atoms(self):
        """Masses of demand at lattice points 0, h, ..., J (nearest-point rounding)."""
        k = np.arange(self.Jk + 1)
        edges = np.clip((k + 0.5) * self.h, 0.0, self.demand.J)
        lower = np.clip((k - 0.5) * self.h, 0.0, self.demand.J)
        return dyadic_masses(self.demand.cdf(edges) - self.demand.cdf(lower))

    def to_dict(self):
        return {"c": self.c, "c_h": self.c_h, "c_p": self.c_p,
                "demand": self.demand.to_dict(), "grid_step": self.grid_step}


@dataclass(frozen=True)
class BaseStockSolution:
    model: InventoryModel
    level_index: np.ndarray
    value_functions: np.ndarray
    s_inf: float
    s1_quantile: float

    @property
    def n(self):
        return self.level_index.size

    @property
    def levels(self):
        return self.level_index * self.model.h

    @property
    def dp_grid(self):
        Jk = self.model.Jk
        return np.arange(-Jk, Jk + 1) * self.model.h

    def value(self, k, x):
        """v_k at inventory ``x`` (snapped to the lattice)."""
        idx = int(round(x / self.model.h)) + self.model.Jk
        return float(self.value_functions[k, idx])

    def is_monotone(self):
        return bool(np.all(np.diff(self.level_index) >= 0))

    def convexity_defect(self):
        """Most negative discrete second difference over all v_k."""
        if self.value_functions.shape[1] < 3:
            return 0.0
        second = np.diff(self.value_functions, n=2, axis=1)
        return float(min(0.0, second.min()))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "s_k"])
        for k, s in enumerate(self.levels, start=1):
            writer.writerow([k, repr(float(s))])
        return buf.getvalue()


def solve_base_stock(model, n):
    """Backward induction for v_0..v_n and the base-stock levels s_1..s_n.

    With k periods left, G_k(y) = c y + E[L(y - D) + v_{k-1}(y - D)] and the
    level s_k is the smallest minimiser of G_k. G_k is decreasing for y < 0,
    so the search runs over y in [0, J]. v_k(x) = min_{y >= x} G_k(y) - c x.
    """
    if n < 1:
        raise ValueError("horizon must be at least 1")
    Jk, h = model.Jk, model.h
    q = model.demand_atoms()
    xs = np.arange(-Jk, Jk + 1) * h
    L = model.carrying_cost(xs)
    y_idx = np.arange(0, Jk + 1)
    ys = y_idx * h
    v = np.zeros((n + 1, xs.size))
    levels = np.empty(n, dtype=np.int64)
    for k in range(1, n + 1):
        F = L + v[k - 1]
        # G[y] = c y + sum_d q[d] F[y - d]; F index y - d + Jk
        conv = np.convolve(F, q)
        G = model.c * ys + conv[y_idx + Jk]
        s = int(np.argmin(G))
        levels[k - 1] = s
        suffix = np.minimum.accumulate(G[::-1])[::-1]
        vk = np.empty(xs.size)
        vk[:Jk] = G[s] - model.c * xs[:Jk]
        vk[Jk:] = suffix - model.c * xs[Jk:]
        v[k] = vk
    s_inf = model.demand.ppf(model.s_inf_ratio)
    s1q = model.demand.ppf(model.s1_ratio)
    if abs(levels[0] * h - s1q) > 2 * h:
        raise GridTooCoarseError(
            f"s_1 = {levels[0] * h:.6g} misses the quantile {s1q:.6g} by more than 2h"
        )
    levels.setflags(write=False)
    v.setflags(write=False)
    return BaseStockSolution(model, levels, v, s_inf, s1q)


@dataclass(frozen=True)
class TypicalClassCertificate:
    is_typical: bool
    crossing_points: dict
    h: float
    violations: tuple = field(default=())

    def to_dict(self):
        return {
            "is_typical": self.is_typical,
            "crossing_points": {repr(float(k)): float(v) for k, v in self.crossing_points.items()},
            "h": self.h,
            "violations": [float(e) for e in self.violations],
        }


def typical_class_check(demand, probe_eps, h=None, rel_tol=1e-9):
    """Scan psi(w) - psi(w + eps) for a single - to + sign change.

    The lattice runs over w in [-eps, J] with step ``h``. Differences below
    ``rel_tol * max psi`` count as zero. The crossing ŵ(eps) is the last
    zero before the first positive point when such zeros exist, otherwise
    the first positive point.
    """
    h = demand.J / 400 if h is None else float(h)
    crossings, violations = {}, []
    top = float(np.max(demand.pdf(np.linspace(0, demand.J, 4001))))
    tol = rel_tol * max(top, 1.0)
    for eps in probe_eps:
        eps = float(eps)
        if eps < 0:
            raise ValueError("probe eps must be nonnegative")
        w = np.arange(-int(np.ceil(eps / h - 1e-9)), int(round(demand.J / h)) + 1) * h
        diff = demand.pdf(w) - demand.pdf(w + eps)
        sign = np.where(diff > tol, 1, np.where(diff < -tol, -1, 0))
        pos = np.flatnonzero(sign > 0)
        if pos.size and np.any(sign[pos[0]:] < 0):
            violations.append(eps)
            continue
        if pos.size == 0:
            crossings[eps] = float(demand.J)
            continue
        first = pos[0]
        if first > 0 and sign[first - 1] == 0:
            crossings[eps] = float(w[first - 1])
        else:
            crossings[eps] = float(w[first])
    return TypicalClassCertificate(not violations, crossings, h, tuple(violations))


@dataclass(frozen=True)
class InventoryChain:
    law: ChainLaw
    rewards: RewardFunctionArray
    solution: BaseStockSolution
    offset: int
    start_index: int
    kernel_levels: tuple

    @property
    def grid_index(self):
        """Lattice index of each chain state."""
        return np.arange(len(self.law.grid)) - self.offset


def build_inventory_chain(model, solution, n, start_state=0.0):
    """Chain X_{i+1} = max(X_i, s_{n-i+1}) - D_i with m = 1 rewards.

    f_i(x, y) = c (gamma_i(x) - x) + L(y). Kernels and reward tensors are
    shared between periods that use the same base-stock level.
    """
    if solution.n < n:
        raise ValueError(f"solution horizon {solution.n} shorter than n = {n}")
    if not -solution.s_inf - 1e-12 <= start_state <= solution.s_inf + 1e-12:
        raise ValueError(f"start state {start_state} outside [-s_inf, s_inf]")
    Jk, h = model.Jk, model.h
    start = int(round(start_state / h))
    levels = [int(solution.level_index[n - i]) for i in range(1, n + 1)]
    top = max(max(levels), int(np.ceil(solution.s_inf / h - 1e-9)), start)
    offset = Jk
    idx = np.arange(-Jk, top + 1)
    grid = StateGrid(idx * h)
    S = idx.size
    q = model.demand_atoms()
    nz = np.flatnonzero(q)
    L = model.carrying_cost(idx * h)
    cache = {}

    def kernel_for(level):
        if level not in cache:
            gamma = np.maximum(idx, level)
            rows = np.zeros((S, S))
            dest = gamma[:, None] - nz[None, :] + offset
            rows[np.repeat(np.arange(S), nz.size), dest.ravel()] = np.tile(q[nz], S)
            K = StochasticKernel(grid, rows)
            f = model.c * ((gamma - idx) * h)[:, None] + L[None, :]
            f.setflags(write=False)
            cache[level] = (K, f)
        return cache[level]

    kernels, tensors = [], []
    for level in levels:
        K, f = kernel_for(level)
        kernels.append(K)
        tensors.append(f)
    initial = np.zeros(S)
    initial[start + offset] = 1.0
    seq = KernelSequence(grid, tuple(kernels), n, 1)
    return InventoryChain(
        ChainLaw(initial, seq),
        RewardFunctionArray(tuple(tensors), n, 1),
        solution,
        offset,
        start + offset,
        tuple(levels),
    )


@dataclass(frozen=True)
class AlphaCertificate:
    passed: bool
    alpha_n: float
    bound: float
    tolerance: float
    pair_checks: tuple
    worst_pair_error: float

    def to_dict(self):
        return {
            "passed": self.passed,
            "alpha_n": self.alpha_n,
            "bound": self.bound,
            "tolerance": self.tolerance,
            "worst_pair_error": self.worst_pair_error,
            "pair_checks": [dict(p) for p in self.pair_checks],
        }


def inventory_alpha_certificate(model, chain, pairs=40, seed=0, typical=None):
    """Certify the uniform ergodic-coefficient bound for the built chain.

    (a) For sampled state pairs at steps 1..n the exact row TV is compared
    with P(ŵ <= D <= ŵ + eps), eps = |gamma(x') - gamma(x)|.
    (b) alpha_n over the full grid must be at least the closed-form bound
    minus 2h.
    """
    h = model.h
    seq = chain.law.seq
    n = seq.horizon
    rng = np.random.default_rng(seed)
    S = len(seq.grid)
    idx = chain.grid_index
    steps = rng.integers(1, n + 1, size=pairs)
    steps[: max(pairs // 4, 1)] = n  # lowest level, widest range of eps
    eps_needed = set()
    plan = []
    for k, t in enumerate(steps):
        level = chain.kernel_levels[t - 1]
        # every other pair sits at or above the level, where gamma differs
        lo = 0 if k % 2 else max(int(np.searchsorted(idx, level)) - 1, 0)
        a, b = rng.integers(lo, S, size=2)
        eps_idx = abs(max(idx[a], level) - max(idx[b], level))
        eps_needed.add(eps_idx * h)
        plan.append((int(t), int(a), int(b), eps_idx))
    plan.append((1, 0, 0, 0))
    eps_needed.add(0.0)
    cert = typical or typical_class_check(model.demand, sorted(eps_needed), h)
    if not cert.is_typical:
        raise ValueError("demand density is not in the typical class; no certificate")
    checks, worst = [], 0.0
    for t, a, b, e in plan:
        rows = seq[t].rows
        tv = 0.5 * float(np.abs(rows[a] - rows[b]).sum())
        eps = e * h
        w_hat = cert.crossing_points.get(eps)
        if w_hat is None:
            w_hat = typical_class_check(model.demand, [eps], h).crossing_points[eps]
        predicted = float(model.demand.cdf(w_hat + eps) - model.demand.cdf(w_hat))
        err = abs(tv - predicted)
        worst = max(worst, err)
        checks.append({"step": t, "x": float(idx[a] * h), "x_prime": float(idx[b] * h),
                       "eps": eps, "w_hat": w_hat, "tv": tv, "predicted": predicted})
    alpha = minimal_ergodic_coefficient(seq).alpha_n if n >= 2 else 1.0
    bound = model.alpha_bound()
    passed = worst <= 2 * h + 1e-12 and alpha >= bound - 2 * h
    return AlphaCertificate(bool(passed), alpha, bound, 2 * h, tuple(checks), worst)


@dataclass(frozen=True)
class BivariateReport:
    alpha_hat: float
    rho_hat: float
    per_step_delta: tuple
    witness_residual: float
    representatives: int

    def to_dict(self):
        return {
            "alpha_hat": self.alpha_hat,
            "rho_hat": self.rho_hat,
            "per_step_delta": list(self.per_step_delta),
            "witness_residual": self.witness_residual,
            "representatives": self.representatives,
        }


def bivariate_degeneracy_demo(chain, max_representatives=16):
    """Ergodic coefficient and correlation witness for the pair chain.

    The pair chain (X_i, X_{i+1}) moves from (x, y) to (y, z) with
    probability K_{i+1}(y, z). Rows whose second coordinates differ put
    mass on disjoint sets, so each step has delta = 1. The witness
    g(x, y) = x - E[X_i] is a function of the next state's first
    coordinate, which is already known one step earlier.
    """
    law = chain.law
    n = law.n
    margs = marginals(law)
    supp = supports(margs)
    deltas = []
    rho = None
    residual = 0.0
    reps_used = 0
    for i in range(1, n):
        # pair state at time i is (X_i, X_{i+1}); reachable second coordinates
        K_i = law.kernel(i)
        joint = margs[i - 1][:, None] * K_i
        ys = np.flatnonzero(joint.sum(axis=0) > 0)
        ys = ys[: max_representatives]
        if ys.size < 2:
            if i == 1 and n == 2:
                raise ValueError("pair chain needs two reachable second coordinates")
            continue
        xs = np.array([int(np.flatnonzero(joint[:, y])[0]) for y in ys])
        K_next = law.kernel(i + 1)
        blocks = [np.flatnonzero(K_next[y]) for y in ys]
        width = sum(b.size for b in blocks)
        rows = np.zeros((ys.size, width))
        col = 0
        for r, (y, b) in enumerate(zip(ys, blocks)):
            rows[r, col:col + b.size] = K_next[y, b]
            col += b.size
        deltas.append(float(_backend.delta_rows(np.ascontiguousarray(rows))))
        reps_used = max(reps_used, ys.size)
        if rho is None:
            # first-coordinate marginal of the pair kernel is the point mass
            # at y with weight sum_z K(y, z) (exactly 1 for dyadic rows)
            grid = law.grid.points
            p_next = margs[i]
            mean_x = float(p_next @ grid)
            g = grid[ys] - mean_x
            first_marginal = np.array([K_next[y].sum() for y in ys])
            cond = first_marginal * g
            residual = float(np.abs(cond - g).max())
            w = joint[xs, ys]
            rho = float(np.sqrt(w @ cond**2) / np.sqrt(w @ g**2)) if np.any(g) else 1.0
    if not deltas:
        raise ValueError("pair chain needs two reachable second coordinates")
    alpha_hat = 1.0 - max(deltas)
    return BivariateReport(alpha_hat, rho, tuple(deltas), residual, reps_used)


def beta_constant(model, solution, points=4001):
    """(s_1^2 / 9) inf_{w in [s_1, s_inf]} {Psi(w - 2s_1/3) - Psi(w - s_1)}{Psi(w) - Psi(w - s_1/3)}."""
    s1 = solution.s1_quantile
    w = np.linspace(s1, max(solution.s_inf, s1), points)
    cdf = model.demand.cdf
    vals = (cdf(w - 2 * s1 / 3) - cdf(w - s1)) * (cdf(w) - cdf(w - s1 / 3))
    return s1 * s1 / 9 * float(vals.min())


@dataclass(frozen=True)
class VarianceGrowth:
    n_list: tuple
    variances: tuple
    means: tuple
    slope: float
    beta: float
    ratios: tuple
    slope_factor: float = 1.0

    @property
    def beta_ok(self):
        return all(v >= self.beta * n for n, v in zip(self.n_list, self.variances))

    @property
    def scaled_beta(self):
        """beta times the squared per-unit cost slope, halved."""
        return 0.5 * self.slope_factor**2 * self.beta

    @property
    def scaled_beta_ok(self):
        return all(v >= self.scaled_beta * n for n, v in zip(self.n_list, self.variances))

    @property
    def ratios_ok(self):
        return all(1.5 <= r <= 2.5 for r in self.ratios)

    def to_dict(self):
        return {
            "n_list": list(self.n_list),
            "variances": list(self.variances),
            "means": list(self.means),
            "slope": self.slope,
            "beta": self.beta,
            "beta_ok": self.beta_ok,
            "scaled_beta": self.scaled_beta,
            "scaled_beta_ok": self.scaled_beta_ok,
            "ratios": list(self.ratios),
            "ratios_ok": self.ratios_ok,
        }


def inventory_variance_growth(model, n_list, start_state=0.0, solution=None):
    """Exact Var[cost] per horizon, its least-squares slope and the beta check."""
    n_list = tuple(sorted(int(n) for n in n_list))
    solution = solution or solve_base_stock(model, max(n_list))
    variances, means = [], []
    for n in n_list:
        ch = build_inventory_chain(model, solution, n, start_state)
        mean, var = moments_exact(ch.law, ch.rewards)
        variances.append(var)
        means.append(mean)
    slope = float(np.polyfit(n_list, variances, 1)[0]) if len(n_list) > 1 else variances[0] / n_list[0]
    ratios = tuple(b / a for a, b in zip(variances, variances[1:]))
    return VarianceGrowth(n_list, tuple(variances), tuple(means), slope,
                          beta_constant(model, solution), ratios, abs(model.c_h - model.c))


def grid_convergence(model, n, factors=(1, 2, 4)):
    """s_1, s_n and alpha_n as the grid step is refined by ``factors``."""
    rows = []
    for f in factors:
        refined = InventoryModel(model.c, model.c_h, model.c_p, model.demand, model.h / f)
        sol = solve_base_stock(refined, n)
        ch = build_inventory_chain(refined, sol, n)
        alpha = minimal_ergodic_coefficient(ch.law.seq).alpha_n if n >= 2 else 1.0
        rows.append({"h": refined.h, "s_1": float(sol.levels[0]), "s_n": float(sol.levels[-1]),
                     "alpha_n": alpha})
    return rows
