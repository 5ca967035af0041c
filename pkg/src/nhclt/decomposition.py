"""Exact martingale decomposition of additive functionals with look-ahead.

For a chain X_1..X_{n+m} and rewards Z_i = f_i(X_i, ..., X_{i+m}) the total
S_n = sum_i Z_i splits into a value-to-go term and martingale differences,

    S_n = V_m + sum_{i=1+m}^{n+m} d_i,   d_i = V_i - V_{i-1} + Z_{i-m}.

For m in {0, 1} every conditional expectation given the past is a function of
the current state alone, so the whole decomposition is a sequence of
matrix-vector products on the grid. Larger windows are rejected.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    REACHABLE_TOL,
    KernelError,
    KernelSequence,
    minimal_ergodic_coefficient,
)

COND_MEAN_TOL = 1e-10
IDENTITY_RTOL = 1e-9
INEQ_TOL = 1e-10


class WindowBlowupError(ValueError):
    """The exact engine only handles look-ahead windows m <= 1."""


@dataclass(frozen=True)
class ChainLaw:
    initial: np.ndarray
    seq: KernelSequence

    def __post_init__(self):
        mu = np.array(self.initial, dtype=float)
        if mu.shape != (len(self.seq.grid),):
            raise KernelError("initial distribution length must match the grid")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise KernelError("initial distribution must be a probability vector")
        mu.setflags(write=False)
        object.__setattr__(self, "initial", mu)

    @property
    def grid(self):
        return self.seq.grid

    @property
    def n(self):
        return self.seq.horizon

    @property
    def m(self):
        return self.seq.lookahead

    def kernel(self, t):
        """Transition matrix from time t to t+1 (1-based)."""
        return self.seq[t].rows


@dataclass(frozen=True)
class RewardFunctionArray:
    """Per-period reward tensors f_i over (1+m) grid coordinates.

    ``offsets[i]`` is subtracted from tensor ``i``; centering sets the offsets
    rather than copying tensors so that shared tensors stay shared.
    """

    tensors: tuple
    horizon: int
    lookahead: int = 0
    offsets: np.ndarray = None
    bound_Cn: float = field(init=False)

    def __post_init__(self):
        tensors = tuple(np.asarray(t, dtype=float) for t in self.tensors)
        if len(tensors) != self.horizon:
            raise ValueError(f"expected {self.horizon} reward tensors, got {len(tensors)}")
        rank = 1 + self.lookahead
        shape = tensors[0].shape if tensors else ()
        extremes = {}
        for t in tensors:
            if t.ndim != rank or t.shape != shape or len(set(shape)) != 1:
                raise ValueError(f"every reward tensor must be a cube of rank {rank}")
            key = id(t)
            if key not in extremes:
                if not np.all(np.isfinite(t)):
                    raise ValueError("reward entries must be finite")
                extremes[key] = (float(t.min()), float(t.max()))
        offsets = np.zeros(self.horizon) if self.offsets is None else np.array(self.offsets, dtype=float)
        if offsets.shape != (self.horizon,):
            raise ValueError("one offset per period is required")
        offsets.setflags(write=False)
        bound = 0.0
        for t, o in zip(tensors, offsets):
            lo, hi = extremes[id(t)]
            bound = max(bound, abs(lo - o), abs(hi - o))
        object.__setattr__(self, "tensors", tensors)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "bound_Cn", bound)

    @property
    def n(self):
        return self.horizon

    @property
    def m(self):
        return self.lookahead

    def tensor(self, i):
        """Effective tensor f_i - offset_i (1-based)."""
        t = self.tensors[i - 1]
        o = self.offsets[i - 1]
        return t - o if o else t

    def evaluate(self, paths):
        """Per-path totals for an (N, n+m) array of state indices."""
        paths = np.asarray(paths)
        if paths.ndim != 2 or paths.shape[1] < self.horizon + self.lookahead:
            raise ValueError("paths must have n + m columns")
        total = np.zeros(paths.shape[0])
        for i in range(1, self.horizon + 1):
            idx = tuple(paths[:, i - 1 + r] for r in range(self.lookahead + 1))
            total += self.tensors[i - 1][idx] - self.offsets[i - 1]
        return total


@dataclass(frozen=True)
class DecompositionReport:
    horizon: int
    lookahead: int
    means: np.ndarray
    mean_Sn: float
    var_Sn: float
    V: tuple
    d_second_moments: np.ndarray
    eta: tuple
    e_Vm_sq: float
    delta_n_second_moment: float
    max_conditional_mean: float
    bound_Cn: float
    alpha_n: float
    centered: bool = True

    def v_sup_norms(self, supports):
        """||V_i||_inf over reachable states, for i = m..n+m."""
        out = []
        for i, v in enumerate(self.V, start=self.lookahead):
            mask = supports[i - 1] if i >= 1 else slice(None)
            vals = np.abs(v[mask])
            out.append(float(vals.max()) if vals.size else 0.0)
        return np.array(out)

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "lookahead": self.lookahead,
            "centered": self.centered,
            "means": self.means.tolist(),
            "mean_Sn": self.mean_Sn,
            "var_Sn": self.var_Sn,
            "V": [v.tolist() for v in self.V],
            "d_second_moments": self.d_second_moments.tolist(),
            "eta": [e.tolist() for e in self.eta],
            "e_Vm_sq": self.e_Vm_sq,
            "delta_n_second_moment": self.delta_n_second_moment,
            "max_conditional_mean": self.max_conditional_mean,
            "bound_Cn": self.bound_Cn,
            "alpha_n": self.alpha_n,
        }

    def to_csv(self, supports):
        """Compact table: i, E[d_i^2], ||V_i||_inf."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "E_d2", "V_sup"])
        sup = self.v_sup_norms(supports)
        m = self.lookahead
        for k, ed2 in enumerate(self.d_second_moments):
            i = 1 + m + k
            writer.writerow([i, repr(float(ed2)), repr(float(sup[i - m]))])
        return buf.getvalue()


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst_lhs: float = 0.0
    worst_rhs: float = 0.0
    worst_slack: float = float("inf")
    count: int = 0
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_lhs": float(self.worst_lhs),
            "worst_rhs": float(self.worst_rhs),
            "worst_slack": float(self.worst_slack),
            "count": int(self.count),
            **self.detail,
        }


def _check_window(law, rewards):
    if law.n != rewards.n or law.m != rewards.m:
        raise ValueError("law and rewards disagree on horizon or look-ahead")
    if len(law.grid) != (rewards.tensors[0].shape[0] if rewards.tensors else len(law.grid)):
        raise ValueError("reward tensors do not match the state grid")
    if law.m > 1:
        raise WindowBlowupError(
            f"window blowup: exact engine handles m <= 1, got m = {law.m}; use Monte Carlo"
        )


class _Products:
    """Caches K*f and K*f^2 for (kernel, tensor) pairs shared across steps."""

    def __init__(self):
        self._cache = {}

    def get(self, K, f):
        key = (id(K), id(f))
        entry = self._cache.get(key)
        if entry is None:
            kf = K * f
            # keep K and f alive so their ids stay unique
            entry = (K, f, (kf, kf * f, kf.sum(axis=1)))
            self._cache[key] = entry
        return entry[2]


def marginals(law):
    """Distributions of X_1, ..., X_{n+m}."""
    out = [np.array(law.initial)]
    for K in law.seq.kernels:
        out.append(K.push(out[-1]))
    return out


def supports(margs, tol=REACHABLE_TOL):
    return [p > tol for p in margs]


def _row_means(law, rewards, products=None):
    """h_i(x) = E[f_i | X_i = x] (uncentered), i = 1..n."""
    products = products or _Products()
    out = []
    for i in range(1, law.n + 1):
        f = rewards.tensors[i - 1]
        if law.m == 0:
            out.append(f)
        else:
            out.append(products.get(law.kernel(i), f)[2])
    return out


def _period_means(law, rewards, margs=None, products=None):
    margs = margs or marginals(law)
    h = _row_means(law, rewards, products)
    return np.array([margs[i - 1] @ h[i - 1] for i in range(1, law.n + 1)]) - rewards.offsets


def center_rewards(law, rewards):
    """Rewards with E[Z_i] = 0 for every period."""
    _check_window(law, rewards)
    mu = _period_means(law, rewards)
    return RewardFunctionArray(rewards.tensors, rewards.horizon, rewards.lookahead,
                               rewards.offsets + mu)


def _vector_functional_moments(initial, kernels, funcs):
    """Mean and variance of sum_t g_t(X_t) for a chain with the given kernels.

    ``funcs[t]`` is a grid vector for time t + 1, or None.
    """
    mean = 0.0
    centered = []
    p = np.array(initial)
    for t, g in enumerate(funcs):
        if g is not None:
            mu = float(p @ g)
            mean += mu
            centered.append(g - mu)
        else:
            centered.append(None)
        if t < len(kernels):
            p = p @ kernels[t]
    p = np.array(initial)
    a = np.zeros_like(p)
    b = np.zeros_like(p)
    for t, g in enumerate(centered):
        if g is not None:
            b = b + 2.0 * a * g + p * g * g
            a = a + p * g
        if t < len(kernels):
            stacked = np.vstack([p, a, b]) @ kernels[t]
            p, a, b = stacked
    return mean, float(b.sum())


def moments_exact(law, rewards):
    """Exact (E[S_n], Var[S_n]) by a forward sweep over the window state.

    The sweep carries, for each current state, the probability and the first
    and second moments of the accumulated (centered) reward.
    """
    _check_window(law, rewards)
    margs = marginals(law)
    products = _Products()
    mu = _period_means(law, rewards, margs, products)
    mean = float(mu.sum())
    if law.m == 0:
        funcs = [rewards.tensors[i] - (rewards.offsets[i] + mu[i]) for i in range(law.n)]
        kernels = [K.rows for K in law.seq.kernels]
        _, var = _vector_functional_moments(law.initial, kernels, funcs)
        return mean, var
    p = np.array(law.initial)
    a = np.zeros_like(p)
    b = np.zeros_like(p)
    for i in range(1, law.n + 1):
        K = law.kernel(i)
        kf, kf2, _ = products.get(K, rewards.tensors[i - 1])
        c = rewards.offsets[i - 1] + mu[i - 1]
        pK, aK, bK = np.vstack([p, a, b]) @ K
        pKF, aKF = np.vstack([p, a]) @ kf
        pKF2 = p @ kf2
        # K*(f - c) = KF - c K ; K*(f - c)^2 = KF2 - 2c KF + c^2 K
        new_a = aK + pKF - c * pK
        new_b = bK + 2.0 * (aKF - c * aK) + pKF2 - 2.0 * c * pKF + c * c * pK
        p, a, b = pK, new_a, new_b
    return mean, float(b.sum())


def value_to_go(law, rewards):
    """V_i for i = m..n+m as grid functions of X_i (V_0 is a constant vector)."""
    _check_window(law, rewards)
    centered = center_rewards(law, rewards)
    return _value_to_go(law, centered, _row_means(law, centered))


def _value_to_go(law, centered, h):
    n, m = law.n, law.m
    T = n + m
    S = len(law.grid)
    hc = [h[i] - centered.offsets[i] for i in range(n)]
    V = {T: np.zeros(S)}
    for i in range(T - 1, max(m, 1) - 1, -1):
        nxt = V[i + 1] + (hc[i] if m == 0 else 0.0)
        V[i] = law.kernel(i) @ nxt + (hc[i - 1] if m == 1 else 0.0)
    if m == 0:
        V[0] = np.full(S, float(law.initial @ (V[1] + hc[0])) if n >= 1 else 0.0)
    return tuple(V[i] for i in range(m, T + 1))


def _mds(law, centered, V, i):
    """(transition matrix into time i, d_i as a matrix over (X_{i-1}, X_i))."""
    m = law.m
    Vi = V[i - m]
    Vprev = V[i - 1 - m]
    if m == 1:
        return law.kernel(i - 1), Vi[None, :] - Vprev[:, None] + centered.tensor(i - 1)
    f = centered.tensor(i)
    if i == 1:
        return law.initial[None, :], (Vi + f - Vprev[0])[None, :]
    return law.kernel(i - 1), Vi[None, :] - Vprev[:, None] + f[None, :]


def martingale_differences(law, rewards):
    """List of d_i matrices over (X_{i-1}, X_i) for i = 1+m..n+m.

    For m = 0 and i = 1 the first coordinate is the trivial time-0 state, so
    the matrix has a single row. Intended for small instances.
    """
    _check_window(law, rewards)
    centered = center_rewards(law, rewards)
    V = _value_to_go(law, centered, _row_means(law, centered))
    return [_mds(law, centered, V, i)[1] for i in range(1 + law.m, law.n + law.m + 1)]


def decompose(law, rewards, supports_=None):
    """Full decomposition report; rewards are centered internally."""
    _check_window(law, rewards)
    n, m = law.n, law.m
    T = n + m
    margs = marginals(law)
    supp = supports_ if supports_ is not None else supports(margs)
    products = _Products()
    means = _period_means(law, rewards, margs, products)
    centered = RewardFunctionArray(rewards.tensors, n, m, rewards.offsets + means)
    V = _value_to_go(law, centered, _row_means(law, centered, products))
    ed2 = []
    eta = []
    worst_cond = 0.0
    for i in range(1 + m, T + 1):
        P, d = _mds(law, centered, V, i)
        cond = (P * d).sum(axis=1)
        e = (P * d * d).sum(axis=1)
        prev = margs[i - 2] if i >= 2 else np.ones(1)
        mask = supp[i - 2] if i >= 2 else np.ones(1, dtype=bool)
        if mask.any():
            worst_cond = max(worst_cond, float(np.abs(cond[mask]).max()))
        ed2.append(float(prev @ e))
        eta.append(e if i >= 2 else np.full(len(law.grid), e[0]))
    e_vm_sq = float(margs[m - 1] @ (V[0] ** 2)) if m >= 1 else float(V[0][0] ** 2)
    _, var = moments_exact(law, rewards)
    # eta_i is a function of X_{i-1}; the m = 0, i = 1 term is constant
    funcs = [None] * T
    for k, i in enumerate(range(1 + m, T + 1)):
        if i >= 2:
            funcs[i - 2] = eta[k]
    kernels = [K.rows for K in law.seq.kernels]
    _, e_delta_sq = _vector_functional_moments(law.initial, kernels, funcs)
    alpha = _alpha(law, supp)
    return DecompositionReport(
        horizon=n,
        lookahead=m,
        means=means,
        mean_Sn=float(means.sum()),
        var_Sn=var,
        V=V,
        d_second_moments=np.array(ed2),
        eta=tuple(eta),
        e_Vm_sq=e_vm_sq,
        delta_n_second_moment=e_delta_sq,
        max_conditional_mean=worst_cond,
        bound_Cn=centered.bound_Cn,
        alpha_n=alpha,
    )


def _alpha(law, supp):
    if law.n < 2:
        return 1.0
    return minimal_ergodic_coefficient(law.seq, supp[:-1]).alpha_n


def _bound(coef, alpha, power=1):
    """coef * alpha**-power, with 0 * inf read as 0."""
    if coef == 0:
        return 0.0
    return np.inf if alpha <= 0 else coef * alpha ** (-power)


def _geom(alpha, exponent):
    return (1.0 - alpha) ** exponent


def variance_identity_check(report):
    """E[S^2] = E[V_m^2] + sum E[d^2] and the variance sandwich."""
    var = report.var_Sn
    C = report.bound_Cn
    m = report.lookahead
    sum_d2 = float(report.d_second_moments.sum())
    scale = max(var, C * C, 1e-300)
    residual = abs(var - (report.e_Vm_sq + sum_d2)) / scale
    upper_ok = sum_d2 <= var + IDENTITY_RTOL * scale
    lower_rhs = var - _bound((m + 2) ** 2 * C * C, report.alpha_n, 2)
    lower_ok = lower_rhs <= sum_d2 + IDENTITY_RTOL * scale
    passed = residual <= IDENTITY_RTOL and upper_ok and lower_ok
    return CheckResult(
        "variance_identity",
        bool(passed),
        worst_lhs=residual,
        worst_rhs=IDENTITY_RTOL,
        worst_slack=IDENTITY_RTOL - residual,
        count=1,
        detail={
            "relative_residual": residual,
            "sum_E_d2": sum_d2,
            "E_Vm_sq": report.e_Vm_sq,
            "var_Sn": var,
            "sandwich_upper_ok": bool(upper_ok),
            "sandwich_lower_ok": bool(lower_ok),
            "sandwich_constant": (m + 2) ** 2,
        },
    )


class _Tally:
    def __init__(self, name, tol):
        self.name = name
        self.tol = tol
        self.count = 0
        self.worst = (float("inf"), 0.0, 0.0)
        self.failures = []

    def add(self, lhs, rhs, where):
        lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
        self.count += lhs.size
        if lhs.size == 0:
            return
        with np.errstate(invalid="ignore"):
            slack = np.where(np.isinf(rhs), np.inf, rhs - lhs)
        k = int(np.argmin(slack))
        if slack[k] < self.worst[0]:
            self.worst = (float(slack[k]), float(lhs[k]), float(rhs[k]))
        if slack[k] < -self.tol and len(self.failures) < 5:
            self.failures.append({"where": where, "lhs": float(lhs[k]), "rhs": float(rhs[k])})

    def result(self):
        slack, lhs, rhs = self.worst
        return CheckResult(
            self.name,
            slack >= -self.tol,
            worst_lhs=lhs,
            worst_rhs=rhs,
            worst_slack=slack,
            count=self.count,
            detail={"failures": self.failures} if self.failures else {},
        )


@dataclass(frozen=True)
class SuiteReport:
    results: dict
    alpha_n: float
    bound_Cn: float

    @property
    def passed(self):
        return all(r.passed for r in self.results.values())

    def to_dict(self):
        return {
            "passed": self.passed,
            "alpha_n": self.alpha_n,
            "bound_Cn": self.bound_Cn,
            "results": {k: v.to_dict() for k, v in self.results.items()},
        }


def oscillation_constant(m):
    """Explicit constant for the oscillation of the summed conditional d^2."""
    return 2 * (m + 2) ** 2 + 2 * (1 + m) + 8 * m * m + 12 * m + 4 * m + 12


def oscillation_bound_suite(law, rewards):
    """Instantiate every conditional-moment and oscillation inequality.

    All conditional expectations are computed exactly; oscillations and sup
    norms are taken over the states the chain reaches at the conditioning
    time. Returns a :class:`SuiteReport` with the worst slack per inequality.
    """
    _check_window(law, rewards)
    n, m = law.n, law.m
    T = n + m
    margs = marginals(law)
    supp = supports(margs)
    products = _Products()
    means = _period_means(law, rewards, margs, products)
    centered = RewardFunctionArray(rewards.tensors, n, m, rewards.offsets + means)
    C = centered.bound_Cn
    alpha = _alpha(law, supp)
    CC = C * C
    tol = INEQ_TOL * max(1.0, CC)
    K = {t: law.kernel(t) for t in range(1, T)}

    h = [None] + [x - o for x, o in zip(_row_means(law, rewards, products), centered.offsets)]
    # s[j](x) = E[Z_j^2 | X_j = x]
    s = [None]
    for j in range(1, n + 1):
        f = centered.tensor(j)
        s.append(f * f if m == 0 else (K[j] * f * f).sum(axis=1))

    # cond[t][:, k-1] = E[Z_k | X_t] for k >= t (columns for k < t unused)
    S = len(law.grid)
    cond = {}
    cur = np.zeros((S, n))
    for t in range(T, 0, -1):
        if t < T:
            cur = K[t] @ cur
        else:
            cur = np.zeros((S, n))
        if t <= n:
            cur[:, t - 1] = h[t]
        cond[t] = cur

    def osc(v, t):
        v = v[supp[t - 1]]
        return float(v.max() - v.min()) if v.size else 0.0

    def osc_cols(M, t):
        M = M[supp[t - 1]]
        if M.shape[0] == 0:
            return np.zeros(M.shape[1])
        return M.max(axis=0) - M.min(axis=0)

    def sup_cols(M, t):
        M = np.abs(M[supp[t - 1]])
        return M.max(axis=0) if M.shape[0] else np.zeros(M.shape[1])

    tallies = {name: _Tally(name, tol) for name in (
        "cond_mean_linf_le_osc", "cond_mean_osc", "cond_square_osc",
        "range1", "range2", "range3", "range4",
        "S0", "S1", "S2", "S3", "S4", "sum_square_split",
        "value_to_go_linf", "mds_linf", "osc_sum_cond_d2", "conditional_identity",
    )}

    # Conditional Moments lemma, 1 <= i < j <= n
    sq_cond = {}
    cur = np.zeros((S, n))
    for i in range(n, 0, -1):
        cur = K[i] @ cur if i < n else np.zeros((S, n))
        cur[:, i - 1] = s[i]
        sq_cond[i] = cur
    for i in range(1, n):
        js = np.arange(i + 1, n + 1)
        E = cond[i][:, js - 1]
        o = osc_cols(E, i)
        bound = 2 * C * _geom(alpha, js - i)
        tallies["cond_mean_linf_le_osc"].add(sup_cols(E, i), o, f"i={i}")
        tallies["cond_mean_osc"].add(o, bound, f"i={i}")
        tallies["cond_square_osc"].add(osc_cols(sq_cond[i][:, js - 1], i), 2 * CC * _geom(alpha, js - i), f"i={i}")

    # q[j][:, k-1] = E[Z_j Z_k | X_j], k > j
    q = {}
    for j in range(1, n):
        f = centered.tensor(j)
        if m == 0:
            q[j] = f[:, None] * cond[j]
        else:
            q[j] = (K[j] * f) @ cond[j + 1]

    # cross[i][j] = E[Z_j Z_k | X_i] over columns k, for j >= max(i, 1+i-m)
    cross = {i: {} for i in range(1, T + 1)}
    for j in range(1, n):
        cur = q[j]
        cross[j][j] = cur
        for i in range(j - 1, 0, -1):
            cur = K[i] @ cur
            cross[i][j] = cur

    lo_i = max(m, 1)
    M_osc = oscillation_constant(m)
    seconds = {}
    for i in range(lo_i, T + 1):
        S0 = S1 = S2 = S3 = S4 = 0.0
        second = np.zeros(S)
        for j in range(max(1 + i - m, 1), n + 1):
            if j <= i:
                sq_j = s[j] if j == i else None
            else:
                sq_j = sq_cond[i][:, j - 1]
            if sq_j is None:
                continue
            second = second + sq_j
            S0 += osc(sq_j, i)
        for j in range(max(1 + i - m, 1), n):
            if j not in cross[i]:
                continue
            row = cross[i][j]
            ks = np.arange(j + 1, n + 1)
            vals = osc_cols(row[:, ks - 1], i)
            second = second + 2.0 * row[:, ks - 1].sum(axis=1)
            near = ks <= j + m
            if j <= i:
                tallies["range1"].add(vals[near], 4 * C * C, f"i={i},j={j}")
                tallies["range2"].add(vals[~near], 6 * C * C * _geom(alpha, ks[~near] - j - m), f"i={i},j={j}")
                S1 += 2 * vals[near].sum()
                S2 += 2 * vals[~near].sum()
            else:
                tallies["range3"].add(vals[near], 2 * C * C * _geom(alpha, j - i), f"i={i},j={j}")
                tallies["range4"].add(vals[~near], 6 * C * C * _geom(alpha, ks[~near] - i - m), f"i={i},j={j}")
                S3 += 2 * vals[near].sum()
                S4 += 2 * vals[~near].sum()
        tallies["S0"].add(S0, _bound(2 * (1 + m) * CC, alpha), f"i={i}")
        tallies["S1"].add(S1, 8 * m * m * CC, f"i={i}")
        tallies["S2"].add(S2, _bound(12 * m * CC, alpha), f"i={i}")
        tallies["S3"].add(S3, _bound(4 * m * CC, alpha), f"i={i}")
        tallies["S4"].add(S4, _bound(12 * CC, alpha, 2), f"i={i}")
        tallies["sum_square_split"].add(osc(second, i), S0 + S1 + S2 + S3 + S4, f"i={i}")
        seconds[i] = second
        cross[i] = None  # release memory

    # value-to-go, MDS sup norms and the summed conditional d^2
    V = _value_to_go(law, centered, [x + o for x, o in zip(h[1:], centered.offsets)])
    for i in range(m, T + 1):
        v = V[i - m]
        mask = supp[i - 1] if i >= 1 else np.ones(S, dtype=bool)
        tallies["value_to_go_linf"].add(np.abs(v[mask]).max(), _bound((m + 2) * C, alpha), f"i={i}")
    # W_i = E[sum_{k>i} d_k^2 | X_i]; E[(remaining Z)^2 | X_i] = V_i^2 + W_i
    W = np.zeros(S)
    for i in range(T, 0, -1):
        if i < T:
            P, d = _mds(law, centered, V, i + 1)
            W = (P * d * d).sum(axis=1) + K[i] @ W
            reach = (P > 0) & supp[i - 1][:, None]
            dsup = float(np.abs(d[reach]).max()) if reach.any() else 0.0
            tallies["mds_linf"].add(dsup, _bound((2 * m + 5) * C, alpha), f"i={i + 1}")
        if i >= lo_i:
            tallies["osc_sum_cond_d2"].add(osc(W, i), _bound(M_osc * CC, alpha, 2), f"i={i}")
            mask = supp[i - 1]
            sec = seconds[i][mask]
            resid = np.abs(sec - V[i - m][mask] ** 2 - W[mask])
            scale = IDENTITY_RTOL * max(1.0, float(np.abs(sec).max()) if sec.size else 0.0)
            tallies["conditional_identity"].add(resid, scale, f"i={i}")
    if m == 0:
        P, d = _mds(law, centered, V, 1)
        tallies["mds_linf"].add(float(np.abs(d[P > 0]).max()), _bound(5 * C, alpha), "i=1")

    return SuiteReport({k: t.result() for k, t in tallies.items()}, alpha, C)


def dobrushin_lower_bound_check(law, rewards):
    """(1/4) alpha_n sum Var[f_i(X_i)] <= Var[S_n]; only meaningful for m = 0."""
    _check_window(law, rewards)
    if law.m != 0:
        raise ValueError("the variance lower bound has no analog for m >= 1")
    margs = marginals(law)
    supp = supports(margs)
    total = 0.0
    for i in range(1, law.n + 1):
        f = rewards.tensor(i)
        p = margs[i - 1]
        mu = p @ f
        total += float(p @ (f - mu) ** 2)
    _, var = moments_exact(law, rewards)
    alpha = _alpha(law, supp)
    lhs = 0.25 * alpha * total
    tol = IDENTITY_RTOL * max(var, rewards.bound_Cn ** 2, 1e-300)
    return CheckResult(
        "dobrushin_lower_bound",
        lhs <= var + tol,
        worst_lhs=lhs,
        worst_rhs=var,
        worst_slack=var - lhs,
        count=1,
        detail={"sum_individual_variances": total, "alpha_n": alpha},
    )


def delta_n_constant(m):
    """Explicit constant for E[Delta_n^2] <= M C^2 alpha^-2 Var[S_n]."""
    return (2 * m + 5) ** 2 + 4 * oscillation_constant(m)


def delta_n_l2_check(law, rewards, report=None):
    """E[Delta_n^2] against M C^2 alpha^-2 Var[S_n] with an explicit M.

    The fitted ratio E[Delta_n^2] / (C^2 alpha^-2 Var[S_n]) is reported so
    suites can compare it across instances.
    """
    report = report or decompose(law, rewards)
    C, alpha, var = report.bound_Cn, report.alpha_n, report.var_Sn
    lhs = report.delta_n_second_moment
    M = delta_n_constant(report.lookahead)
    scale = _bound(C * C * var, alpha, 2)
    rhs = M * scale
    tol = IDENTITY_RTOL * max(C ** 4, 1e-300)
    ratio = lhs / scale if scale > 0 else (0.0 if lhs <= tol else np.inf)
    return CheckResult(
        "delta_n_l2",
        bool(lhs <= rhs + tol),
        worst_lhs=lhs,
        worst_rhs=rhs,
        worst_slack=rhs - lhs,
        count=1,
        detail={"fitted_ratio": float(ratio), "constant": M},
    )
