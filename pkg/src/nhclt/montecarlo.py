"""Seeded path sampling and normality diagnostics for additive functionals.

Each path draws its uniforms from its own Philox stream keyed by
``(seed, path index)``, and each path total is summed in time order. Totals
are therefore bit-identical for any chunking or worker count.
"""

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _backend
from .altsub import build_altsub_chain, solve_alt_thresholds
from .decomposition import center_rewards, moments_exact
from .inventory import build_inventory_chain, solve_base_stock
from .kernels import REACHABLE_TOL, minimal_ergodic_coefficient
from .reference import parity_counterexample

CHUNK = 256
WORKERS_ENV = "NHCLT_WORKERS"


def resolve_workers(workers=None):
    """Explicit value, else the environment override, else 1."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def path_uniforms(seed, first, count, length):
    """U[0, 1) draws for paths ``first .. first + count - 1``."""
    out = np.empty((count, length))
    base = int(seed) << 64
    for k in range(count):
        out[k] = np.random.Generator(np.random.Philox(key=base + first + k)).random(length)
    return out


@dataclass(frozen=True)
class _SamplerTables:
    cum: np.ndarray
    kernel_id: np.ndarray
    cum0: np.ndarray


def _tables(law):
    ids, distinct = {}, []
    kernel_id = []
    for K in law.seq.kernels:
        if id(K) not in ids:
            ids[id(K)] = len(distinct)
            distinct.append(K.cumulative())
        kernel_id.append(ids[id(K)])
    S = len(law.grid)
    cum = np.ascontiguousarray(np.stack(distinct)) if distinct else np.ones((1, S, S))
    p0 = law.initial
    cum0 = np.minimum(np.cumsum(p0), 1.0)
    cum0[np.flatnonzero(p0 > 0)[-1]:] = 1.0
    return _SamplerTables(cum, np.asarray(kernel_id, dtype=np.intp), np.ascontiguousarray(cum0))


def _run_chunks(fn, N, workers):
    starts = list(range(0, N, CHUNK))
    if workers == 1 or len(starts) == 1:
        return [fn(s) for s in starts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, starts))


def sample_paths(law, seed, N, workers=None):
    """(N, n+m) array of state indices, one independent substream per path."""
    if N < 1:
        raise ValueError("need N >= 1 paths")
    workers = resolve_workers(workers)
    tab = _tables(law)
    T = law.n + law.m

    def chunk(start):
        count = min(CHUNK, N - start)
        u = path_uniforms(seed, start, count, T)
        return _backend.sample_chain(tab.cum, tab.kernel_id, tab.cum0, u)

    return np.concatenate(_run_chunks(chunk, N, workers))


@dataclass(frozen=True)
class SampleBatch:
    master_seed: int
    n: int
    m: int
    totals: np.ndarray

    @property
    def N(self):
        return self.totals.size

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "total"])
        for k, v in enumerate(self.totals):
            writer.writerow([k, repr(float(v))])
        return buf.getvalue()


def total_reward_samples(law, rewards, seed, N, workers=None):
    """Sample totals S_n without keeping every path in memory."""
    if N < 1:
        raise ValueError("need N >= 1 paths")
    if rewards.n != law.n or rewards.m != law.m:
        raise ValueError("rewards do not match the law's horizon or look-ahead")
    workers = resolve_workers(workers)
    tab = _tables(law)
    T = law.n + law.m

    def chunk(start):
        count = min(CHUNK, N - start)
        u = path_uniforms(seed, start, count, T)
        return rewards.evaluate(_backend.sample_chain(tab.cum, tab.kernel_id, tab.cum0, u))

    totals = np.concatenate(_run_chunks(chunk, N, workers))
    totals.setflags(write=False)
    return SampleBatch(int(seed), law.n, law.m, totals)


def normal_cdf(x):
    """Standard normal CDF."""
    return ndtr(x)


def ks_distance(z):
    """sup |F_N - Phi| for a standardized sample."""
    z = np.sort(np.asarray(z, dtype=float))
    N = z.size
    if N == 0:
        raise ValueError("empty sample")
    phi = normal_cdf(z)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - phi), np.max(phi - (i - 1) / N)))


@dataclass(frozen=True)
class CltReport:
    n: int
    N: int
    seed: int
    sample_mean: float
    sample_var: float
    exact_mean: float
    exact_var: float
    ks_distance: float
    degenerate: bool
    condition_ratio: float = None

    def to_dict(self):
        return {
            "n": self.n,
            "N": self.N,
            "seed": self.seed,
            "mean": self.sample_mean,
            "var": self.sample_var,
            "exact_mean": self.exact_mean,
            "exact_var": self.exact_var,
            "ks": self.ks_distance,
            "degenerate": self.degenerate,
            "ratio": self.condition_ratio,
        }


def normality_report(batch, exact_moments=None, condition_ratio=None, degenerate_tol=1e-12):
    """KS distance of standardized totals; zero variance is flagged, not raised."""
    x = np.asarray(batch.totals, dtype=float)
    mean = float(x.mean())
    var = float(x.var(ddof=1)) if x.size > 1 else 0.0
    em, ev = exact_moments if exact_moments is not None else (None, None)
    loc = em if em is not None else mean
    scale2 = ev if ev is not None else var
    degenerate = not scale2 > degenerate_tol
    ks = None if degenerate else ks_distance((x - loc) / np.sqrt(scale2))
    return CltReport(batch.n, batch.N, batch.master_seed, mean, var,
                     em, ev, ks, degenerate, condition_ratio)


def histogram_series(batch, exact_moments=None, bins=40):
    """(bin centre, empirical density, normal density) rows for plotting."""
    x = np.asarray(batch.totals, dtype=float)
    loc, var = exact_moments if exact_moments is not None else (x.mean(), x.var(ddof=1))
    if not var > 0:
        return []
    z = (x - loc) / np.sqrt(var)
    dens, edges = np.histogram(z, bins=bins, range=(-4.0, 4.0), density=True)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pdf = np.exp(-0.5 * mid**2) / np.sqrt(2 * np.pi)
    return [(float(a), float(b), float(c)) for a, b, c in zip(mid, dens, pdf)]


@dataclass(frozen=True)
class ConditionRow:
    n: int
    C_n: float
    alpha_n: float
    var_Sn: float
    ratio: float

    def to_dict(self):
        return {"n": self.n, "C_n": self.C_n, "alpha_n": self.alpha_n,
                "var_Sn": self.var_Sn, "ratio": self.ratio}


@dataclass(frozen=True)
class ConditionReport:
    rows: tuple
    slope: float
    verdict: bool

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows], "loglog_slope": self.slope,
                "verdict": "pass" if self.verdict else "fail"}


MAX_SLOPE = -0.5


def _support_alpha(law):
    if law.n < 2:
        return 1.0
    p = np.array(law.initial)
    supp = []
    for K in law.seq.kernels:
        supp.append(p > REACHABLE_TOL)
        p = K.push(p)
    return minimal_ergodic_coefficient(law.seq, supp).alpha_n


def clt_condition_report(family, n_list):
    """C_n^2 alpha_n^-2 / Var[S_n] across horizons.

    ``family(n)`` returns ``(law, rewards)``. The verdict passes when every
    ratio is finite, the ratios strictly decrease, and their log-log slope
    against n is at most -1/2.
    """
    rows = []
    for n in sorted(n_list):
        law, rewards = family(n)
        _, var = moments_exact(law, rewards)
        C = center_rewards(law, rewards).bound_Cn
        alpha = _support_alpha(law)
        if alpha <= 0 or var <= 0:
            ratio = float("inf")
        else:
            ratio = C * C / (alpha * alpha) / var
        rows.append(ConditionRow(n, C, alpha, var, ratio))
    ratios = np.array([r.ratio for r in rows])
    ns = np.array([r.n for r in rows], dtype=float)
    finite = bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0))
    slope = float(np.polyfit(np.log(ns), np.log(ratios), 1)[0]) if finite and len(rows) > 1 else float("nan")
    decreasing = bool(np.all(np.diff(ratios) < 0)) if finite else False
    verdict = finite and decreasing and len(rows) > 1 and slope <= MAX_SLOPE
    return ConditionReport(tuple(rows), slope, bool(verdict))


def inventory_family(model, start_state=0.0, max_n=None):
    cache = {}

    def family(n):
        if "sol" not in cache or cache["sol"].n < n:
            cache["sol"] = solve_base_stock(model, max(n, max_n or n))
        ch = build_inventory_chain(model, cache["sol"], n, start_state)
        return ch.law, ch.rewards

    return family


def altsub_family(cells=400, max_n=None):
    cache = {}

    def family(n):
        if "sol" not in cache or cache["sol"].n < n:
            cache["sol"] = solve_alt_thresholds(max(n, max_n or n), cells)
        ch = build_altsub_chain(cache["sol"], n)
        return ch.law, ch.rewards

    return family


def parity_family(grid=(0.0, 1.0)):
    def family(n):
        b = parity_counterexample(n, grid)
        return b.law, b.rewards

    return family
