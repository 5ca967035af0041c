"""Pure-Python (numpy) versions of the compiled inner loops.

Both backends must return identical state indices from ``sample_chain``;
``delta_rows`` agrees up to floating-point summation order.
"""

import numpy as np


def delta_rows(rows):
    """Largest pairwise total-variation distance between the given rows."""
    rows = np.ascontiguousarray(rows, dtype=float)
    best = 0.0
    for a in range(rows.shape[0] - 1):
        rest = rows[a + 1:]
        l1 = np.abs(rest - rows[a]).sum(axis=1)
        overlap = np.minimum(rest, rows[a]).sum(axis=1)
        tv = np.where(overlap == 0.0, 1.0, np.minimum(0.5 * l1, 1.0))
        best = max(best, float(tv.max()))
        if best == 1.0:
            break
    return best


def sample_chain(cum, kernel_id, cum0, u, chunk=2048):
    """Inverse-CDF path sampling; returns an (N, T) array of state indices."""
    npaths, T = u.shape
    out = np.empty((npaths, T), dtype=np.intp)
    out[:, 0] = (cum0[None, :] <= u[:, :1]).sum(axis=1)
    for lo in range(0, npaths, chunk):
        hi = min(lo + chunk, npaths)
        state = out[lo:hi, 0]
        for t in range(1, T):
            rows = cum[kernel_id[t - 1]][state]
            state = (rows <= u[lo:hi, t, None]).sum(axis=1)
            out[lo:hi, t] = state
    return out
