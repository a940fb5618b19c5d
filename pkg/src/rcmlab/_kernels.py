"""Hot loops: alias-table construction and continuous-time path runs.

Each kernel has a compiled scalar-loop form and a pure-numpy form; the
module-level names point at whichever ``_accel.BACKEND`` selects.  Both
consume the same counter-based uniforms (three per jump: holding time,
alias column, alias coin), so they walk the same jump sequences (times agree up to last-bit
rounding of log).
"""
import numpy as np

from . import _rng
from ._accel import HAVE_NUMBA, njit

# path status codes
ALIVE = 0  # reached the horizon inside the domain
EXITED = 1  # left the domain before the horizon
FROZEN = 2  # sat on a site with zero total rate
TRUNCATED = 3  # hit max_jumps


def _alias_rows_py(weights):
    """Vose alias tables for each row of a non-negative weight matrix."""
    nrow, m = weights.shape
    prob = np.ones((nrow, m))
    alias = np.zeros((nrow, m), dtype=np.int64)
    small = np.empty(m, dtype=np.int64)
    large = np.empty(m, dtype=np.int64)
    for r in range(nrow):
        total = 0.0
        for k in range(m):
            total += weights[r, k]
        if total <= 0.0:
            for k in range(m):
                alias[r, k] = k
            continue
        scaled = np.empty(m)
        ns = 0
        nl = 0
        for k in range(m):
            scaled[k] = weights[r, k] * m / total
            alias[r, k] = k
            if scaled[k] < 1.0:
                small[ns] = k
                ns += 1
            else:
                large[nl] = k
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[ns]
            nl -= 1
            g = large[nl]
            prob[r, s] = scaled[s]
            alias[r, s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small[ns] = g
                ns += 1
            else:
                large[nl] = g
                nl += 1
        # leftovers are 1 up to rounding
        for j in range(nl):
            prob[r, large[j]] = 1.0
        for j in range(ns):
            prob[r, small[j]] = 1.0
    return prob, alias


@njit
def _run_paths_nb(states, starts, horizon, rates, row_of, prob, alias, in_domain,
                  max_jumps, F, g, use_levy):
    ns = starts.shape[0]
    m = prob.shape[1]
    final = np.empty(ns, dtype=np.int64)
    exit_time = np.full(ns, np.inf)
    exit_site = np.full(ns, -1, dtype=np.int64)
    njumps = np.zeros(ns, dtype=np.int64)
    status = np.zeros(ns, dtype=np.int64)
    lhs = np.zeros(ns)
    rhs = np.zeros(ns)
    for i in range(ns):
        st = states[i]
        x = starts[i]
        t = 0.0
        k = 0
        while True:
            rate = rates[x]
            if rate <= 0.0:
                status[i] = FROZEN
                break
            hold = -np.log(_rng._uniform_at_nb(st, 3 * k)) / rate
            if t + hold > horizon:
                if use_levy:
                    rhs[i] += (horizon - t) * g[x]
                status[i] = ALIVE
                break
            t += hold
            if use_levy:
                rhs[i] += hold * g[x]
            r = row_of[x]
            col = int(_rng._uniform_at_nb(st, 3 * k + 1) * m)
            if col >= m:
                col = m - 1
            if _rng._uniform_at_nb(st, 3 * k + 2) >= prob[r, col]:
                col = alias[r, col]
            if use_levy:
                lhs[i] += F[x, col]
            x = col
            k += 1
            if not in_domain[x]:
                exit_time[i] = t
                exit_site[i] = x
                status[i] = EXITED
                break
            if k >= max_jumps:
                status[i] = TRUNCATED
                break
        final[i] = x
        njumps[i] = k
    return final, exit_time, exit_site, njumps, status, lhs, rhs


def _uniform_vec(states, counter):
    with np.errstate(over="ignore"):
        z = _rng._mix_py(states + (np.uint64(counter) + _rng._ONE) * _rng.GOLDEN)
    return ((z >> _rng._S11).astype(np.float64) + 0.5) * _rng._INV53


def _run_paths_np(states, starts, horizon, rates, row_of, prob, alias, in_domain,
                  max_jumps, F, g, use_levy):
    ns = starts.shape[0]
    m = prob.shape[1]
    final = starts.astype(np.int64).copy()
    exit_time = np.full(ns, np.inf)
    exit_site = np.full(ns, -1, dtype=np.int64)
    njumps = np.zeros(ns, dtype=np.int64)
    status = np.zeros(ns, dtype=np.int64)
    lhs = np.zeros(ns)
    rhs = np.zeros(ns)
    t = np.zeros(ns)
    active = np.arange(ns)
    k = 0
    while active.size:
        x = final[active]
        rate = rates[x]
        frozen = rate <= 0.0
        status[active[frozen]] = FROZEN
        active, x, rate = active[~frozen], x[~frozen], rate[~frozen]
        if not active.size:
            break
        st = states[active]
        hold = -np.log(_uniform_vec(st, 3 * k)) / rate
        over = t[active] + hold > horizon
        if use_levy:
            a_over = active[over]
            rhs[a_over] += (horizon - t[a_over]) * g[x[over]]
        status[active[over]] = ALIVE
        active, x, hold, st = active[~over], x[~over], hold[~over], st[~over]
        if not active.size:
            break
        t[active] += hold
        if use_levy:
            rhs[active] += hold * g[x]
        r = row_of[x]
        col = np.minimum((_uniform_vec(st, 3 * k + 1) * m).astype(np.int64), m - 1)
        coin = _uniform_vec(st, 3 * k + 2)
        flip = coin >= prob[r, col]
        col[flip] = alias[r[flip], col[flip]]
        if use_levy:
            lhs[active] += F[x, col]
        final[active] = col
        k += 1
        njumps[active] = k
        left = ~in_domain[col]
        a_left = active[left]
        exit_time[a_left] = t[a_left]
        exit_site[a_left] = col[left]
        status[a_left] = EXITED
        active = active[~left]
        if k >= max_jumps and active.size:
            status[active] = TRUNCATED
            break
    return final, exit_time, exit_site, njumps, status, lhs, rhs


if HAVE_NUMBA:
    alias_rows = njit(_alias_rows_py)
    run_paths = _run_paths_nb
else:
    alias_rows = _alias_rows_py
    run_paths = _run_paths_np
