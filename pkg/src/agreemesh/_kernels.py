"""Hot numeric loops, each with a numba build and a numpy fallback.

The public names at the bottom of the module point at whichever variant
``_jit.USE_JIT`` selects. Both variants stay importable so the benchmark
and the tests can compare them directly.
"""
import numpy as np

from ._jit import USE_JIT, njit


# -- bucket assignment ------------------------------------------------------

@njit(cache=True)
def bucket_indices_jit(values, n):
    out = np.empty(values.shape[0], np.int64)
    for t in range(values.shape[0]):
        v = values[t]
        b = int(np.floor(v * n))
        if b > n - 1:
            b = n - 1
        if b < 0:
            b = 0
        # floor(v * n) can land one bucket off near a boundary; compare
        # against the boundary values themselves
        if b > 0 and v < b / n:
            b -= 1
        elif b < n - 1 and v >= (b + 1) / n:
            b += 1
        out[t] = b
    return out


def bucket_indices_np(values, n):
    v = np.asarray(values, dtype=np.float64)
    b = np.clip(np.floor(v * n).astype(np.int64), 0, n - 1)
    b = np.where((b > 0) & (v < b / n), b - 1, b)
    b = np.where((b < n - 1) & (v >= (b + 1) / n), b + 1, b)
    return b


# -- AOSA pair scan ---------------------------------------------------------

@njit(cache=True)
def aosa_pair_jit(alpha):
    for i in range(alpha.shape[0] - 1):
        if alpha[i] <= 0.0 and alpha[i + 1] >= 0.0:
            return i
    return -1


def aosa_pair_np(alpha):
    hits = np.flatnonzero((alpha[:-1] <= 0.0) & (alpha[1:] >= 0.0))
    return int(hits[0]) if hits.size else -1


@njit(cache=True)
def first_sign_change_jit(c):
    for i in range(c.shape[0] - 1):
        if c[i] < 0.0 and c[i + 1] >= 0.0:
            return i
    return -1


def first_sign_change_np(c):
    hits = np.flatnonzero((c[:-1] < 0.0) & (c[1:] >= 0.0))
    return int(hits[0]) if hits.size else -1


# -- exact distance to calibration -------------------------------------------
#
# Days are split into classes by outcome value and each class is sorted by
# prediction. Some optimal calibrated sequence gives every level set a
# contiguous block of each class (swapping two same-outcome days between
# level sets keeps both means fixed and never raises the l1 cost when the
# lower prediction goes to the lower level). The DP below runs over the
# vector of per-class counts already assigned.

@njit(cache=True)
def _block_abs(sp, prefix, lo, hi, v):
    a = lo
    b = hi
    while a < b:
        mid = (a + b) // 2
        if sp[mid] < v:
            a = mid + 1
        else:
            b = mid
    k = a
    below = v * (k - lo) - (prefix[k] - prefix[lo])
    above = (prefix[hi] - prefix[k]) - v * (hi - k)
    return below + above


@njit(cache=True)
def caldist_dp_jit(sp, prefix, offsets, yvals):
    c = yvals.shape[0]
    radix = np.empty(c, np.int64)
    stride = np.empty(c, np.int64)
    S = 1
    for j in range(c):
        radix[j] = offsets[j + 1] - offsets[j] + 1
        stride[j] = S
        S *= radix[j]
    dp = np.full(S, np.inf)
    dp[0] = 0.0
    cur = np.zeros(c, np.int64)
    prev = np.zeros(c, np.int64)
    for s in range(1, S):
        r = s
        for j in range(c):
            cur[j] = r % radix[j]
            r //= radix[j]
            prev[j] = 0
        best = np.inf
        while True:
            idx = 0
            cnt = 0
            ysum = 0.0
            for j in range(c):
                idx += prev[j] * stride[j]
                d = cur[j] - prev[j]
                cnt += d
                ysum += d * yvals[j]
            if cnt > 0 and dp[idx] < best:
                v = ysum / cnt
                cost = dp[idx]
                for j in range(c):
                    if cur[j] > prev[j]:
                        cost += _block_abs(sp, prefix, offsets[j] + prev[j],
                                           offsets[j] + cur[j], v)
                if cost < best:
                    best = cost
            j = 0
            while j < c:
                prev[j] += 1
                if prev[j] <= cur[j]:
                    break
                prev[j] = 0
                j += 1
            if j == c:
                break
        dp[s] = best
    return dp[S - 1]


def caldist_dp_np(sp, prefix, offsets, yvals):
    c = yvals.shape[0]
    radix = np.diff(offsets) + 1
    S = int(np.prod(radix))
    strides = np.concatenate(([1], np.cumprod(radix)[:-1])).astype(np.int64)
    dp = np.full(S, np.inf)
    dp[0] = 0.0
    for s in range(1, S):
        cur = np.array(np.unravel_index(s, radix, order="F"), dtype=np.int64)
        prev = np.indices(cur + 1).reshape(c, -1)
        d = cur[:, None] - prev
        cnt = d.sum(axis=0)
        keep = cnt > 0
        prev, d, cnt = prev[:, keep], d[:, keep], cnt[keep]
        v = (d * yvals[:, None]).sum(axis=0) / cnt
        cost = dp[(prev * strides[:, None]).sum(axis=0)]
        for j in range(c):
            if cur[j] == 0:
                continue
            lo = offsets[j] + prev[j]
            hi = offsets[j] + cur[j]
            cls = sp[offsets[j]:offsets[j + 1]]
            k = np.clip(offsets[j] + np.searchsorted(cls, v, side="left"), lo, hi)
            below = v * (k - lo) - (prefix[k] - prefix[lo])
            above = (prefix[hi] - prefix[k]) - v * (hi - k)
            cost = cost + below + above
        dp[s] = cost.min()
    return float(dp[-1])


# -- brute force over set partitions (independent oracle) --------------------

@njit(cache=True)
def caldist_partitions_jit(p, y):
    T = p.shape[0]
    if T == 0:
        return 0.0
    a = np.zeros(T, np.int64)  # restricted growth string
    m = np.zeros(T, np.int64)  # running max of a
    sums = np.zeros(T)
    cnts = np.zeros(T, np.int64)
    best = np.inf
    while True:
        for g in range(T):
            sums[g] = 0.0
            cnts[g] = 0
        for t in range(T):
            sums[a[t]] += y[t]
            cnts[a[t]] += 1
        cost = 0.0
        for t in range(T):
            cost += abs(p[t] - sums[a[t]] / cnts[a[t]])
        if cost < best:
            best = cost
        i = T - 1
        while i >= 1 and a[i] > m[i - 1]:
            i -= 1
        if i < 1:
            break
        a[i] += 1
        m[i] = max(m[i - 1], a[i])
        for k in range(i + 1, T):
            a[k] = 0
            m[k] = m[i]
    return best


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def caldist_partitions_np(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.size == 0:
        return 0.0
    best = np.inf
    for part in _set_partitions(list(range(p.size))):
        cost = 0.0
        for group in part:
            g = np.asarray(group)
            cost += np.abs(p[g] - y[g].mean()).sum()
        best = min(best, cost)
    return float(best)


def bell_number(n):
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


if USE_JIT:
    bucket_indices = bucket_indices_jit
    aosa_pair = aosa_pair_jit
    first_sign_change = first_sign_change_jit
    caldist_dp = caldist_dp_jit
    caldist_partitions = caldist_partitions_jit
else:
    bucket_indices = bucket_indices_np
    aosa_pair = aosa_pair_np
    first_sign_change = first_sign_change_np
    caldist_dp = caldist_dp_np
    caldist_partitions = caldist_partitions_np

__all__ = [
    "bucket_indices", "aosa_pair", "first_sign_change", "caldist_dp",
    "caldist_partitions", "bell_number",
]
