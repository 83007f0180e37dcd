"""Hot loops for trajectory and permutation statistics.

Each kernel exists as a numba ``@njit`` function and as a pure-numpy fallback
with the same signature. Set ``ESCAPE4D_NO_NUMBA=1`` (or run without numba
installed) to select the fallback. Random draws never happen inside a kernel:
callers pass precomputed permutation indices or sign matrices, so both
backends consume identical replicates.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("ESCAPE4D_NO_NUMBA", "").strip() not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"

JSD, L1 = 0, 1


# ---------------------------------------------------------------------------
# numpy reference implementations


def frechet_dp_numpy(dist: np.ndarray) -> float:
    """Discrete Fréchet distance from a precomputed |P|x|Q| distance matrix."""
    n, m = dist.shape
    ca = np.empty((n, m))
    ca[0] = np.maximum.accumulate(dist[0])
    ca[:, 0] = np.maximum.accumulate(dist[:, 0])
    for i in range(1, n):
        # min over the up and diagonal predecessors is row-vectorizable; left is a scan
        up_diag = np.minimum(ca[i - 1, 1:], ca[i - 1, :-1])
        row, d = ca[i], dist[i]
        for j in range(1, m):
            best = min(up_diag[j - 1], row[j - 1])
            row[j] = max(d[j], best)
    return float(ca[n - 1, m - 1])


def _jsd_rows_numpy(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0) / np.where(m > 0, m, 1.0)), 0.0)
        tq = np.where(q > 0, q * np.log2(np.where(q > 0, q, 1.0) / np.where(m > 0, m, 1.0)), 0.0)
    v = 0.5 * tp.sum(axis=-1) + 0.5 * tq.sum(axis=-1)
    return np.sqrt(np.maximum(v, 0.0))


def _distance_rows_numpy(p: np.ndarray, q: np.ndarray, kind: int) -> np.ndarray:
    if kind == L1:
        return np.abs(p - q).sum(axis=-1)
    return _jsd_rows_numpy(p, q)


def perm_mean_diff_numpy(pooled: np.ndarray, n_a: int, idx: np.ndarray) -> np.ndarray:
    """|mean(first n_a) - mean(rest)| for each row of permutation indices."""
    x = pooled[idx]
    return np.abs(x[:, :n_a].mean(axis=1) - x[:, n_a:].mean(axis=1))


def group_perm_numpy(grids: np.ndarray, n_a: int, idx: np.ndarray, kind: int) -> np.ndarray:
    """Distance between group mean grids for each relabelling in ``idx``."""
    out = np.empty(idx.shape[0])
    for k in range(idx.shape[0]):
        g = grids[idx[k]]
        out[k] = _distance_rows_numpy(g[:n_a].mean(axis=0), g[n_a:].mean(axis=0), kind)
    return out


def sign_flip_numpy(deltas: np.ndarray, center: np.ndarray, signs: np.ndarray, kind: int) -> np.ndarray:
    """Effect magnitude of the sign-flipped mean delta map for each sign row."""
    mean = signs @ deltas / deltas.shape[0]
    if kind == L1:
        return np.abs(mean).sum(axis=1)
    return _jsd_rows_numpy(center + 0.5 * mean, center - 0.5 * mean)


def mantel_perm_numpy(x: np.ndarray, y_centered: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Pearson r between permuted upper-triangle of ``x`` and a fixed centered vector."""
    n = x.shape[0]
    iu, ju = np.triu_indices(n, 1)
    xs = x[perms[:, iu], perms[:, ju]]
    xs = xs - xs.mean(axis=1, keepdims=True)
    num = xs @ y_centered
    den = np.sqrt((xs * xs).sum(axis=1) * (y_centered @ y_centered))
    return num / den


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def frechet_dp_numba(dist):
        n, m = dist.shape
        ca = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                d = dist[i, j]
                if i == 0 and j == 0:
                    ca[i, j] = d
                elif i == 0:
                    ca[i, j] = max(d, ca[0, j - 1])
                elif j == 0:
                    ca[i, j] = max(d, ca[i - 1, 0])
                else:
                    best = min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1])
                    ca[i, j] = max(d, best)
        return ca[n - 1, m - 1]

    @njit(cache=True)
    def _distance_numba(p, q, kind):
        if kind == 1:
            s = 0.0
            for c in range(p.shape[0]):
                s += abs(p[c] - q[c])
            return s
        a = 0.0
        b = 0.0
        for c in range(p.shape[0]):
            mc = 0.5 * (p[c] + q[c])
            if p[c] > 0:
                a += p[c] * np.log2(p[c] / mc)
            if q[c] > 0:
                b += q[c] * np.log2(q[c] / mc)
        v = 0.5 * a + 0.5 * b
        return np.sqrt(v) if v > 0 else 0.0

    @njit(cache=True)
    def perm_mean_diff_numba(pooled, n_a, idx):
        N, n = idx.shape
        out = np.empty(N)
        for k in range(N):
            sa = 0.0
            sb = 0.0
            for i in range(n):
                if i < n_a:
                    sa += pooled[idx[k, i]]
                else:
                    sb += pooled[idx[k, i]]
            out[k] = abs(sa / n_a - sb / (n - n_a))
        return out

    @njit(cache=True)
    def group_perm_numba(grids, n_a, idx, kind):
        N, R = idx.shape
        C = grids.shape[1]
        out = np.empty(N)
        ma = np.empty(C)
        mb = np.empty(C)
        for k in range(N):
            ma[:] = 0.0
            mb[:] = 0.0
            for r in range(R):
                g = grids[idx[k, r]]
                if r < n_a:
                    for c in range(C):
                        ma[c] += g[c]
                else:
                    for c in range(C):
                        mb[c] += g[c]
            for c in range(C):
                ma[c] /= n_a
                mb[c] /= R - n_a
            out[k] = _distance_numba(ma, mb, kind)
        return out

    @njit(cache=True)
    def sign_flip_numba(deltas, center, signs, kind):
        N, R = signs.shape
        C = deltas.shape[1]
        out = np.empty(N)
        m = np.empty(C)
        p = np.empty(C)
        q = np.empty(C)
        for k in range(N):
            m[:] = 0.0
            for r in range(R):
                s = signs[k, r]
                for c in range(C):
                    m[c] += s * deltas[r, c]
            for c in range(C):
                m[c] /= R
            if kind == 1:
                t = 0.0
                for c in range(C):
                    t += abs(m[c])
                out[k] = t
            else:
                for c in range(C):
                    p[c] = center[c] + 0.5 * m[c]
                    q[c] = center[c] - 0.5 * m[c]
                out[k] = _distance_numba(p, q, kind)
        return out

    @njit(cache=True)
    def mantel_perm_numba(x, y_centered, perms):
        N, n = perms.shape
        P = y_centered.shape[0]
        out = np.empty(N)
        xs = np.empty(P)
        yy = 0.0
        for t in range(P):
            yy += y_centered[t] * y_centered[t]
        for k in range(N):
            t = 0
            mean = 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    xs[t] = x[perms[k, i], perms[k, j]]
                    mean += xs[t]
                    t += 1
            mean /= P
            num = 0.0
            xx = 0.0
            for t in range(P):
                d = xs[t] - mean
                num += d * y_centered[t]
                xx += d * d
            out[k] = num / np.sqrt(xx * yy)
        return out

else:  # pragma: no cover
    frechet_dp_numba = frechet_dp_numpy
    perm_mean_diff_numba = perm_mean_diff_numpy
    group_perm_numba = group_perm_numpy
    sign_flip_numba = sign_flip_numpy
    mantel_perm_numba = mantel_perm_numpy


def _pick(fast, slow):
    return fast if USE_NUMBA else slow


frechet_dp = _pick(frechet_dp_numba, frechet_dp_numpy)
perm_mean_diff = _pick(perm_mean_diff_numba, perm_mean_diff_numpy)
group_perm = _pick(group_perm_numba, group_perm_numpy)
sign_flip = _pick(sign_flip_numba, sign_flip_numpy)
mantel_perm = _pick(mantel_perm_numba, mantel_perm_numpy)

IMPLEMENTATIONS = {
    "numpy": {
        "frechet_dp": frechet_dp_numpy,
        "perm_mean_diff": perm_mean_diff_numpy,
        "group_perm": group_perm_numpy,
        "sign_flip": sign_flip_numpy,
        "mantel_perm": mantel_perm_numpy,
    },
    "numba": {
        "frechet_dp": frechet_dp_numba,
        "perm_mean_diff": perm_mean_diff_numba,
        "group_perm": group_perm_numba,
        "sign_flip": sign_flip_numba,
        "mantel_perm": mantel_perm_numba,
    },
}
