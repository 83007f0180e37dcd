"""Nonparametric tests and density-grid distances.

Exact null distributions are enumerated for small samples (Mann-Whitney for
n1 + n2 <= 12, Wilcoxon for n <= 15); larger samples use the tie-corrected
normal approximation with continuity correction. Permutation tests report
``(exceedances + 1) / (N + 1)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import _kernels as K

MW_EXACT_MAX = 12
WILCOXON_EXACT_MAX = 15

# relative slack when counting replicates >= observed, so float noise from
# summation order does not split a true tie
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_permutations: int = 0
    method: str = ""
    two_sided: bool = True
    degenerate: bool = False

    __test__ = False  # keep pytest from collecting this


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _kind(distance: str) -> int:
    d = distance.upper()
    if d == "JSD":
        return K.JSD
    if d == "L1":
        return K.L1
    raise ValueError(f"unknown distance {distance!r}; expected 'JSD' or 'L1'")


def _perm_p(stats: np.ndarray, observed: float) -> float:
    thresh = observed - _TIE_RTOL * max(1.0, abs(observed))
    count = int(np.count_nonzero(stats >= thresh))
    return (count + 1) / (stats.shape[0] + 1)


def _normal_two_sided(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def _tie_term(ranks: np.ndarray) -> float:
    _, counts = np.unique(ranks, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


# ---------------------------------------------------------------------------
# rank tests


def mann_whitney_u(a, b) -> TestResult:
    """Two-sided Mann-Whitney U test.

    The reported statistic is ``min(U1, U2)`` with
    ``U1 = n1*n2 + n1*(n1+1)/2 - R1``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    r1 = ranks[:n1].sum()
    u1 = n1 * n2 + n1 * (n1 + 1) / 2.0 - r1
    u2 = n1 * n2 - u1
    u = float(min(u1, u2))
    if np.all(pooled == pooled[0]):
        return TestResult(u, 1.0, method="mann_whitney_u", degenerate=True)
    mean = n1 * n2 / 2.0
    n = n1 + n2
    if n <= MW_EXACT_MAX:
        dev_obs = abs(u1 - mean)
        hits = total = 0
        for combo in itertools.combinations(range(n), n1):
            r = ranks[list(combo)].sum()
            uu = n1 * n2 + n1 * (n1 + 1) / 2.0 - r
            total += 1
            if abs(uu - mean) >= dev_obs - 1e-9:
                hits += 1
        return TestResult(u, hits / total, method="mann_whitney_u_exact")
    var = n1 * n2 / 12.0 * ((n + 1) - _tie_term(ranks) / (n * (n - 1)))
    if var <= 0:
        return TestResult(u, 1.0, method="mann_whitney_u_normal", degenerate=True)
    z = (abs(u1 - mean) - 0.5) / math.sqrt(var)
    return TestResult(u, _normal_two_sided(max(z, 0.0)), method="mann_whitney_u_normal")


def wilcoxon_signed_rank(x, y=None) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples (zero differences dropped).

    The statistic is ``W = min(W+, W-)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    d = x if y is None else x - np.asarray(y, dtype=float).ravel()
    if y is not None and x.shape != np.asarray(y).ravel().shape:
        raise ValueError("paired samples must have equal length")
    if d.size == 0:
        raise ValueError("need at least one pair")
    d = d[d != 0]
    n = d.size
    if n == 0:
        return TestResult(0.0, 1.0, method="wilcoxon", degenerate=True)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    mean = n * (n + 1) / 4.0
    if n <= WILCOXON_EXACT_MAX:
        signs = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
        t = signs @ ranks
        p = np.count_nonzero(np.abs(t - mean) >= abs(w_plus - mean) - 1e-9) / t.size
        return TestResult(w, float(p), method="wilcoxon_exact")
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(ranks) / 48.0
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    return TestResult(w, _normal_two_sided(max(z, 0.0)), method="wilcoxon_normal")


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        raise ValueError("zero rank variance")
    return float(rx @ ry) / den


# ---------------------------------------------------------------------------
# permutation tests


def permutation_test(a, b, n_permutations: int = 5000, rng=None) -> TestResult:
    """Label-permutation test on ``|mean(a) - mean(b)|``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    gen = _rng(rng)
    idx = gen.permuted(np.tile(np.arange(pooled.size), (n_permutations, 1)), axis=1)
    stats = K.perm_mean_diff(pooled, a.size, idx)
    obs = float(K.perm_mean_diff(pooled, a.size, np.arange(pooled.size)[None, :])[0])
    return TestResult(obs, _perm_p(stats, obs), n_permutations, "permutation")


def _grid_matrix(grids) -> np.ndarray:
    arrs = [np.asarray(getattr(g, "mass", g), dtype=float) for g in grids]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ValueError(f"mismatched grid sizes: {sorted(shapes)}")
    return np.stack([a.ravel() for a in arrs])


def density_distance(p, q, kind: str = "JSD") -> float:
    """Jensen-Shannon distance (base-2, in [0, 1]) or L1 distance (in [0, 2])."""
    a = np.asarray(getattr(p, "mass", p), dtype=float)
    b = np.asarray(getattr(q, "mass", q), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"grid size mismatch: {a.shape} vs {b.shape}")
    return float(K._distance_rows_numpy(a.ravel(), b.ravel(), _kind(kind)))


def group_permutation(group_a, group_b, distance: str = "JSD", n_permutations: int = 3000,
                      rng=None) -> TestResult:
    """Distance between group-mean grids, with group labels permuted."""
    ga, gb = _grid_matrix(group_a), _grid_matrix(group_b)
    if ga.shape[1] != gb.shape[1]:
        raise ValueError("mismatched grid sizes")
    if len(ga) < 2 or len(gb) < 2:
        raise ValueError("need at least two grids per group")
    grids = np.concatenate([ga, gb])
    kind = _kind(distance)
    gen = _rng(rng)
    idx = gen.permuted(np.tile(np.arange(len(grids)), (n_permutations, 1)), axis=1)
    stats = K.group_perm(grids, len(ga), idx, kind)
    obs = float(K.group_perm(grids, len(ga), np.arange(len(grids))[None, :], kind)[0])
    return TestResult(obs, _perm_p(stats, obs), n_permutations, f"group_permutation_{distance.upper()}")


def sign_flip_permutation(deltas, distance: str = "JSD", n_permutations: int = 3000, rng=None,
                          center=None) -> TestResult:
    """Paired sign-flip test on per-run grid differences.

    The L1 statistic is ``||mean(delta)||_1``. The JSD statistic is the
    Jensen-Shannon distance between ``center + mean/2`` and ``center - mean/2``,
    where ``center`` is the mean of the per-pair midpoint grids; with that
    center both arguments are proper distributions and a sign flip is a swap
    of the two conditions within a pair. ``center`` is required for JSD.
    """
    D = _grid_matrix(deltas)
    if len(D) < 2:
        raise ValueError("need at least two runs")
    kind = _kind(distance)
    if kind == K.JSD:
        if center is None:
            raise ValueError("JSD sign-flip needs the mean midpoint grid as center")
        c = np.asarray(getattr(center, "mass", center), dtype=float).ravel()
        if c.size != D.shape[1]:
            raise ValueError("center size mismatch")
    else:
        c = np.zeros(D.shape[1])
    gen = _rng(rng)
    signs = np.where(gen.random((n_permutations, len(D))) < 0.5, -1.0, 1.0)
    stats = K.sign_flip(D, c, signs, kind)
    obs = float(K.sign_flip(D, c, np.ones((1, len(D))), kind)[0])
    return TestResult(obs, _perm_p(stats, obs), n_permutations, f"sign_flip_{distance.upper()}")


def paired_sign_flip(grids_a, grids_b, distance: str = "JSD", n_permutations: int = 3000,
                     rng=None) -> TestResult:
    """Sign-flip test built from paired grids: deltas ``a - b`` and the midpoint center."""
    A, B = _grid_matrix(grids_a), _grid_matrix(grids_b)
    if A.shape != B.shape:
        raise ValueError("paired groups must have equal shapes")
    return sign_flip_permutation(A - B, distance, n_permutations, rng, center=0.5 * (A + B).mean(axis=0))


def _upper(m: np.ndarray) -> np.ndarray:
    return m[np.triu_indices(m.shape[0], 1)]


def mantel(dx, dy, n_permutations: int = 3000, rng=None, correlation: str = "pearson") -> TestResult:
    """Mantel test between two distance matrices; two-sided on ``|r|``."""
    X = np.asarray(dx, dtype=float)
    Y = np.asarray(dy, dtype=float)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError("matrices must be square and of equal shape")
    if X.shape[0] < 3:
        raise ValueError("need at least 3 objects")
    for M in (X, Y):
        if not np.allclose(M, M.T) or np.any(np.diag(M) != 0):
            raise ValueError("matrices must be symmetric with zero diagonal")
    xu, yu = _upper(X), _upper(Y)
    if np.ptp(xu) == 0 or np.ptp(yu) == 0:
        raise ValueError("zero off-diagonal variance; correlation undefined")
    corr = correlation.lower()
    if corr == "spearman":
        n = X.shape[0]
        R = np.zeros_like(X)
        R[np.triu_indices(n, 1)] = rankdata(xu)
        X = R + R.T
        yu = rankdata(yu)
    elif corr != "pearson":
        raise ValueError(f"unknown correlation {correlation!r}")
    yc = yu - yu.mean()
    n = X.shape[0]
    gen = _rng(rng)
    perms = gen.permuted(np.tile(np.arange(n), (n_permutations, 1)), axis=1)
    stats = np.abs(K.mantel_perm(X, yc, perms))
    r_obs = float(K.mantel_perm(X, yc, np.arange(n)[None, :])[0])
    return TestResult(r_obs, _perm_p(stats, abs(r_obs)), n_permutations, f"mantel_{corr}")


def format_report(rows: list[tuple[str, TestResult]]) -> str:
    """Plain-text table of test label, statistic, p and permutation count."""
    lines = [f"{'test':<40} {'statistic':>12} {'p':>10} {'N':>6}"]
    for label, r in rows:
        lines.append(f"{label:<40} {r.statistic:>12.6g} {r.p_value:>10.5f} {r.n_permutations:>6d}")
    return "\n".join(lines)
