import os
import subprocess
import sys

import numpy as np
import pytest

from escape4d import _kernels as K

numba_only = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")
NP, NB = K.IMPLEMENTATIONS["numpy"], K.IMPLEMENTATIONS["numba"]


def _grids(rng, n, cells=16):
    g = rng.random((n, cells))
    return g / g.sum(axis=1, keepdims=True)


@numba_only
def test_frechet_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(30):
        d = rng.random((rng.integers(1, 40), rng.integers(1, 40)))
        assert NB["frechet_dp"](d) == NP["frechet_dp"](d)


@numba_only
def test_perm_mean_diff_backends_agree():
    rng = np.random.default_rng(1)
    pooled = rng.normal(size=25)
    idx = rng.permuted(np.tile(np.arange(25), (200, 1)), axis=1)
    assert np.allclose(NB["perm_mean_diff"](pooled, 11, idx), NP["perm_mean_diff"](pooled, 11, idx),
                       rtol=1e-12, atol=1e-14)


@numba_only
@pytest.mark.parametrize("kind", [K.JSD, K.L1])
def test_group_perm_backends_agree(kind):
    rng = np.random.default_rng(2)
    grids = _grids(rng, 14)
    idx = rng.permuted(np.tile(np.arange(14), (150, 1)), axis=1)
    assert np.allclose(NB["group_perm"](grids, 6, idx, kind), NP["group_perm"](grids, 6, idx, kind),
                       rtol=1e-10, atol=1e-13)


@numba_only
@pytest.mark.parametrize("kind", [K.JSD, K.L1])
def test_sign_flip_backends_agree(kind):
    rng = np.random.default_rng(3)
    a, b = _grids(rng, 9), _grids(rng, 9)
    deltas, center = a - b, 0.5 * (a + b).mean(axis=0)
    signs = np.where(rng.random((150, 9)) < 0.5, -1.0, 1.0)
    assert np.allclose(NB["sign_flip"](deltas, center, signs, kind),
                       NP["sign_flip"](deltas, center, signs, kind), rtol=1e-10, atol=1e-13)


@numba_only
def test_mantel_backends_agree():
    rng = np.random.default_rng(4)
    p = rng.random((9, 2))
    X = np.hypot(*(p[:, None] - p[None]).transpose(2, 0, 1))
    yu = rng.random(36)
    yc = yu - yu.mean()
    perms = rng.permuted(np.tile(np.arange(9), (150, 1)), axis=1)
    assert np.allclose(NB["mantel_perm"](X, yc, perms), NP["mantel_perm"](X, yc, perms), rtol=1e-10)


def test_identity_permutation_is_observed_statistic():
    rng = np.random.default_rng(5)
    pooled = rng.normal(size=10)
    ident = np.arange(10)[None, :]
    assert NP["perm_mean_diff"](pooled, 4, ident)[0] == pytest.approx(abs(pooled[:4].mean() - pooled[4:].mean()))


def test_no_numba_flag_selects_numpy():
    env = dict(os.environ, ESCAPE4D_NO_NUMBA="1")
    code = "from escape4d import _kernels as K; print(K.BACKEND, K.sign_flip is K.sign_flip_numpy)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_no_numba_flag_gives_same_p_values():
    code = ("import numpy as np; from escape4d.stats import paired_sign_flip; "
            "r = np.random.default_rng(0); a = r.dirichlet(np.ones(16), 8); b = r.dirichlet(np.ones(16), 8); "
            "print(repr(paired_sign_flip(a, b, 'JSD', 300, rng=1).p_value))")
    runs = []
    for flag in ("1", "0"):
        env = dict(os.environ, ESCAPE4D_NO_NUMBA=flag)
        runs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                   check=True).stdout)
    assert runs[0] == runs[1]


def test_benchmark_script_runs():
    script = os.path.join(os.path.dirname(__file__), "..", "benchmarks", "bench_kernels.py")
    out = subprocess.run([sys.executable, script, "--repeat", "1"], capture_output=True, text=True, check=True)
    assert "group_perm" in out.stdout and "mantel_perm" in out.stdout
