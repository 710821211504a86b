import os
import subprocess
import sys

import numpy as np
import pytest

from satsplit import kernels
from satsplit._accel import njit

from oracles import random_edges


def csr(seed, n=25, p=0.2, mask_frac=0.0):
    rng = np.random.default_rng(seed)
    edges = np.array(random_edges(rng, n, p), dtype=np.int64).reshape(-1, 2)
    active = rng.random(len(edges)) >= mask_frac
    return kernels.build_csr(n, edges, active), len(edges), rng


@pytest.mark.parametrize("seed", range(5))
def test_aggregation_paths_agree(seed):
    (indptr, indices, _), _, rng = csr(seed, mask_frac=0.2)
    x = rng.standard_normal((len(indptr) - 1, 4))
    fast = njit(kernels._mean_aggregate_loop)
    np.testing.assert_allclose(fast(indptr, indices, x), kernels._mean_aggregate_numpy(indptr, indices, x),
                               atol=1e-13)
    fast_t = njit(kernels._mean_aggregate_t_loop)
    np.testing.assert_allclose(fast_t(indptr, indices, x), kernels._mean_aggregate_t_numpy(indptr, indices, x),
                               atol=1e-13)
    v = x[:, 0].copy()
    np.testing.assert_allclose(kernels._neighbor_sum_loop(indptr, indices, v),
                               kernels._neighbor_sum_numpy(indptr, indices, v), atol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_mean_aggregate_t_is_adjoint(seed):
    (indptr, indices, _), _, rng = csr(seed)
    n = len(indptr) - 1
    x = rng.standard_normal((n, 3))
    y = rng.standard_normal((n, 3))
    lhs = np.sum(kernels.mean_aggregate(indptr, indices, x) * y)
    rhs = np.sum(x * kernels.mean_aggregate_t(indptr, indices, y))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_isolated_rows_are_zero():
    indptr, indices, _ = kernels.build_csr(3, np.array([[0, 1]]))
    out = kernels.mean_aggregate(indptr, indices, np.ones((3, 2)))
    assert out[2].tolist() == [0.0, 0.0]


def test_float32_preserved():
    (indptr, indices, _), _, rng = csr(0)
    x = rng.standard_normal((len(indptr) - 1, 2)).astype(np.float32)
    assert kernels.mean_aggregate(indptr, indices, x).dtype == np.float32


def test_compiled_and_python_brandes_agree():
    (indptr, indices, eids), m, _ = csr(7, n=15, p=0.3)
    py = kernels._brandes_loop(indptr, indices)
    np.testing.assert_allclose(njit(kernels._brandes_loop)(indptr, indices), py, atol=1e-12)
    assert np.array_equal(njit(kernels._bridges_loop)(indptr, indices, eids, m),
                          kernels._bridges_loop(indptr, indices, eids, m))


def test_env_flag_selects_fallback():
    code = "from satsplit import kernels, _accel; print(_accel.NUMBA_ENABLED, kernels.mean_aggregate.__name__)"
    env = dict(os.environ, SATSPLIT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "_mean_aggregate_numpy"]
