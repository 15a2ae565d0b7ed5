import os
import subprocess
import sys

import numpy as np
import pytest

from madonet import _kernels

pytestmark = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not importable")

NP, NB = _kernels.numpy_kernels, _kernels.numba_kernels


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv1d_paths_agree(rng, stride):
    x = rng.normal(size=(4, 3, 17))
    w = rng.normal(size=(5, 3, 4))
    y = NP.conv1d_forward(x, w, stride)
    np.testing.assert_allclose(NB.conv1d_forward(x, w, stride), y, rtol=1e-12, atol=1e-12)
    gy = rng.normal(size=y.shape)
    np.testing.assert_allclose(NB.conv1d_grad_kernel(gy, x, 4, stride), NP.conv1d_grad_kernel(gy, x, 4, stride), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(NB.conv1d_grad_input(gy, w, 17, stride), NP.conv1d_grad_input(gy, w, 17, stride), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_paths_agree(rng, stride):
    x = rng.normal(size=(3, 2, 9, 8))
    w = rng.normal(size=(4, 2, 3, 2))
    y = NP.conv2d_forward(x, w, stride)
    np.testing.assert_allclose(NB.conv2d_forward(x, w, stride), y, rtol=1e-12, atol=1e-12)
    gy = rng.normal(size=y.shape)
    np.testing.assert_allclose(
        NB.conv2d_grad_kernel(gy, x, 3, 2, stride), NP.conv2d_grad_kernel(gy, x, 3, 2, stride), rtol=1e-12, atol=1e-12
    )
    np.testing.assert_allclose(
        NB.conv2d_grad_input(gy, w, 9, 8, stride), NP.conv2d_grad_input(gy, w, 9, 8, stride), rtol=1e-12, atol=1e-12
    )


def test_tridiag_and_kde_paths_agree(rng):
    n = 12
    lower, upper = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    diag = 3.0 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=(n, 3))
    np.testing.assert_allclose(NB.tridiag_solve(lower, diag, upper, rhs), NP.tridiag_solve(lower, diag, upper, rhs), rtol=1e-13)
    data, pts, bw = rng.normal(size=(50, 2)), rng.normal(size=(7, 2)), np.array([0.3, 0.5])
    np.testing.assert_allclose(NB.gauss_kde_eval(pts, data, bw), NP.gauss_kde_eval(pts, data, bw), rtol=1e-13)


def test_env_flag_selects_numpy_path():
    code = "from madonet import _kernels; print(_kernels.active.name)"
    env = dict(os.environ, MADONET_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["MADONET_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"
