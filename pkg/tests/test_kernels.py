"""Conv1d backend dispatch: numpy fallback vs compiled extension."""

import subprocess
import sys

import numpy as np
import pytest

from chebnet import kernels


def random_case(rng, b=3, c=2, length=11, f=4, t=5):
    x = rng.standard_normal((b, c, length))
    w = rng.standard_normal((f, c, t))
    bias = rng.standard_normal(f)
    return x, w, bias


class TestNumpyReference:
    def test_forward_against_naive_loops(self):
        rng = np.random.default_rng(0)
        x, w, bias = random_case(rng)
        y = kernels._np_conv1d_forward(x, w, bias)
        b_, f_, p_ = y.shape
        for bi in range(b_):
            for fi in range(f_):
                for pi in range(p_):
                    acc = bias[fi]
                    for ci in range(x.shape[1]):
                        for ti in range(w.shape[2]):
                            acc += w[fi, ci, ti] * x[bi, ci, pi + ti]
                    assert y[bi, fi, pi] == pytest.approx(acc, abs=1e-12)

    def test_backward_against_finite_differences(self):
        rng = np.random.default_rng(1)
        x, w, bias = random_case(rng, b=2, c=2, length=8, f=2)
        up = rng.standard_normal((2, 2, 4))
        dx, dw, db = kernels._np_conv1d_backward(x, w, up)
        h = 1e-6

        def loss():
            return float((kernels._np_conv1d_forward(x, w, bias) * up).sum())

        for arr, grad in ((x, dx), (w, dw)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for i in range(0, flat.size, 3):  # sample every third element
                orig = flat[i]
                flat[i] = orig + h
                hi = loss()
                flat[i] = orig - h
                lo = loss()
                flat[i] = orig
                assert gflat[i] == pytest.approx((hi - lo) / (2 * h),
                                                 abs=1e-4)
        np.testing.assert_allclose(db, up.sum(axis=(0, 2)))


@pytest.mark.skipif(kernels.BACKEND != "c",
                    reason="compiled extension not built")
class TestCompiledParity:
    def test_forward_matches_numpy(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x, w, bias = random_case(rng, b=int(rng.integers(1, 5)),
                                     c=int(rng.integers(1, 4)),
                                     length=int(rng.integers(5, 20)),
                                     f=int(rng.integers(1, 6)))
            c_out = kernels.conv1d_forward(x, w, bias)
            np_out = kernels._np_conv1d_forward(x, w, bias)
            np.testing.assert_allclose(c_out, np_out, atol=1e-12)

    def test_backward_matches_numpy(self):
        rng = np.random.default_rng(3)
        x, w, bias = random_case(rng)
        up = rng.standard_normal(kernels.conv1d_forward(x, w, bias).shape)
        for a, b in zip(kernels.conv1d_backward(x, w, up),
                        kernels._np_conv1d_backward(x, w, up)):
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestBackendSelection:
    def test_env_var_forces_python(self):
        code = ("import chebnet.kernels as k; print(k.BACKEND)")
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "CHEBNET_BACKEND": "python"},
            capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"

    def test_env_var_rejects_unknown(self):
        code = "import chebnet.kernels"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "CHEBNET_BACKEND": "fortran"},
            capture_output=True, text=True)
        assert out.returncode != 0
