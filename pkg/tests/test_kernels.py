"""The compiled and pure-Python enumeration kernels agree with each other and with closed forms."""

import os
import subprocess
import sys

import numpy as np
import pytest

from iclsim import kernels
from iclsim.kernels import _pykernels

try:
    from iclsim.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _instance(rng, n, max_k=3):
    ks = rng.integers(1, max_k + 1, size=n)
    offsets = np.zeros(n + 1, np.int64)
    offsets[1:] = np.cumsum(ks)
    values = rng.normal(size=offsets[-1])
    probs = np.concatenate([rng.dirichlet(np.ones(k)) for k in ks])
    weights = rng.uniform(0.5, 2.0, size=n)
    q = rng.uniform(0, 1, size=n)
    return q, weights, values, probs, offsets


def test_point_masses_closed_form():
    # equal weights, point masses a and b: only the three nonempty subsets contribute
    a, b, q1, q2, t = 1.0, -3.0, 0.3, 0.8, 0.5
    q = np.array([q1, q2])
    num, p_any = _pykernels.expected_quadratic_gain(q, np.ones(2), np.array([a, b]), np.ones(2),
                                                   np.array([0, 1, 2]), t)
    expected = -(q1 * (1 - q2) * (a - t) ** 2 + (1 - q1) * q2 * (b - t) ** 2
                 + q1 * q2 * ((a + b) / 2 - t) ** 2)
    assert num == pytest.approx(expected, rel=1e-14)
    assert p_any == pytest.approx(1 - (1 - q1) * (1 - q2), rel=1e-14)


def test_generic_kernel_with_identity_matches_quadratic():
    rng = np.random.default_rng(3)
    args = _instance(rng, 4)
    assert _pykernels.py_expected_gain_generic(*args, 0.2, lambda z: z) == pytest.approx(
        _pykernels.expected_quadratic_gain(*args, 0.2), rel=1e-13)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
@pytest.mark.parametrize("n", [1, 2, 4, 6])
def test_backends_agree(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        args = _instance(rng, n)
        py = _pykernels.expected_quadratic_gain(*args, 0.1)
        cy = _ckernels.expected_quadratic_gain(*args, 0.1)
        assert cy[0] == pytest.approx(py[0], rel=1e-12, abs=1e-15)
        assert cy[1] == pytest.approx(py[1], rel=1e-12, abs=1e-15)


def test_backend_flag_names_loaded_module():
    assert kernels.BACKEND in ("cython", "python")
    if kernels.BACKEND == "python":
        assert kernels.expected_quadratic_gain is _pykernels.expected_quadratic_gain


def test_env_var_forces_fallback():
    env = dict(os.environ, ICLSIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import iclsim; print(iclsim.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
