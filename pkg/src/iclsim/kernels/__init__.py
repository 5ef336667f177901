"""Hot enumeration kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module is used. Set ``ICLSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from ._pykernels import py_expected_gain_generic
from . import _pykernels

BACKEND = "python"
expected_quadratic_gain = _pykernels.expected_quadratic_gain

if os.environ.get("ICLSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._ckernels import expected_quadratic_gain  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

__all__ = ["BACKEND", "expected_quadratic_gain", "py_expected_gain_generic"]
