"""HMM recursion kernels.

Uses the compiled ``_kernels`` extension when it was built, otherwise the
numpy implementation. Set ``DNILM_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("DNILM_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

forward_backward = _impl.forward_backward
factorial_viterbi = _impl.factorial_viterbi

__all__ = ["BACKEND", "forward_backward", "factorial_viterbi"]
