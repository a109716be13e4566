"""Select the compiled kernels when available, else the numpy fallback.

Set ``PREFSIM_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if os.environ.get("PREFSIM_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        kernels = _fallback

__all__ = ["BACKEND", "kernels"]
