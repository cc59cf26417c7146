"""Backend selection for the numeric kernels.

Set ``RETICLE_SWITCHING_DISABLE_NUMBA=1`` to force the pure-numpy path.
"""

from __future__ import annotations

import os
from typing import Any, Callable

_DISABLED = os.environ.get("RETICLE_SWITCHING_DISABLE_NUMBA", "0").strip().lower() in {
    "1",
    "true",
    "yes",
}

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _njit(*args: Any, **kwargs: Any) -> Callable:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and not _DISABLED

njit = _njit


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
