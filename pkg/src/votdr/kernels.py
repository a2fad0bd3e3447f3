"""Select the compiled kernels when built, else the interpreter fallback.

Set ``VOTDR_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _purepy

if os.environ.get("VOTDR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _purepy
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _purepy

BACKEND = "python" if _impl is _purepy else "compiled"

dead_time_mask = _impl.dead_time_mask
histogram = _impl.histogram
