"""Backend selection for the block kernels.

The compiled extension is used when it imports; setting
``SHARPCERT_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

if _compiled is not None and os.environ.get("SHARPCERT_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
block_norms = _impl.block_norms
block_soft_threshold = _impl.block_soft_threshold
project_epigraph_maxnorm = _impl.project_epigraph_maxnorm


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        name = BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None
