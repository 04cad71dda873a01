"""Pick the compiled kernels when available, otherwise the numpy twins.

Set ``COARSEFINE_PURE=1`` to force the pure-Python path.
"""

import os

from . import _pure

NAME = "python"
sinkhorn_batch = _pure.sinkhorn_batch
count_inliers = _pure.count_inliers

if os.environ.get("COARSEFINE_PURE") != "1":
    try:
        from . import _kernels, _sinkhorn
    except ImportError:
        pass
    else:
        NAME = "cython"
        sinkhorn_batch = _sinkhorn.sinkhorn_batch
        count_inliers = _kernels.count_inliers


def backends():
    """Mapping of backend name to ``(sinkhorn_batch, count_inliers)``."""
    found = {"python": (_pure.sinkhorn_batch, _pure.count_inliers)}
    try:
        from . import _kernels, _sinkhorn
    except ImportError:
        pass
    else:
        found["cython"] = (_sinkhorn.sinkhorn_batch, _kernels.count_inliers)
    return found
