"""Hot-loop kernels with two interchangeable backends.

``_native`` (Cython) is preferred when built; ``numpy_backend`` is the
always-available fallback.  Selection happens once at import and can be
forced with AGECACHE_BACKEND=numpy|native.  ``get_backend`` exposes both
for cross-checking and benchmarks.
"""

import os

from . import numpy_backend


def get_backend(name: str):
    if name == "numpy":
        return numpy_backend
    if name in ("native", "cython"):
        from . import _native

        return _native
    raise ValueError(f"unknown backend {name!r} (expected 'numpy' or 'native')")


def _select():
    requested = os.environ.get("AGECACHE_BACKEND", "auto").strip().lower()
    if requested in ("", "auto"):
        try:
            return get_backend("native")
        except ImportError:
            return numpy_backend
    return get_backend(requested)


_impl = _select()

BACKEND_NAME = _impl.NAME
rvia_solve = _impl.rvia_solve
stationary = _impl.stationary
rollout_walk = _impl.rollout_walk
dqn_batch_update = _impl.dqn_batch_update
