"""Hot loops for the scalar OU-fast family, compiled when available.

Set ``MULTISCALE_MLE_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _fallback

if os.environ.get("MULTISCALE_MLE_BACKEND", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"
    else:
        BACKEND = "cython"

simulate_family = _impl.simulate_family
family_stats = _impl.family_stats
family_limit_path = _impl.family_limit_path

__all__ = ["BACKEND", "family_limit_path", "family_stats", "simulate_family"]
