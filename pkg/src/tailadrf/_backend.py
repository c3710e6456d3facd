"""Select the compiled kernels when available, else the numpy fallback.

``TAILADRF_BACKEND=python`` forces the fallback (used by the benchmark and
the backend-agreement tests).
"""
import os

from . import _fallback

BACKEND = "python"
nw_predict = _fallback.nw_predict
pinball_irls = _fallback.pinball_irls
pinball_objective = _fallback.pinball_objective
tail_log_moments = _fallback.tail_log_moments

if os.environ.get("TAILADRF_BACKEND", "").lower() != "python":
    try:
        from . import _native
    except ImportError:
        pass
    else:
        BACKEND = "native"
        nw_predict = _native.nw_predict
        pinball_irls = _native.pinball_irls
        pinball_objective = _native.pinball_objective
        tail_log_moments = _native.tail_log_moments
