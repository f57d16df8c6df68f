"""Hot-loop kernels, compiled when the extension is built.

Set ``HPM_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
relation_indicators = _pykernels.relation_indicators

if os.environ.get("HPM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        relation_indicators = _ckernels.relation_indicators
        BACKEND = "cython"

__all__ = ["BACKEND", "relation_indicators"]
