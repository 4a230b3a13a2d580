"""Hot kernels, compiled when available.

The compiled module is used unless it failed to build or ``XCLP_PURE_PYTHON``
is set to a non-empty value; ``BACKEND`` records which one is active.
"""

from __future__ import annotations

import os
from types import ModuleType

from xclp._kernels import _pykernels as python

compiled: ModuleType | None
try:
    if os.environ.get("XCLP_PURE_PYTHON"):
        raise ImportError("pure-Python kernels requested")
    from xclp._kernels import _ckernels as compiled
except ImportError:
    compiled = None

BACKEND = "cython" if compiled is not None else "python"
_active = compiled if compiled is not None else python

# numpy's packbits beats the compiled loop (see benchmarks/bench_kernels.py)
pack_signs = python.pack_signs
hamming_cross = _active.hamming_cross
topk_rows = _active.topk_rows
PaillierPublicKernel = _active.PaillierPublicKernel
PaillierPrivateKernel = _active.PaillierPrivateKernel
eval_plan = python.eval_plan


def backends() -> dict[str, ModuleType]:
    """All importable kernel modules by name (for cross-checks and benchmarks)."""
    out = {"python": python}
    if compiled is not None:
        out["cython"] = compiled
    return out
