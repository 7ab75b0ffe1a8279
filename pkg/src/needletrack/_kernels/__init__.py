"""Hot inner loops, compiled when available.

The Cython extension is used if it was built; otherwise (or when the
environment variable ``NEEDLETRACK_PURE_PYTHON`` is set to a non-empty value)
the numpy implementations are used.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels as python

compiled = None
if not os.environ.get("NEEDLETRACK_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

loglik_batch = _impl.loglik_batch
hf_transition = _impl.hf_transition
stratified_indices = _impl.stratified_indices

__all__ = ["BACKEND", "compiled", "python", "loglik_batch", "hf_transition", "stratified_indices"]
