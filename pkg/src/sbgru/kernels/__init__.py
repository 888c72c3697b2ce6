"""Recurrence kernel backends.

Two interchangeable implementations of the sequence-level GRU forward and
backward kernels exist: a compiled Cython extension (``_recurrence``) and a
pure-numpy fallback (``reference``). The compiled one is preferred when the
extension was built; ``SBGRU_BACKEND=python`` or ``=compiled`` in the
environment forces a choice (forcing the compiled backend raises if it is
unavailable).
"""

import os

from . import reference

_requested = os.environ.get("SBGRU_BACKEND", "").lower()
_compiled = None
if _requested != "python":
    try:
        from . import _recurrence as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
        _compiled = None

_impl = _compiled if _compiled is not None else reference

BACKEND = _impl.BACKEND_NAME
gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward


def available_backends() -> dict:
    """Name -> module for every backend importable in this environment."""
    out = {"python": reference}
    if _compiled is not None:
        out["compiled"] = _compiled
    else:
        try:
            from . import _recurrence

            out["compiled"] = _recurrence
        except ImportError:
            pass
    return out
