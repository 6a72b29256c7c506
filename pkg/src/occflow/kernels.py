"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementations are used.  Set ``OCCFLOW_BACKEND=python`` (or ``cython``)
to force a choice.  ``OCCFLOW_THREADS`` caps the thread count of the
compiled sampler (default 1).
"""
import logging
import os

import numpy as np

from . import _pykernels

log = logging.getLogger(__name__)

_choice = os.environ.get("OCCFLOW_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "cython", "python"):
    raise ImportError(f"OCCFLOW_BACKEND must be auto, cython or python, not {_choice!r}")

_ckernels = None
if _choice != "python":
    try:
        from . import _ckernels
    except ImportError as exc:
        if _choice == "cython":
            raise
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels


def num_threads() -> int:
    try:
        n = int(os.environ.get("OCCFLOW_THREADS", "1"))
    except ValueError:
        return 1
    return max(n, 1)


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"python"``/``"cython"``) or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def bilinear_sample(src, flow):
    src = np.ascontiguousarray(src, dtype=np.float64)
    flow = np.ascontiguousarray(flow, dtype=np.float64)
    return _impl.bilinear_sample(src, flow, num_threads())


def smooth_second_order(flow, weight, dx, dy, need_grad=True):
    flow = np.ascontiguousarray(flow, dtype=np.float64)
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    return _impl.smooth_second_order(flow, weight, int(dx), int(dy), need_grad)


def photometric_side(src, flow, curr, tgrads, tmasks, n, epsilon, kappa, need_grad=True):
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (src, flow, curr, tgrads)]
    tmasks = np.ascontiguousarray(tmasks, dtype=np.uint8)
    return _impl.photometric_side(*arrs, tmasks, int(n), float(epsilon), float(kappa), bool(need_grad),
                                  num_threads())
