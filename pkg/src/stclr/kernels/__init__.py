"""Hot conv3d kernels with a compiled core and a NumPy fallback.

The backend is chosen once at import time: the Cython extension if it built,
otherwise the NumPy implementation. ``STCLR_KERNEL_BACKEND`` overrides the
choice (``auto``, ``cython``, or ``numpy``), and :func:`set_backend` switches
at runtime, which is what the benchmark uses to time both paths in one
process.

All kernels operate on contiguous float32/float64 arrays and share one
contract:

    conv3d_forward(x[B,Ci,T,H,W], w[Co,Ci,t,d1,d2], bias[Co]|None,
                   stride, padding) -> out[B,Co,T',H',W']
    conv3d_backward_input(gout, w, x_shape, stride, padding)  -> gx
    conv3d_backward_weight(x, gout, w_shape, stride, padding) -> gw
"""

import os

from . import _conv_np

try:
    from . import _conv_cy
except ImportError:  # extension not built; NumPy path serves everything
    _conv_cy = None

_BACKENDS = {"numpy": _conv_np}
if _conv_cy is not None:
    _BACKENDS["cython"] = _conv_cy

_active_name = None
_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend; 'auto' prefers the compiled extension."""
    global _active_name, _active
    if name == "auto":
        name = "cython" if "cython" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    _active_name = name
    _active = _BACKENDS[name]
    return name


def active_backend():
    return _active_name


def conv3d_forward(x, w, bias, stride, padding):
    return _active.conv3d_forward(x, w, bias, stride, padding)


def conv3d_backward_input(gout, w, x_shape, stride, padding):
    return _active.conv3d_backward_input(gout, w, x_shape, stride, padding)


def conv3d_backward_weight(x, gout, w_shape, stride, padding):
    return _active.conv3d_backward_weight(x, gout, w_shape, stride, padding)


def conv3d_output_shape(x_shape, w_shape, stride, padding):
    return _conv_np.output_shape(x_shape, w_shape, stride, padding)


set_backend(os.environ.get("STCLR_KERNEL_BACKEND", "auto"))
