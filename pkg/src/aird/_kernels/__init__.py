"""Hot-loop kernels with backend selection at import time.

The compiled extension is preferred when built; the pure-numpy fallback is
bitwise-equivalent. Set AIRD_KERNELS=python or AIRD_KERNELS=compiled to force
a backend (the latter raises if the extension is missing).
"""

import os

_choice = os.environ.get("AIRD_KERNELS", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"AIRD_KERNELS must be auto, compiled or python, got {_choice!r}")

if _choice == "python":
    from . import _ref as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise ImportError("AIRD_KERNELS=compiled but the extension is not built")
        from . import _ref as _impl

BACKEND = _impl.BACKEND
conv_out_size = _impl.conv_out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2d = _impl.maxpool2d
maxpool2d_backward = _impl.maxpool2d_backward
