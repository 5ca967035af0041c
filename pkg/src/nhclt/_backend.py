"""Selects the compiled kernels when available.

Set ``NHCLT_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _pykernels

python_impl = _pykernels
compiled_impl = None

if not os.environ.get("NHCLT_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_impl
    except ImportError:
        compiled_impl = None

impl = compiled_impl if compiled_impl is not None else python_impl
name = "cython" if impl is compiled_impl else "python"

delta_rows = impl.delta_rows
sample_chain = impl.sample_chain
