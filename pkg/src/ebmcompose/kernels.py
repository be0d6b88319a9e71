"""Backend selection for the chain kernels.

Imports the compiled extension when present, otherwise the pure-Python
mirror.  Set EBMCOMPOSE_FORCE_PYTHON=1 to force the fallback (used by the
benchmark and the cross-backend tests).
"""

from __future__ import annotations

import os

if os.environ.get("EBMCOMPOSE_FORCE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND

gmm_langevin_chain = _impl.gmm_langevin_chain
gmm_mala_chain = _impl.gmm_mala_chain
gmm_hmc_chain = _impl.gmm_hmc_chain
tab_mh_chain = _impl.tab_mh_chain
tab_gibbs_chain = _impl.tab_gibbs_chain
