"""Single-view novel view synthesis with Gaussian queries in a deformable decoder."""

import os as _os

# numba sizes its pool at import; leave room for explicit --threads requests
_os.environ.setdefault(
    "NUMBA_NUM_THREADS",
    str(max(_os.cpu_count() or 1, int(_os.environ.get("LEANSPLAT_THREADS") or 0), 8)),
)
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
