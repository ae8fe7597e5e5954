"""Constant mean curvature and sigma_k foliations near the conformal infinity of
asymptotically hyperbolic metrics, on periodic pseudo-spectral grids."""

import os as _os

# FOLIATION_FORGE_THREADS caps BLAS/OpenMP threads; it must be read before numpy loads.
_threads = _os.environ.get("FOLIATION_FORGE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .ambient import KappaPair, MetricExpansion, kappas, model, polynomial, weakly_pe  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .extrinsic import LevelSetOperator, mean_curvature, transform_kappas  # noqa: E402
from .foliation import (audit_foliation, continue_foliation, eigenvalue_speed_check,  # noqa: E402
                        improved_approximation, scan_resonances, solve_leaf)
from .grid import Grid  # noqa: E402
from .hj import characteristics_oracle, extend, locate_level_set  # noqa: E402
from .scenario import load_scenario  # noqa: E402
from .sigma_k import sigma_k, sk_expansion, solve_sigma_k_leaf  # noqa: E402
from .yamabe import normalize_kappa2  # noqa: E402
