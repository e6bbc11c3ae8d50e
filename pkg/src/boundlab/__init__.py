"""Penalized convex-loss regression on correlated designs plus the bound lab.

The package has three layers:

* model building blocks: function systems on a fixed design, norms,
  synthetic instances (:mod:`boundlab.design`), covering nets and cell
  partitions (:mod:`boundlab.covering`), randomized sparsification of
  convex combinations (:mod:`boundlab.maurey`);
* the estimator: convex Lipschitz losses with exact population risk and
  margin constants (:mod:`boundlab.losses`), the adaptive l1 penalty and
  its lasso-path solver (:mod:`boundlab.estimator`);
* the verification lab: Rademacher increment suprema and every explicit
  deviation bound (:mod:`boundlab.epl`), oracle-inequality parameters,
  coverage and rate studies (:mod:`boundlab.verify`), batch CLI
  (:mod:`boundlab.cli`).
"""

from boundlab.design import (
    CoefVector,
    FunctionSystem,
    NoiseSpec,
    SyntheticInstance,
    build_tv_system,
    ell1_norm,
    empirical_norm,
    evaluate,
    gram,
    validate_assumption_a,
)
from boundlab.errors import BoundCheckError, ConfigError, ConvergenceError

__version__ = "0.1.0"

__all__ = [
    "BoundCheckError",
    "CoefVector",
    "ConfigError",
    "ConvergenceError",
    "FunctionSystem",
    "NoiseSpec",
    "SyntheticInstance",
    "build_tv_system",
    "ell1_norm",
    "empirical_norm",
    "evaluate",
    "gram",
    "validate_assumption_a",
    "__version__",
]
