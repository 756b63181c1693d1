"""Measurement-induced spin squeezing of an atomic ensemble in an optical cavity.

Solvers:

* :mod:`cavsqueeze.exact_dicke` -- closed-form conditional evolution in the
  Dicke basis and a brute-force master-equation oracle for a few atoms;
* :mod:`cavsqueeze.gaussian` -- covariance (Riccati) propagation, with and
  without spontaneous emission;
* :mod:`cavsqueeze.singlepass` -- the free-space single-pass benchmark.
"""

__version__ = "0.1.0"

from .params import DetectionPort, PhysicalParams, derive_couplings, reference_params  # noqa: E402

__all__ = ["__version__", "DetectionPort", "PhysicalParams", "derive_couplings", "reference_params"]
