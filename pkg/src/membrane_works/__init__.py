"""Analysis and simulation toolkit for stressed SiC membrane resonators.

Submodules: ``membrane`` (frequency law, dilution, mode shapes),
``spectral`` (Lorentzian and ring-down fits), ``stress`` (index assignment
and biaxial stress fit), ``stability`` (Allan deviation), ``electromech``
(cavity-mediated two-mode swap simulation), ``io``, ``config`` and ``cli``.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ComputationError,
    MembraneWorksError,
    ParseError,
    ValidationError,
)
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "BACKEND",
    "ComputationError",
    "MembraneWorksError",
    "ParseError",
    "ValidationError",
    "__version__",
]
