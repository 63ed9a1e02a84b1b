"""Numerical laboratory for a coefficient inverse problem of mean field games with nonlocal interaction."""

from .grid import Field, GridSpec
from .instances import Instance, standard_instance
from .kernel import KernelSpec
from .mfg_forward import CipData, MfgCoefficients, MfgSolution, generate_cip_data, picard_solve

__all__ = ["Field", "GridSpec", "Instance", "standard_instance", "KernelSpec", "CipData",
           "MfgCoefficients", "MfgSolution", "generate_cip_data", "picard_solve"]
__version__ = "0.1.0"
