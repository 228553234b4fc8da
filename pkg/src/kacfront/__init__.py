"""Fronts, nucleation and large-deviation costs for the nonlocal Allen-Cahn (Kac) equation."""
from .errors import (AuditFailure, CenterNotFoundError, ConvergenceError, DimensionError,
                     DomainError, IntegrationError, KacError)
from .grid import Grid1D, Kernel, Profile
from .statics import ModelParams, compute_instanton, free_energy, mean_field_magnetization

__version__ = "0.1.0"
