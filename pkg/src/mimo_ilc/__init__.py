"""Frequency-domain design and lifted simulation of multivariable iterative learning control."""

__version__ = "0.1.0"

from . import analysis, casestudy, frf, lti, sim, synthesis  # noqa: E402,F401
from .errors import IlcError  # noqa: E402,F401
