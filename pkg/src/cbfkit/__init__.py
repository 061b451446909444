"""Sum-of-squares verification and synthesis of control barrier functions."""

from .cbf import HocbfChain, Outcome, SafeRegion, Verdict, VerifyOptions, verify_cbf, verify_hocbf
from .poly import ControlSystem, Polynomial, parse

__all__ = [
    "ControlSystem",
    "HocbfChain",
    "Outcome",
    "Polynomial",
    "SafeRegion",
    "Verdict",
    "VerifyOptions",
    "parse",
    "verify_cbf",
    "verify_hocbf",
]

__version__ = "0.1.0"
