"""
torus_sleuth: numerical KAM diagnostics for degenerate
action-angle-angle maps and the periodically forced swirling Hill's
vortex.
"""
__version__ = "0.1.0"

from .core import AAAMapSpec, AngleActionState, Drift, HillFlowSpec, TrigField
from .errors import TorusSleuthError

__all__ = ["AAAMapSpec", "AngleActionState", "Drift", "HillFlowSpec", "TrigField",
           "TorusSleuthError", "__version__"]
