"""afosim: deterministic simulation of asynchronous multi-agent feedback
optimization on time-varying quadratic objectives, plus evaluation of the
associated convergence/tracking constants and bound checks against traces."""

from afosim.blocks import BlockLayout, BoxSet, OutputMap, diameter, project_box, spectral_norm

__all__ = [
    "BlockLayout",
    "BoxSet",
    "OutputMap",
    "diameter",
    "project_box",
    "spectral_norm",
]

__version__ = "0.1.0"
