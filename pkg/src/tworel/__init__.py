"""Exact simulation and recurrence diagnostics for a two-element reliability process."""

from __future__ import annotations

__version__ = "0.1.0"

from .intensity import IntensityModel, constant_model, equality_model, make_model  # noqa: E402
from .state import ORIGIN, State, flow, jump, jump_cn, jump_nc  # noqa: E402

__all__ = [
    "IntensityModel",
    "ORIGIN",
    "State",
    "__version__",
    "constant_model",
    "equality_model",
    "flow",
    "jump",
    "jump_cn",
    "jump_nc",
    "make_model",
]
