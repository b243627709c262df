"""State of the two-element system, its deterministic flow and the two jump maps.

A state is ``Z = (i, x; j, y)``: ``i``/``j`` are the regime flags of the first
and second element (0 = working, 1 = under repair) and ``x``/``y`` the times
elapsed since each element last changed regime. Between jumps both elapsed
times grow at unit rate; a jump of one element flips its flag and resets its
clock, leaving the other element untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

CSV_COLUMNS = ("i", "x", "j", "y")


@dataclass(frozen=True, slots=True)
class State:
    i: int
    x: float
    j: int
    y: float

    def __post_init__(self) -> None:
        if self.i not in (0, 1) or self.j not in (0, 1):
            raise ValueError(f"regime flags must be 0 or 1, got i={self.i}, j={self.j}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"elapsed times must be finite, got x={self.x}, y={self.y}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"elapsed times must be >= 0, got x={self.x}, y={self.y}")
        object.__setattr__(self, "i", int(self.i))
        object.__setattr__(self, "j", int(self.j))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @property
    def norm(self) -> float:
        """``1 + x + y``, the base of every Lyapunov function in the package."""
        return 1.0 + self.x + self.y

    def as_tuple(self) -> tuple[int, float, int, float]:
        return (self.i, self.x, self.j, self.y)

    def to_dict(self) -> dict:
        return {"i": self.i, "x": self.x, "j": self.j, "y": self.y}

    @classmethod
    def from_dict(cls, data: Mapping) -> "State":
        missing = [k for k in CSV_COLUMNS if k not in data]
        if missing:
            raise KeyError(f"state is missing field(s): {', '.join(missing)}")
        return cls(int(data["i"]), float(data["x"]), int(data["j"]), float(data["y"]))

    @classmethod
    def from_sequence(cls, values: Iterable) -> "State":
        i, x, j, y = values
        return cls(int(i), float(x), int(j), float(y))

    def __add__(self, s: float) -> "State":
        return flow(self, s)


ORIGIN = State(0, 0.0, 0, 0.0)


def flow(z: State, s: float) -> State:
    """Move ``z`` forward by ``s`` time units with no jump: ``(i, x+s; j, y+s)``."""
    if not math.isfinite(s) or s < 0:
        raise ValueError(f"flow duration must be finite and >= 0, got {s!r}")
    return State(z.i, z.x + s, z.j, z.y + s)


def jump_cn(z: State) -> State:
    """Regime change of the first element: flip ``i``, reset ``x``."""
    return State(1 - z.i, 0.0, z.j, z.y)


def jump_nc(z: State) -> State:
    """Regime change of the second element: flip ``j``, reset ``y``."""
    return State(z.i, z.x, 1 - z.j, 0.0)


def jump(z: State, component: int) -> State:
    """Apply the jump of ``component`` (0 = first element, 1 = second)."""
    if component == 0:
        return jump_cn(z)
    if component == 1:
        return jump_nc(z)
    raise ValueError(f"component must be 0 or 1, got {component!r}")
