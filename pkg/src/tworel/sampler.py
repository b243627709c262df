"""Exact simulation of the two-element process.

Two exact samplers produce the next event ``(T, component)`` from a state:

* hazard inversion: solve ``integrated_hazard(T) = E`` for a standard
  exponential ``E`` and pick the component with probability ``lambda/Lambda``
  at the pre-jump state;
* thinning: propose from a homogeneous stream of rate ``2 * Gamma`` and accept
  with probability ``Lambda/(2 Gamma)``. Needs only pointwise evaluation, so
  it is the reference sampler for discontinuous models.

Components are numbered 0 (first element, jump ``cn``) and 1 (second
element, jump ``nc``).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _kernels as K
from .intensity import IntensityModel
from .state import State, jump

METHODS = {"inversion": K.METHOD_INVERSION, "thinning": K.METHOD_THINNING}
DEFAULT_METHOD = "thinning"
MAX_EVENTS = 10**8

PATH_CSV_COLUMNS = (
    "event_index", "time", "component",
    "i_before", "x_before", "j_before", "y_before",
    "i_after", "x_after", "j_after", "y_after",
)


class RunawayError(RuntimeError):
    pass


def method_code(method: str) -> int:
    try:
        return METHODS[method]
    except KeyError:
        raise ValueError(f"unknown sampling method {method!r}; expected one of {sorted(METHODS)}") from None


def _check_seed(seed: int) -> np.uint64:
    """Validate a master seed and return it typed for the kernels."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.uint64(seed)


@dataclass
class RngStream:
    """Random stream number ``stream_index`` derived from a master ``seed``.

    The same (seed, stream_index) pair yields the same sequence everywhere;
    batch routines use stream ``r`` for replication ``r``.
    """

    seed: int
    stream_index: int = 0
    state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        seed = _check_seed(self.seed)
        self.seed = int(seed)
        if self.stream_index < 0:
            raise ValueError("stream_index must be >= 0")
        self.state = K.stream_state(seed, np.uint64(self.stream_index))

    def uniform(self) -> float:
        return float(K.uniform(self.state))

    def exponential(self) -> float:
        return float(K.exponential(self.state))


# ---------------------------------------------------------------- deterministic pieces


def integrated_hazard(model: IntensityModel, z: State, t: float) -> float:
    """Integral of the total rate along the flow from ``z`` over [0, t]."""
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return float(K.hazard(model.arrays, z.i, z.x, z.j, z.y, float(t)))


def invert_hazard(model: IntensityModel, z: State, e: float) -> float:
    """The time at which the integrated hazard from ``z`` reaches ``e``."""
    if not e > 0:
        raise ValueError(f"e must be > 0, got {e}")
    return float(K.invert_hazard(model.arrays, z.i, z.x, z.j, z.y, float(e), math.inf))


# ---------------------------------------------------------------- single events


def sample_event_inversion(model: IntensityModel, z: State, rng: RngStream) -> tuple[float, int]:
    T, c = K.event_inversion(model.arrays, z.i, z.x, z.j, z.y, rng.state, math.inf)
    return float(T), int(c)


def sample_event_thinning(model: IntensityModel, z: State, rng: RngStream) -> tuple[float, int]:
    T, c = K.event_thinning(model.arrays, model.bound, z.i, z.x, z.j, z.y, rng.state, math.inf)
    return float(T), int(c)


def sample_event(model: IntensityModel, z: State, rng: RngStream, method: str = DEFAULT_METHOD):
    if method_code(method) == K.METHOD_INVERSION:
        return sample_event_inversion(model, z, rng)
    return sample_event_thinning(model, z, rng)


def thinning_acceptance(model: IntensityModel, z: State) -> float:
    """Probability that a thinning candidate at ``z`` is accepted."""
    lam, mu = model.rates(z)
    return (lam + mu) / model.bound


# ---------------------------------------------------------------- paths


@dataclass(frozen=True)
class Jump:
    time: float
    component: int
    state_before: State
    state_after: State


@dataclass
class Path:
    initial: State
    times: np.ndarray
    components: np.ndarray
    horizon: float
    rng_seed: int
    stream_index: int
    method: str

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return (
            self.initial == other.initial
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.components, other.components)
            and (self.horizon, self.rng_seed, self.stream_index, self.method)
            == (other.horizon, other.rng_seed, other.stream_index, other.method)
        )

    def iter_jumps(self) -> Iterator[Jump]:
        z = self.initial
        prev = 0.0
        for t, c in zip(self.times.tolist(), self.components.tolist()):
            before = State(z.i, z.x + (t - prev), z.j, z.y + (t - prev))
            after = jump(before, c)
            yield Jump(t, c, before, after)
            z, prev = after, t

    @property
    def jumps(self) -> list[Jump]:
        return list(self.iter_jumps())

    def state_at(self, t: float) -> State:
        """Right-continuous state at time ``t`` in [0, horizon]."""
        if not 0 <= t <= self.horizon:
            raise ValueError(f"t must lie in [0, {self.horizon}]")
        z, prev = self.initial, 0.0
        for jp in self.iter_jumps():
            if jp.time > t:
                break
            z, prev = jp.state_after, jp.time
        return State(z.i, z.x + (t - prev), z.j, z.y + (t - prev))

    def final_state(self) -> State:
        return self.state_at(self.horizon)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PATH_CSV_COLUMNS)
        for k, jp in enumerate(self.iter_jumps()):
            w.writerow([k, repr(jp.time), jp.component, *jp.state_before.as_tuple(), *jp.state_after.as_tuple()])
        return buf.getvalue()


def simulate_path(
    model: IntensityModel,
    z0: State,
    horizon: float,
    rng: RngStream,
    method: str = DEFAULT_METHOD,
    max_events: int = MAX_EVENTS,
) -> Path:
    if not horizon > 0 or not math.isfinite(horizon):
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    times, comps, status = K.simulate_path(
        model.arrays, model.bound, method_code(method), z0.i, z0.x, z0.j, z0.y,
        float(horizon), rng.state, int(max_events),
    )
    if status == K.STATUS_RUNAWAY:
        raise RunawayError(
            f"more than {max_events} events before t={horizon} from {z0}; "
            "the intensities are probably not bounded as declared"
        )
    return Path(z0, times, comps.astype(np.int64), float(horizon), rng.seed, rng.stream_index, method)


# ---------------------------------------------------------------- batches


def first_events(model: IntensityModel, z: State, reps: int, seed: int,
                 method: str = DEFAULT_METHOD, horizon: float = math.inf):
    """First-event times and components of ``reps`` independent replications.

    Replication ``r`` uses stream ``r`` of ``seed``; events after ``horizon``
    are reported as ``(inf, -1)``.
    """
    counts, times, comps = K.batch_events_upto(
        model.arrays, model.bound, method_code(method), z.i, z.x, z.j, z.y,
        float(horizon), 1, int(reps), _check_seed(seed),
    )
    return times[:, 0].copy(), comps[:, 0].astype(np.int64)


def events_upto(model: IntensityModel, z: State, horizon: float, reps: int, seed: int,
                keep: int = 1, method: str = DEFAULT_METHOD):
    """Event counts on [0, horizon] (capped at ``keep + 1``) with the first ``keep`` events."""
    counts, times, comps = K.batch_events_upto(
        model.arrays, model.bound, method_code(method), z.i, z.x, z.j, z.y,
        float(horizon), int(keep), int(reps), _check_seed(seed),
    )
    return counts, times, comps.astype(np.int64)


_MASK = (1 << 64) - 1


def derive_seed(seed: int, salt: int) -> int:
    """Child seed for a sub-experiment, so one master seed drives every stage."""
    z = (int(_check_seed(seed)) + (int(salt) + 1) * 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)
