"""Transition kernels, stopping-time policies, and trajectory simulation.

Kernels are immutable; all randomness flows through generators derived from
(seed, index) keys, so batches are reproducible and order-independent.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .streams import stream


class TransitionKernel:
    """Base sampler contract: sample(state, rng) -> next state.

    Subclasses set `kernel_id` and `state_space`; finite kernels additionally
    expose the row-stochastic `matrix`.  Kernels producing per-step event
    records implement sample_with_record(state, rng) -> (state, record).
    """

    kernel_id: str = "kernel"
    state_space: tuple = ("custom",)
    matrix = None

    def sample(self, state, rng):
        raise NotImplementedError

    def valid_state(self, state) -> bool:
        return True

    def state_to_row(self, state) -> list:
        """Columnar representation for CSV export."""
        if isinstance(state, (int, np.integer)):
            return [int(state)]
        arr = np.atleast_1d(np.asarray(state, dtype=float))
        return [float(v) for v in arr]

    def state_columns(self) -> list[str]:
        return ["state"]


class FiniteKernel(TransitionKernel):
    """Finite chain with explicit row-stochastic matrix."""

    def __init__(self, matrix, labels=None, kernel_id=None):
        P = np.asarray(matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("matrix must be square")
        if np.any(P < 0):
            raise ValueError("matrix entries must be >= 0")
        rowsums = P.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > 1e-12):
            bad = int(np.argmax(np.abs(rowsums - 1.0)))
            raise ValueError(f"row {bad} sums to {rowsums[bad]!r}, not 1")
        self.matrix = P
        self.n_states = P.shape[0]
        self.labels = list(labels) if labels is not None else [str(i) for i in range(self.n_states)]
        self._cdf = np.cumsum(P, axis=1)
        self._cdf[:, -1] = 1.0
        self.kernel_id = kernel_id or f"finite{self.n_states}"
        self.state_space = ("finite", self.n_states)

    def sample(self, state, rng):
        u = rng.random()
        return int(np.searchsorted(self._cdf[int(state)], u, side="right"))

    def sample_batch(self, states, rng):
        """Vectorized one-step transition for an int array of states."""
        states = np.asarray(states)
        u = rng.random(states.shape[0])
        nxt = np.empty(states.shape[0], dtype=np.int64)
        for s in np.unique(states):
            mask = states == s
            nxt[mask] = np.searchsorted(self._cdf[int(s)], u[mask], side="right")
        return nxt

    def valid_state(self, state) -> bool:
        return isinstance(state, (int, np.integer)) and 0 <= int(state) < self.n_states


class FunctionKernel(TransitionKernel):
    """Kernel defined by an arbitrary sampler function; no exact rows."""

    def __init__(self, fn: Callable, kernel_id: str = "function", state_space=("custom",),
                 valid=None, columns=None, to_row=None):
        self._fn = fn
        self.kernel_id = kernel_id
        self.state_space = state_space
        self._valid = valid
        self._columns = columns
        self._to_row = to_row

    def sample(self, state, rng):
        return self._fn(state, rng)

    def valid_state(self, state) -> bool:
        return True if self._valid is None else bool(self._valid(state))

    def state_columns(self):
        return self._columns or super().state_columns()

    def state_to_row(self, state):
        if self._to_row is not None:
            return self._to_row(state)
        return super().state_to_row(state)


@dataclass(frozen=True)
class Trajectory:
    """Simulated path plus optional stopping-time annotation.

    stopping_times always starts at 0 and is strictly increasing; `truncated`
    flags that the policy had a next time beyond the horizon (censoring).
    """

    states: tuple
    seed: int
    kernel_id: str
    stopping_times: tuple | None = None
    truncated: bool = False
    records: tuple | None = None

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def with_stopping_times(self, times, truncated: bool) -> "Trajectory":
        times = tuple(int(t) for t in times)
        if not times or times[0] != 0:
            raise ValueError("stopping times must start at T_0 = 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("stopping times must be strictly increasing")
        if times[-1] > self.horizon:
            raise ValueError("stopping time beyond horizon")
        return replace(self, stopping_times=times, truncated=bool(truncated))


def simulate(kernel: TransitionKernel, x0, horizon: int, seed: int) -> Trajectory:
    """Length horizon+1 path from x0; deterministic in (kernel, x0, horizon, seed)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not kernel.valid_state(x0):
        raise ValueError(f"invalid initial state {x0!r} for kernel {kernel.kernel_id}")
    rng = stream(seed)
    states = [x0]
    records = None
    if hasattr(kernel, "sample_with_record"):
        records = []
        x = x0
        for _ in range(horizon):
            x, rec = kernel.sample_with_record(x, rng)
            states.append(x)
            records.append(rec)
        return Trajectory(tuple(states), int(seed), kernel.kernel_id, records=tuple(records))
    x = x0
    for _ in range(horizon):
        x = kernel.sample(x, rng)
        states.append(x)
    return Trajectory(tuple(states), int(seed), kernel.kernel_id)


class StoppingPolicy:
    """Generator of the increasing stopping times T_0 = 0 < T_1 < T_2 < ...

    kinds: 'deterministic' (T_{k+1} = T_k + n(x_{T_k})), 'independent'
    (renewal inter-times drawn independently of the path), 'event'
    (T_{n+1} = first t > T_n with x_t in E_{n+1}).
    """

    def __init__(self, kind, n_of_state=None, renewal=None, event_sets=None):
        if kind not in ("deterministic", "independent", "event"):
            raise ValueError(f"unknown policy kind {kind!r}")
        self.kind = kind
        self.n_of_state = n_of_state
        self.renewal = renewal
        self.event_sets = event_sets

    @staticmethod
    def deterministic(n_of_state: Callable) -> "StoppingPolicy":
        return StoppingPolicy("deterministic", n_of_state=n_of_state)

    @staticmethod
    def independent(renewal: Callable) -> "StoppingPolicy":
        """renewal(rng) -> positive integer inter-time."""
        return StoppingPolicy("independent", renewal=renewal)

    @staticmethod
    def event_triggered(event_sets) -> "StoppingPolicy":
        """event_sets: state predicate, or n -> predicate for varying targets E_n."""
        return StoppingPolicy("event", event_sets=event_sets)

    def _event_set(self, n):
        es = self.event_sets
        try:
            candidate = es(n)
        except TypeError:
            return es
        if callable(candidate):
            return candidate
        return es

    def times(self, traj: Trajectory, rng=None) -> tuple[list[int], bool]:
        """Stopping times within the trajectory horizon plus a truncation flag."""
        H = traj.horizon
        out = [0]
        if self.kind == "deterministic":
            t = 0
            while True:
                step = int(self.n_of_state(traj.states[t]))
                if step < 1:
                    raise ValueError("deterministic policy must return n(x) >= 1")
                if t + step > H:
                    return out, True
                t += step
                out.append(t)
        elif self.kind == "independent":
            if rng is None:
                raise ValueError("independent policy needs a generator for renewal draws")
            t = 0
            while True:
                step = int(self.renewal(rng))
                if step < 1:
                    raise ValueError("renewal draws must be >= 1")
                if t + step > H:
                    return out, True
                t += step
                out.append(t)
        else:
            t = 0
            n = 0
            while True:
                member = self._event_set(n + 1)
                nxt = None
                for s in range(t + 1, H + 1):
                    if member(traj.states[s]):
                        nxt = s
                        break
                if nxt is None:
                    return out, True
                out.append(nxt)
                t, n = nxt, n + 1


def annotate_stopping_times(traj: Trajectory, policy, seed: int) -> Trajectory:
    """Attach the policy's stopping times to the trajectory.

    The seed drives renewal draws for independent policies; deterministic and
    event-triggered policies read only the path.
    """
    rng = stream(seed, 0x570)
    times, truncated = policy.times(traj, rng)
    return traj.with_stopping_times(times, truncated)


def hitting_time(traj: Trajectory, member: Callable) -> int | None:
    """Smallest t >= 1 with x_t in the set, or None within this horizon."""
    for t in range(1, traj.horizon + 1):
        if member(traj.states[t]):
            return t
    return None


def sampled_path(traj: Trajectory) -> list:
    """States observed at the stopping times."""
    if traj.stopping_times is None:
        raise ValueError("trajectory has no stopping-time annotation")
    return [traj.states[t] for t in traj.stopping_times]


def sampled_hitting_index(traj: Trajectory, member: Callable) -> int | None:
    """First n > 0 with x_{T_n} in the set (hitting time of the sampled chain)."""
    path = sampled_path(traj)
    for n in range(1, len(path)):
        if member(path[n]):
            return n
    return None


def trajectory_csv(traj: Trajectory, kernel: TransitionKernel) -> str:
    """Columnar export: t, state components..., is_stopping_time."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = kernel.state_columns()
    w.writerow(["t", *cols, "is_stopping_time"])
    stop = set(traj.stopping_times or ())
    for t, s in enumerate(traj.states):
        w.writerow([t, *[repr(v) if isinstance(v, float) else v for v in kernel.state_to_row(s)],
                    int(t in stop)])
    return buf.getvalue()
