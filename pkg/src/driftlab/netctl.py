"""Scalar unstable plant stabilized over an i.i.d. erasure channel with an
adaptive uniform ("zoom") quantizer.

The plant is x_{t+1} = a x_t + b u_t + w_t with |a| >= 1, b != 0 and Gaussian
noise.  The encoder quantizes x into K bins of width Delta and transmits the
bin index (or an overflow symbol) through a channel that erases with
probability 1 - p.  The controller applies u = -(a/b) xhat and both sides
update the bin size: shrink by alpha after a successful in-range
transmission (down to a floor L), expand by |a| + delta_zoom on overflow or
erasure.  The pair (x_t, Delta_t) is the Markov chain under study; the
stopping times of interest are the successful transmissions while in the
granular region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import stats
from .chains import TransitionKernel


@dataclass(frozen=True)
class PlantParams:
    """Open-loop unstable controllable scalar plant."""

    a: float
    b: float
    noise_std: float

    def __post_init__(self):
        if abs(self.a) < 1:
            raise ValueError(f"|a| >= 1 required (open-loop unstable), got {self.a}")
        if self.b == 0:
            raise ValueError("b must be nonzero (controllable)")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")


@dataclass(frozen=True)
class CoderParams:
    """Adaptive quantizer and channel parameters.

    The zoom factors must satisfy |a| 2^{-R'} < alpha < 1 and
    alpha (|a| + delta_zoom)^{1/p - 1} < 1; both involve the plant gain, so
    they are enforced by validate_params at pairing time.
    """

    K: int
    Delta0: float
    alpha: float
    delta_zoom: float
    L: float
    p: float

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K >= 2 required, got {self.K}")
        if not self.Delta0 > 0:
            raise ValueError("Delta0 must be > 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.delta_zoom > 0:
            raise ValueError("delta_zoom must be > 0")
        if not self.L > 0:
            raise ValueError("L must be > 0")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")


def validate_params(plant: PlantParams, coder: CoderParams) -> None:
    """Joint zoom constraints linking plant gain, rate, and channel."""
    r_prime = math.log2(coder.K)
    if not abs(plant.a) * 2.0 ** (-r_prime) < coder.alpha:
        raise ValueError(f"alpha too small: need alpha > |a|/K = {abs(plant.a) / coder.K}")
    grow = (abs(plant.a) + coder.delta_zoom) ** (1.0 / coder.p - 1.0)
    if not coder.alpha * grow < 1.0:
        raise ValueError(
            f"zoom-out dominates zoom-in: alpha (|a|+delta)^(1/p-1) = {coder.alpha * grow}")


FOLD_LIMIT = 400  # counters fold into the base before float pow can overflow


@dataclass(frozen=True)
class NetState:
    """Plant state, bin size, and time.

    The bin size is materialized from counters (Delta0 times alpha^zoom_in
    times (|a|+delta)^zoom_out) so each step's ratio is one of
    {alpha, 1, |a|+delta} exactly despite floating point.  Counters fold into
    Delta0 every FOLD_LIMIT applications; the value is preserved to one
    rounding and the per-step ratio stays exact within each fold epoch.
    """

    x: float
    Delta0: float
    zoom_in: int = 0
    zoom_out: int = 0
    t: int = 0

    @property
    def Delta(self) -> float:
        return self.Delta0 * self._alpha ** self.zoom_in * self._zfactor ** self.zoom_out

    # set by make_state so Delta materialization knows the factors
    _alpha: float = 0.7
    _zfactor: float = 2.1

    def bumped(self, x_next: float, d_in: int, d_out: int) -> "NetState":
        zi, zo = self.zoom_in + d_in, self.zoom_out + d_out
        d0 = self.Delta0
        if max(zi, zo) >= FOLD_LIMIT:
            d0 = d0 * self._alpha ** zi * self._zfactor ** zo
            zi = zo = 0
        return NetState(x_next, d0, zi, zo, self.t + 1, self._alpha, self._zfactor)

    def __repr__(self):
        return f"NetState(x={self.x:.6g}, Delta={self.Delta:.6g}, t={self.t})"


def make_state(x: float, Delta: float, plant: PlantParams, coder: CoderParams,
               t: int = 0) -> NetState:
    """State with the given bin size as the counter origin."""
    return NetState(x=float(x), Delta0=float(Delta), zoom_in=0, zoom_out=0, t=int(t),
                    _alpha=coder.alpha, _zfactor=abs(plant.a) + coder.delta_zoom)


def rate_variables(K: int) -> dict:
    """Transmission rate R = log2(K+1) and granular rate R' = log2 K."""
    if K < 2:
        raise ValueError("K >= 2 required")
    return {"R": math.log2(K + 1), "Rprime": math.log2(K)}


def quantize(x: float, K: int, Delta: float) -> float:
    """Uniform K-bin quantizer on [-K Delta/2, K Delta/2].

    Bin k covers [(k-1-K/2) Delta, (k-K/2) Delta) and reproduces its center
    (k-(K+1)/2) Delta; the right edge belongs to the top bin; anything
    outside the granular region maps to the overflow value 0.
    """
    if not math.isfinite(x):
        raise ValueError(f"non-finite quantizer input {x}")
    if K < 2:
        raise ValueError("K >= 2 required")
    if not Delta > 0:
        raise ValueError("Delta must be > 0")
    half_range = K * Delta / 2.0
    if x == half_range:
        return (K - 1) / 2.0 * Delta
    if x < -half_range or x > half_range:
        return 0.0
    k = int(math.floor(x / Delta + K / 2.0)) + 1
    k = min(max(k, 1), K)
    return (k - (K + 1) / 2.0) * Delta


def zoom_ratio(Delta: float, h_abs: float, success: int, plant: PlantParams,
               coder: CoderParams) -> float:
    """Bin-size update factor: expand on overflow or erasure, shrink on a
    granular success above the floor L, hold at or below the floor."""
    if not Delta > 0:
        raise ValueError("Delta must be > 0")
    if h_abs > 1.0 or success == 0:
        return abs(plant.a) + coder.delta_zoom
    if Delta > coder.L:
        return coder.alpha
    return 1.0


OVERFLOW_SYMBOL = -1


def step(state: NetState, plant: PlantParams, coder: CoderParams, rng,
         upsilon: int | None = None, w: float | None = None):
    """One closed-loop transition; returns (next_state, event record).

    The channel succeeds with probability p (upsilon and the noise draw can
    be injected for exact replay).  The overflow predicate |x| > K Delta / 2
    is the single source of truth shared with the quantizer, so the bin-size
    tag always matches the transmitted symbol.  The record carries what the
    receiver can see: the channel output symbol, plus the success/overflow
    flags a non-erased symbol lets it deduce.
    """
    K = coder.K
    Delta = state.Delta
    if upsilon is None:
        upsilon = int(rng.random() < coder.p)
    if w is None:
        w = rng.normal(0.0, plant.noise_std)
    half = K * Delta / 2.0
    overflow = abs(state.x) > half
    h = 2.0 * state.x / (K * Delta)
    q_value = quantize(state.x, K, Delta)
    if overflow:
        symbol = OVERFLOW_SYMBOL
    elif state.x == half:
        symbol = K
    else:
        symbol = min(max(int(math.floor(state.x / Delta + K / 2.0)) + 1, 1), K)
    q_prime = symbol if upsilon else None
    xhat = q_value if upsilon else 0.0
    u = -(plant.a / plant.b) * xhat
    x_next = plant.a * state.x + plant.b * u + w
    granular_success = bool(upsilon) and not overflow
    if not granular_success:
        nxt = state.bumped(x_next, 0, 1)
        tag = "expand"
    elif Delta > coder.L:
        nxt = state.bumped(x_next, 1, 0)
        tag = "shrink"
    else:
        nxt = state.bumped(x_next, 0, 0)
        tag = "hold"
    record = {
        "t": state.t, "x": state.x, "Delta": Delta, "Upsilon": int(upsilon),
        "overflow": bool(overflow), "u": u, "q_prime": q_prime, "h": h,
        "granular_success": granular_success, "ratio_tag": tag,
    }
    return nxt, record


def receiver_view(record: dict) -> dict:
    """What the controller can deduce from the channel output alone: a
    non-erased symbol reveals both the success and the overflow event."""
    q_prime = record["q_prime"]
    if q_prime is None:
        return {"upsilon_known": False, "upsilon": 0, "overflow": None}
    return {"upsilon_known": True, "upsilon": 1, "overflow": q_prime == OVERFLOW_SYMBOL}


class NetControlKernel(TransitionKernel):
    """Transition kernel over NetState, so the generic chain machinery
    (simulation, stopping policies, drift checkers) applies directly.

    first_step_success forces the t = 0 transmission to succeed, which
    realizes conditioning on being at a granular-success stopping time; use
    it for sampled-drift experiments, not for open-loop statistics.
    """

    def __init__(self, plant: PlantParams, coder: CoderParams,
                 first_step_success: bool = False):
        validate_params(plant, coder)
        self.plant = plant
        self.coder = coder
        self.first_step_success = first_step_success
        self.kernel_id = (f"netctl(a={plant.a},b={plant.b},K={coder.K},p={coder.p},"
                          f"alpha={coder.alpha},dz={coder.delta_zoom},L={coder.L},"
                          f"sigma={plant.noise_std},forced={int(first_step_success)})")
        self.state_space = ("continuous", 2)

    def sample_with_record(self, state: NetState, rng):
        forced = 1 if (self.first_step_success and state.t == 0) else None
        return step(state, self.plant, self.coder, rng, upsilon=forced)

    def sample(self, state, rng):
        return self.sample_with_record(state, rng)[0]

    def valid_state(self, state) -> bool:
        return isinstance(state, NetState) and state.Delta > 0

    def state_columns(self):
        return ["x", "Delta"]

    def state_to_row(self, state):
        return [state.x, state.Delta]


def as_kernel(plant: PlantParams, coder: CoderParams,
              first_step_success: bool = False) -> NetControlKernel:
    return NetControlKernel(plant, coder, first_step_success)


class GranularSuccessPolicy:
    """Stopping times at the successful granular transmissions.

    These times are measurable in the step records (the success indicator is
    channel randomness, not a state function), so the policy reads records
    rather than states; T_0 = 0 and qualifying times start at 1.
    """

    kind = "record"

    def record_qualifies(self, record) -> bool:
        return bool(record["granular_success"])

    def times(self, traj, rng=None):
        if traj.records is None:
            raise ValueError("trajectory carries no step records")
        times = granular_success_times(traj.records)
        truncated = True  # the next success always lies beyond the horizon
        return times, truncated


def granular_success_times(events) -> list[int]:
    """T_0 = 0 plus the times t >= 1 whose step was a granular success."""
    out = [0]
    for t, rec in enumerate(events):
        if t >= 1 and rec["granular_success"]:
            out.append(t)
    return out


def stability_margin(a, p, R) -> float:
    """a^2 (1 - p + p / (2^R - 1)^2); below 1 means the rate/reliability pair
    can support a finite second moment.

    Computed in exact rational arithmetic on the decimal values of the inputs
    (integer R), so margins like 0.8 come out exactly.
    """
    try:
        a_f = Fraction(str(a))
        p_f = Fraction(str(p))
        R_int = int(R)
        if R_int != R or R_int <= 0:
            raise ValueError
        denom = (Fraction(2) ** R_int - 1) ** 2
        return float(a_f * a_f * (1 - p_f + p_f / denom))
    except (ValueError, ZeroDivisionError):
        return float(a) ** 2 * (1.0 - float(p) + float(p) / (2.0 ** float(R) - 1.0) ** 2)


def epsilon_budget(coder: CoderParams, a: float) -> float:
    """Largest admissible drift gap for V = Delta^2 at the success times:
    epsilon < 1 - p alpha^2 / (1 - (1-p)(|a| + delta)^2).

    Requires (1-p)(|a|+delta)^2 < 1, otherwise zoom-out growth during
    erasures dominates and the budget is undefined.
    """
    growth = (1.0 - coder.p) * (abs(a) + coder.delta_zoom) ** 2
    if growth >= 1.0:
        raise ValueError(f"zoom-out dominates erasures: (1-p)(|a|+delta)^2 = {growth} >= 1")
    return 1.0 - coder.p * coder.alpha ** 2 / (1.0 - growth)


def drift_ratio_of_intertime(plant: PlantParams, coder: CoderParams):
    """Exact V-ratio of one success-to-success block as a function of its
    length: every non-qualifying step expands Delta by |a|+delta and the
    qualifying step shrinks it by alpha (above the floor), so
    V(end)/V(start) = (alpha (|a|+delta)^(k-1))^2 off the small set."""
    z = abs(plant.a) + coder.delta_zoom

    def ratio(k: int) -> float:
        return (coder.alpha * z ** (k - 1)) ** 2

    return ratio


def batch_run(plant: PlantParams, coder: CoderParams, n_traj: int, horizon: int,
              seed: int, x0_sampler=None, Delta_init: float | None = None) -> dict:
    """Vectorized closed-loop run of n_traj independent trajectories.

    Returns per-step arrays needed by the stability experiments: the x and
    Delta paths, the granular-success flags, and per-trajectory stopping
    times.  Randomness is a single stream keyed by the seed; trajectories
    are coupled only through vectorization, not through shared draws.
    """
    validate_params(plant, coder)
    from .streams import stream
    rng = stream(seed, 0xB0)
    D0 = coder.Delta0 if Delta_init is None else float(Delta_init)
    if x0_sampler is None:
        x = rng.normal(0.0, 1.0, n_traj)
    else:
        x = np.asarray(x0_sampler(rng, n_traj), dtype=float)
    Delta = np.full(n_traj, D0)
    a, b, sig = plant.a, plant.b, plant.noise_std
    K, alpha, L, p = coder.K, coder.alpha, coder.L, coder.p
    z = abs(a) + coder.delta_zoom
    xs = np.empty((horizon + 1, n_traj))
    Ds = np.empty((horizon + 1, n_traj))
    flags = np.zeros((horizon, n_traj), dtype=bool)
    xs[0] = x
    Ds[0] = Delta
    for t in range(horizon):
        ups = rng.random(n_traj) < p
        w = rng.normal(0.0, sig, n_traj)
        half = K * Delta / 2.0
        overflow = np.abs(x) > half
        k_idx = np.clip(np.floor(x / Delta + K / 2.0).astype(np.int64) + 1, 1, K)
        q_val = (k_idx - (K + 1) / 2.0) * Delta
        q_val = np.where(x == half, (K - 1) / 2.0 * Delta, q_val)
        q_val = np.where(overflow, 0.0, q_val)
        xhat = np.where(ups, q_val, 0.0)
        x = a * x - a * xhat + w
        success = ups & ~overflow
        ratio = np.where(~success, z, np.where(Delta > L, alpha, 1.0))
        Delta = Delta * ratio
        flags[t] = success
        xs[t + 1] = x
        Ds[t + 1] = Delta
    return {"x": xs, "Delta": Ds, "granular_success": flags,
            "n_traj": n_traj, "horizon": horizon, "seed": seed}


def intertime_table(run: dict) -> dict:
    """Stopping-time blocks pooled over a batch run.

    Returns arrays delta_at_start (Delta at T_i) and dt (T_{i+1} - T_i) over
    all complete blocks of all trajectories, T_0 = 0 included.
    """
    flags = run["granular_success"]
    Ds = run["Delta"]
    horizon, n_traj = flags.shape
    delta_at, dts = [], []
    for j in range(n_traj):
        times = np.flatnonzero(flags[1:, j]) + 1  # qualifying times start at 1
        prev = 0
        for t in times:
            delta_at.append(Ds[prev, j])
            dts.append(t - prev)
            prev = int(t)
    return {"delta_at_start": np.asarray(delta_at), "dt": np.asarray(dts, dtype=int)}


def verify_intertime_tails(table: dict, p: float, delta_edges, k_max: int = 10,
                           k_ratio: int = 5) -> dict:
    """Tail comparison of the block lengths against the erasure geometric law.

    Lower bound (hard): P(dT >= k) >= (1-p)^(k-1) - 3 sigma for k <= k_max in
    every Delta group.  Upper trend: the ratio to (1-p)^(k-1) must fall
    inside [1 - 3 sigma_rel, 1.2 + 3 sigma_rel] for k <= k_ratio in the
    largest-Delta group, and the worst ratio deviation must not grow as the
    groups get coarser (the overflow correction vanishes for large bins; MC
    bands soften both sides).
    """
    d0 = np.asarray(table["delta_at_start"], dtype=float)
    dt = np.asarray(table["dt"], dtype=int)
    edges = list(delta_edges) + [np.inf]
    groups = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (d0 >= lo) & (d0 < hi)
        if m.sum() == 0:
            continue
        sub = dt[m]
        n = sub.size
        rows = []
        for k in range(1, k_max + 1):
            tail = float(np.mean(sub >= k))
            ref = (1.0 - p) ** (k - 1)
            sigma = stats.adjusted_sigma(int(np.sum(sub >= k)), n)
            rows.append({"k": k, "tail": tail, "ref": ref, "sigma": sigma,
                         "lower_ok": tail >= ref - 3.0 * sigma,
                         "ratio": tail / ref})
        groups.append({"delta_lo": float(lo), "delta_hi": float(hi), "n": int(n),
                       "rows": rows})
    lower_ok = all(r["lower_ok"] for g in groups for r in g["rows"])
    top = groups[-1] if groups else None
    ratio_ok = False
    trend_ok = True
    if top is not None:
        ratio_ok = True
        for r in top["rows"][:k_ratio]:
            srel = 3.0 * r["sigma"] / r["ref"]
            if not (1.0 - srel <= r["ratio"] <= 1.2 + srel):
                ratio_ok = False
        devs = []
        for g in groups:
            n_keep = min(k_ratio, len(g["rows"]))
            devs.append(max(abs(r["ratio"] - 1.0) - 3.0 * r["sigma"] / r["ref"]
                            for r in g["rows"][:n_keep]))
        # softened deviations should not increase with Delta (later groups larger)
        trend_ok = all(b <= a + 0.05 for a, b in zip(devs[:-1], devs[1:])) or devs[-1] <= 0.2
    return {"groups": groups, "lower_ok": bool(lower_ok), "ratio_ok": bool(ratio_ok),
            "trend_ok": bool(trend_ok),
            "passes": bool(lower_ok and ratio_ok)}
