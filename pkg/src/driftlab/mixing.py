"""Empirical convergence machinery: split-chain coupling bounds, direct
distance estimation, decay-curve fitting, and law-of-large-numbers checks.

Distances follow the package-wide f-norm convention (total absolute mass),
so the coupling probability P(x_n != x'_n) is reported doubled; in that
convention the coupled bound dominates the exact distance.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .finite import FiniteChain, MinorizationWitness, stationary
from .streams import stream


@dataclass(frozen=True)
class CouplingRun:
    """One coupled pair: marginally faithful paths that merge on a joint
    regeneration draw whenever both sit in the small set."""

    witness: MinorizationWitness
    path_x: tuple
    path_y: tuple
    coupling_time: int | None
    seed: int


@dataclass
class DecayCurve:
    """Distance-versus-n curve, exact or estimated with confidence bands."""

    n: list
    distance: list
    ci_lo: list
    ci_hi: list
    exact: bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(d < 0 for d in self.distance):
            raise ValueError("distances must be non-negative")
        if self.exact:
            diffs = np.diff(np.asarray(self.distance))
            if np.any(diffs > 1e-9 * np.maximum(1.0, np.asarray(self.distance[:-1]))):
                raise ValueError("exact finite-chain curves must be non-increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "distance", "ci_lo", "ci_hi", "exact_flag"])
        for row in zip(self.n, self.distance, self.ci_lo, self.ci_hi):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])),
                        repr(float(row[3])), int(self.exact)])
        return buf.getvalue()


def exact_tv_curve(chain: FiniteChain, x: int, n_max: int, f=None) -> DecayCurve:
    """Exact f-norm distance curve from matrix powers."""
    pi = stationary(chain)
    fvec = np.ones(chain.n) if f is None else np.asarray(f, dtype=float)
    row = np.zeros(chain.n)
    row[int(x)] = 1.0
    dist = []
    cur = row.copy()
    for n in range(n_max + 1):
        dist.append(float(np.sum(fvec * np.abs(cur - pi))))
        cur = cur @ chain.matrix
    ns = list(range(n_max + 1))
    return DecayCurve(ns, dist, list(dist), list(dist), exact=True,
                      meta={"chain_n": chain.n, "x": int(x)})


def stationary_sampler(chain: FiniteChain):
    """y0 sampler drawing from the exact stationary law."""
    pi = stationary(chain)
    cdf = np.cumsum(pi)
    cdf[-1] = 1.0

    def draw(rng, size):
        return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int64)

    return draw


def coupled_tv_bound(chain: FiniteChain, witness: MinorizationWitness, x0: int,
                     y0_sampler, n_max: int, n_pairs: int, seed: int) -> dict:
    """Coupling upper bound on the distance to stationarity, per n.

    Both chains evolve marginally by P; whenever both are inside the witness
    set, with probability epsilon both regenerate from nu and stay merged,
    otherwise each moves by the residual kernel (P - eps nu)/(1 - eps)
    independently.  The reported bound is 2 P(x_n != x'_n) (f-norm units)
    with adjusted-Wald bands; only single-step minorizations are supported.
    """
    if witness.n0 != 1:
        raise ValueError("only 1-step minorization coupling is supported; "
                         f"got n0 = {witness.n0} (multi-step splitting is out of scope)")
    P = chain.matrix
    n = chain.n
    eps = witness.epsilon
    nu = witness.nu
    in_C = np.zeros(n, dtype=bool)
    in_C[list(witness.C)] = True
    resid = P.copy()
    resid[list(witness.C), :] = (P[list(witness.C), :] - eps * nu) / (1.0 - eps) \
        if eps < 1.0 else nu
    if np.any(resid < -1e-12):
        raise ValueError("residual kernel has negative mass; witness is invalid")
    resid = np.clip(resid, 0.0, None)
    resid /= resid.sum(axis=1, keepdims=True)
    cdf_P = np.cumsum(P, axis=1)
    cdf_P[:, -1] = 1.0
    cdf_R = np.cumsum(resid, axis=1)
    cdf_R[:, -1] = 1.0
    cdf_nu = np.cumsum(nu)
    cdf_nu[-1] = 1.0

    rng = stream(seed, 0xC0)
    X = np.full(n_pairs, int(x0), dtype=np.int64)
    Y = np.asarray(y0_sampler(rng, n_pairs), dtype=np.int64)
    merged = X == Y
    diff_count = [int(np.sum(~merged))]

    def rows_draw(cdf, states, u):
        out = np.empty(states.shape[0], dtype=np.int64)
        for s in np.unique(states):
            m = states == s
            out[m] = np.searchsorted(cdf[int(s)], u[m], side="right")
        return out

    for _ in range(n_max):
        u_coin = rng.random(n_pairs)
        u_x = rng.random(n_pairs)
        u_y = rng.random(n_pairs)
        both_C = in_C[X] & in_C[Y] & ~merged
        regen = both_C & (u_coin < eps)
        stay = merged
        nxt_X = np.empty(n_pairs, dtype=np.int64)
        nxt_Y = np.empty(n_pairs, dtype=np.int64)
        if np.any(stay):
            common = rows_draw(cdf_P, X[stay], u_x[stay])
            nxt_X[stay] = common
            nxt_Y[stay] = common
        if np.any(regen):
            drawn = np.searchsorted(cdf_nu, u_x[regen], side="right")
            nxt_X[regen] = drawn
            nxt_Y[regen] = drawn
        free = ~stay & ~regen
        if np.any(free):
            res_pair = both_C & free
            ind_pair = free & ~both_C
            if np.any(res_pair):
                nxt_X[res_pair] = rows_draw(cdf_R, X[res_pair], u_x[res_pair])
                nxt_Y[res_pair] = rows_draw(cdf_R, Y[res_pair], u_y[res_pair])
            if np.any(ind_pair):
                nxt_X[ind_pair] = rows_draw(cdf_P, X[ind_pair], u_x[ind_pair])
                nxt_Y[ind_pair] = rows_draw(cdf_P, Y[ind_pair], u_y[ind_pair])
        X, Y = nxt_X, nxt_Y
        merged = merged | regen
        diff_count.append(int(np.sum(~merged)))

    ns = list(range(n_max + 1))
    bound, lo, hi, sigma = [], [], [], []
    for k in diff_count:
        p_hat = k / n_pairs
        s = stats.adjusted_sigma(k, n_pairs)
        bound.append(2.0 * p_hat)
        sigma.append(2.0 * s)
        lo.append(max(0.0, 2.0 * (p_hat - 1.959963984540054 * s)))
        hi.append(min(2.0, 2.0 * (p_hat + 1.959963984540054 * s)))
    return {"n": ns, "bound": bound, "ci_lo": lo, "ci_hi": hi, "sigma": sigma,
            "n_pairs": n_pairs, "censored_fraction": diff_count[-1] / n_pairs,
            "convention": "f_norm (2 * P(x_n != y_n))"}


def couple_pair(chain: FiniteChain, witness: MinorizationWitness, x0: int, y0: int,
                n_max: int, seed: int) -> CouplingRun:
    """Single coupled pair, for inspection; same schedule as the batch bound."""
    P = chain.matrix
    eps, nu = witness.epsilon, witness.nu
    in_C = set(witness.C)
    rng = stream(seed, 0xC1)
    xs, ys = [int(x0)], [int(y0)]
    tau = None if x0 != y0 else 0
    for t in range(n_max):
        x, y = xs[-1], ys[-1]
        if tau is not None:
            nxt = int(np.searchsorted(np.cumsum(P[x]), rng.random(), side="right"))
            xs.append(nxt)
            ys.append(nxt)
            continue
        if x in in_C and y in in_C and rng.random() < eps:
            nxt = int(np.searchsorted(np.cumsum(nu), rng.random(), side="right"))
            xs.append(nxt)
            ys.append(nxt)
            tau = t + 1
            continue
        for cur, acc in ((x, xs), (y, ys)):
            if cur in in_C and eps < 1.0:
                row = (P[cur] - eps * nu) / (1.0 - eps)
                row = np.clip(row, 0, None)
                row /= row.sum()
            else:
                row = P[cur]
            acc.append(int(np.searchsorted(np.cumsum(row), rng.random(), side="right")))
    return CouplingRun(witness, tuple(xs), tuple(ys), tau, seed)


def empirical_distance(kernel_or_chain, x0, n: int, n_samples: int, partition=None,
                       seed: int = 0, reference=None, bootstrap: int = 200) -> dict:
    """Estimated distance between the time-n law and a reference histogram.

    For finite chains the partition defaults to singletons and the reference
    to the exact stationary law; for general kernels supply a partition
    (state -> cell index, n_cells) and a reference histogram from a burn-in
    run.  Bootstrap bands; cells with expected count below 5 set a
    widened-CI flag (discretization bias is noted, not corrected).
    """
    rng = stream(seed, 0xED)
    if isinstance(kernel_or_chain, FiniteChain):
        chain = kernel_or_chain
        cells = chain.n
        ref = stationary(chain) if reference is None else np.asarray(reference, float)
        cdf = np.cumsum(chain.matrix, axis=1)
        cdf[:, -1] = 1.0
        statesv = np.full(n_samples, int(x0), dtype=np.int64)
        for _ in range(n):
            u = rng.random(n_samples)
            nxt = np.empty(n_samples, dtype=np.int64)
            for s in np.unique(statesv):
                m = statesv == s
                nxt[m] = np.searchsorted(cdf[int(s)], u[m], side="right")
            statesv = nxt
        counts = np.bincount(statesv, minlength=cells).astype(float)
    else:
        if partition is None or reference is None:
            raise ValueError("general kernels need a partition and a reference histogram")
        to_cell, cells = partition
        ref = np.asarray(reference, dtype=float)
        counts = np.zeros(cells)
        from .chains import simulate
        for j in range(n_samples):
            traj = simulate(kernel_or_chain, x0, max(n, 1), seed * 1_000_003 + j)
            counts[to_cell(traj.states[n])] += 1.0
    p_hat = counts / counts.sum()
    tv = float(np.sum(np.abs(p_hat - ref)))
    boots = []
    for _ in range(bootstrap):
        resampled = rng.multinomial(int(counts.sum()), p_hat) / counts.sum()
        boots.append(float(np.sum(np.abs(resampled - ref))))
    lo, hi = np.quantile(boots, [0.025, 0.975])
    under = int(np.sum(counts.sum() * ref < 5.0))
    return {"tv": tv, "ci_lo": float(lo), "ci_hi": float(hi),
            "undersampled_cells": under, "widened_ci": under > 0,
            "note": "histogram distance in f-norm units; discretization bias not corrected"}


def fit_rate(curve: DecayCurve, noise_floor: float = 0.0) -> dict:
    """Least-squares decay fits: geometric on (n, log d) and polynomial on
    (log n, log d); family chosen by R^2.  Points at or below the noise floor
    or with bands crossing zero are excluded; fewer than 8 usable points is
    inconclusive.
    """
    ns = np.asarray(curve.n, dtype=float)
    ds = np.asarray(curve.distance, dtype=float)
    lo = np.asarray(curve.ci_lo, dtype=float)
    usable = (ds > max(noise_floor, 1e-300)) & (curve.exact or (lo > 0))
    usable &= ns >= 1
    if usable.sum() < 8:
        return {"inconclusive": True, "usable_points": int(usable.sum())}
    x_g = ns[usable]
    y = np.log(ds[usable])

    def r2(x, y, coef):
        pred = np.polyval(coef, x)
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    cg = np.polyfit(x_g, y, 1)
    geo = {"rate": float(math.exp(cg[0])), "log_intercept": float(cg[1]),
           "r2": r2(x_g, y, cg)}
    x_p = np.log(ns[usable])
    cp = np.polyfit(x_p, y, 1)
    poly = {"exponent": float(cp[0]), "log_intercept": float(cp[1]),
            "r2": r2(x_p, y, cp)}
    best = "geometric" if geo["r2"] >= poly["r2"] else "polynomial"
    return {"inconclusive": False, "best_family": best,
            "geometric": geo, "polynomial": poly,
            "usable_points": int(usable.sum())}


def lln_check(kernel, g, f, x0, horizon: int, n_reps: int, seed: int = 0,
              probe_states=None) -> dict:
    """Strong-law check: ergodic averages of g across replicates must tighten
    with the horizon and agree within the cross-replicate band.

    The caller asserts sup |g|/f < infinity; a finite-sample ratio over probe
    states is recorded when probes are given.  Report only, never raises.
    """
    ratio = None
    if probe_states is not None:
        ratio = max(abs(g(s)) / f(s) for s in probe_states)
    from .chains import simulate
    half = horizon // 2
    means_full, means_half = [], []
    for j in range(n_reps):
        traj = simulate(kernel, x0, horizon, seed * 7_919 + j)
        vals = np.array([g(s) for s in traj.states], dtype=float)
        means_full.append(float(vals.mean()))
        means_half.append(float(vals[:half + 1].mean()))
    mf = np.asarray(means_full)
    mh = np.asarray(means_half)
    disp_full = float(mf.std(ddof=1)) if n_reps > 1 else float("nan")
    disp_half = float(mh.std(ddof=1)) if n_reps > 1 else float("nan")
    pooled = float(mf.mean())
    se = disp_full / math.sqrt(n_reps) if n_reps > 1 else float("inf")
    agree = bool(np.all(np.abs(mf - pooled) <= 4.0 * max(disp_full, 1e-12)))
    shrink = disp_full <= 1.1 * disp_half
    return {"mean": pooled, "stderr": se,
            "dispersion_full": disp_full, "dispersion_half": disp_half,
            "dispersion_shrinks": bool(shrink), "replicates_agree": agree,
            "passes": bool(shrink and agree), "g_over_f_probe": ratio,
            "n_reps": n_reps, "horizon": horizon}
