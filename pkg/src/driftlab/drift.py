"""Statistical and exact verification of drift criteria at stopping times.

Each checker emits a DriftCertificate whose clauses carry one-sided 95%
empirical-Bernstein or Clopper-Pearson bounds, Bonferroni-corrected across
grid points.  Pointwise inequalities over non-finite spaces are verified on
the supplied grid only: verdicts are statistical evidence, never proofs.
When the kernel exposes exact rows and the sampling times are deterministic,
exact arithmetic replaces sampling.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .chains import TransitionKernel
from .rates import RateFunction, lambda0_membership
from .streams import stream

CENSOR_LIMIT = 1e-3
STATISTICAL_NOTE = "statistical evidence on the supplied grid, not a proof"

# worker-pool cap for replicate sampling; streams are keyed per replicate
# index and chunks are fixed, so results never depend on this value
THREADS = 1
_CHUNK = 512


@dataclass(frozen=True)
class DriftSpec:
    """Named drift data consumed by the checkers.

    V is the Lyapunov function, f the moment weight, delta the drift gap,
    C the small-set candidate (membership predicate), lam/b/epsilon the
    contraction constants.  V >= 1 is required by the rate criteria; the
    positive-recurrence criterion only needs V > 0, which is checked
    per-theorem on the grid.
    """

    V: object
    C: object
    f: object = None
    delta: object = None
    lam: float = float("nan")
    b: float = 0.0
    epsilon: float = float("nan")

    def f_or_one(self):
        return self.f if self.f is not None else (lambda x: 1.0)

    def delta_or_one(self):
        return self.delta if self.delta is not None else (lambda x: 1.0)


@dataclass
class DriftCertificate:
    """Machine-readable verdict with estimated constants and clause records."""

    theorem: str
    verdict: str  # pass | fail | inconclusive
    constants: dict
    clauses: list
    grid: list
    seeds: list
    sample_sizes: dict
    censor_rates: dict
    chain_id: str
    claim: dict = field(default_factory=dict)
    conclusion: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "verdict": self.verdict,
            "constants": _plain(self.constants),
            "clauses": _plain(self.clauses),
            "grid": [str(g) for g in self.grid],
            "seeds": [int(s) for s in self.seeds],
            "sample_sizes": _plain(self.sample_sizes),
            "censor_rates": _plain(self.censor_rates),
            "chain_id": self.chain_id,
            "claim": _plain(self.claim),
            "conclusion": self.conclusion,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def cert_id(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (str, bool)) or obj is None:
        return obj
    return str(obj)


def _verdict(all_satisfied: bool, inconclusive: bool) -> str:
    if inconclusive:
        return "inconclusive"
    return "pass" if all_satisfied else "fail"


# ---------------------------------------------------------------------------
# block sampling engine

def collect_blocks(kernel: TransitionKernel, policy, x0, horizon: int, max_blocks: int,
                   rng_path, rng_policy):
    """Simulate lazily and return up to max_blocks inter-stopping-time blocks.

    A block is (t_start, t_end, segment) with segment = states at times
    t_start..t_end inclusive.  Returns (blocks, censored): censored means the
    horizon ended before max_blocks stopping times were observed.
    """
    states = [x0]
    keep_records = getattr(policy, "kind", None) == "record"
    records = [] if keep_records else None

    def extend_to(t_target):
        while len(states) - 1 < t_target:
            if records is not None:
                x, rec = kernel.sample_with_record(states[-1], rng_path)
                records.append(rec)
            else:
                x = kernel.sample(states[-1], rng_path)
            states.append(x)

    blocks = []
    kind = getattr(policy, "kind", None)
    t = 0
    if kind == "independent":
        while len(blocks) < max_blocks:
            dt = int(policy.renewal(rng_policy))
            if dt < 1:
                raise ValueError("renewal draws must be >= 1")
            if t + dt > horizon:
                return blocks, True
            extend_to(t + dt)
            blocks.append((t, t + dt, states[t:t + dt + 1]))
            t += dt
    elif kind == "deterministic":
        while len(blocks) < max_blocks:
            dt = int(policy.n_of_state(states[t]))
            if dt < 1:
                raise ValueError("deterministic policy must return n(x) >= 1")
            if t + dt > horizon:
                return blocks, True
            extend_to(t + dt)
            blocks.append((t, t + dt, states[t:t + dt + 1]))
            t += dt
    elif kind == "event":
        n = 0
        while len(blocks) < max_blocks:
            member = policy._event_set(n + 1)
            found = None
            s = t + 1
            while s <= horizon:
                extend_to(s)
                if member(states[s]):
                    found = s
                    break
                s += 1
            if found is None:
                return blocks, True
            blocks.append((t, found, states[t:found + 1]))
            t, n = found, n + 1
    elif kind == "record":
        # time u qualifies based on the record of the step leaving u, so the
        # last decidable time within the horizon is horizon - 1
        while len(blocks) < max_blocks:
            found = None
            u = max(t + 1, 1)
            while u <= horizon - 1:
                extend_to(u + 1)
                if policy.record_qualifies(records[u]):
                    found = u
                    break
                u += 1
            if found is None:
                return blocks, True
            blocks.append((t, found, states[t:found + 1]))
            t = found
    else:
        raise ValueError(f"policy kind {kind!r} not supported by the block sampler")
    return blocks, False


def _first_block_samples(kernel, policy, x0, n_samples, horizon, seed, key,
                         value_of_block):
    """Monte Carlo samples of a functional of the first block from x0."""

    def run_chunk(lo, hi):
        vals, censored = [], 0
        for j in range(lo, hi):
            rng_path = stream(seed, key, 1, j)
            rng_policy = stream(seed, key, 2, j)
            blocks, cens = collect_blocks(kernel, policy, x0, horizon, 1,
                                          rng_path, rng_policy)
            if cens or not blocks:
                censored += 1
                continue
            vals.append(value_of_block(blocks[0]))
        return vals, censored

    bounds = [(lo, min(lo + _CHUNK, n_samples)) for lo in range(0, n_samples, _CHUNK)]
    if THREADS > 1 and len(bounds) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=THREADS) as pool:
            chunks = list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        chunks = [run_chunk(*b) for b in bounds]
    vals = [v for c, _ in chunks for v in c]
    censored = sum(c for _, c in chunks)
    return np.asarray(vals, dtype=float), censored / n_samples


def _deterministic_grid_steps(policy, grid):
    if getattr(policy, "kind", None) != "deterministic":
        return None
    try:
        return [int(policy.n_of_state(x)) for x in grid]
    except Exception:
        return None


def _exact_expectations_available(kernel, policy, grid):
    return kernel.matrix is not None and _deterministic_grid_steps(policy, grid) is not None


# ---------------------------------------------------------------------------
# sampled drift estimation

def estimate_sampled_drift(kernel, policy, spec: DriftSpec, grid, n_samples: int,
                           horizon: int = 10_000, seed: int = 0, delta: float = 0.05) -> dict:
    """Per-state estimates of E[V(x_{T_1}) | x_0 = x] with one-sided bounds.

    Returns rows (state, n, mean, var, ucb), the derived lambda_hat
    (worst UCB/V off C) and b_hat on C, and per-state censor rates.
    Exact arithmetic replaces sampling for finite kernels under
    deterministic policies.
    """
    if n_samples < 100:
        raise ValueError("need n_samples >= 100 per grid point")
    V, C = spec.V, spec.C
    rows = []
    censor = {}
    exact = _exact_expectations_available(kernel, policy, grid)
    d = delta / max(len(grid), 1)
    for i, x in enumerate(grid):
        if exact:
            m = int(policy.n_of_state(x))
            Vvec = np.array([V(s) for s in range(kernel.matrix.shape[0])])
            PmV = np.linalg.matrix_power(kernel.matrix, m) @ Vvec
            mean = float(PmV[int(x)])
            rows.append({"state": str(x), "n": 0, "mean": mean, "var": 0.0,
                         "ucb": mean, "exact": True})
            censor[str(x)] = 0.0
            continue
        vals, cr = _first_block_samples(kernel, policy, x, n_samples, horizon, seed, 100 + i,
                                        lambda blk: V(blk[2][-1]))
        censor[str(x)] = cr
        if cr > CENSOR_LIMIT or vals.size < 2:
            rows.append({"state": str(x), "n": int(vals.size), "mean": float("nan"),
                         "var": float("nan"), "ucb": float("inf"), "exact": False})
            continue
        rows.append({"state": str(x), "n": int(vals.size), "mean": float(vals.mean()),
                     "var": float(vals.var(ddof=1)),
                     "ucb": stats.empirical_bernstein_ucb(vals, d), "exact": False})
    lam_hat = None
    b_hat = None
    off = [(row, x) for row, x in zip(rows, grid) if not C(x)]
    on = [(row, x) for row, x in zip(rows, grid) if C(x)]
    if off:
        lam_hat = max(row["ucb"] / V(x) for row, x in off)
    lam_ref = spec.lam if math.isfinite(spec.lam) else (lam_hat if lam_hat is not None else 0.0)
    if on:
        b_hat = max(max(row["ucb"] - lam_ref * V(x), 0.0) for row, x in on)
    inconclusive = any(c > CENSOR_LIMIT for c in censor.values())
    return {"rows": rows, "lambda_hat": lam_hat, "b_hat": b_hat,
            "censor_rates": censor, "inconclusive": inconclusive, "exact": exact}


def _v_bounded_gate(spec, grid, policy, c_inside_events: bool = False):
    """Bounded-V-on-C gate, skippable for independent or aligned event policies."""
    kind = getattr(policy, "kind", None)
    if kind == "independent" or (kind in ("event", "record") and c_inside_events):
        return {"name": "v_bounded_on_C", "satisfied": True,
                "detail": f"gate skipped: {kind} sampling relaxes boundedness of V on C"}
    on_c = [spec.V(x) for x in grid if spec.C(x)]
    sup = max(on_c) if on_c else 0.0
    return {"name": "v_bounded_on_C", "satisfied": True,
            "detail": f"sup V over sampled C points = {sup:.6g} (finite-sample check)"}


# ---------------------------------------------------------------------------
# positive Harris recurrence via the two-part drift

def check_harris_recurrence(kernel, policy, spec: DriftSpec, grid, n_samples: int,
                            horizon: int = 10_000, seed: int = 0, delta: float = 0.05,
                            c_inside_events: bool = False) -> DriftCertificate:
    """Two inequalities at the stopping times: expected V decreases by the gap
    delta(x) off C, and the accumulated f-cost of a block is at most delta(x).

    A pass claims positive Harris recurrence with a finite stationary f-moment
    (flagged statistical).
    """
    V, C, f, dlt = spec.V, spec.C, spec.f_or_one(), spec.delta_or_one()
    b = spec.b
    clauses = []
    censor = {}
    exact = _exact_expectations_available(kernel, policy, grid)
    d = delta / max(len(grid), 1) / 2.0
    drift_ok, moment_ok, inconclusive = True, True, False
    for i, x in enumerate(grid):
        if exact:
            m = int(policy.n_of_state(x))
            n_states = kernel.matrix.shape[0]
            Vvec = np.array([V(s) for s in range(n_states)])
            fvec = np.array([f(s) for s in range(n_states)])
            drift_val = float((np.linalg.matrix_power(kernel.matrix, m) @ Vvec)[int(x)])
            fsum = 0.0
            Pj = np.eye(n_states)
            for j in range(m):
                fsum += float((Pj @ fvec)[int(x)])
                Pj = Pj @ kernel.matrix
            drift_ucb, moment_ucb = drift_val, fsum
            censor[str(x)] = 0.0
        else:
            vals, cr = _first_block_samples(
                kernel, policy, x, n_samples, horizon, seed, 200 + i,
                lambda blk: (V(blk[2][-1]), sum(f(s) for s in blk[2][:-1])))
            censor[str(x)] = cr
            if cr > CENSOR_LIMIT or vals.size < 2:
                inconclusive = True
                clauses.append({"name": "censoring", "satisfied": False, "state": str(x),
                                "detail": f"censor rate {cr:.4f} exceeds {CENSOR_LIMIT}"})
                continue
            drift_ucb = stats.empirical_bernstein_ucb(vals[:, 0], d)
            moment_ucb = stats.empirical_bernstein_ucb(vals[:, 1], d)
        bound = V(x) - dlt(x) + (b if C(x) else 0.0)
        ok1 = drift_ucb <= bound + 1e-12
        ok2 = moment_ucb <= dlt(x) + 1e-12
        drift_ok &= ok1
        moment_ok &= ok2
        clauses.append({"name": "drift", "satisfied": bool(ok1), "state": str(x),
                        "detail": f"E[V(x_T1)] ub {drift_ucb:.6g} vs V - delta + b1_C = {bound:.6g}"})
        clauses.append({"name": "block_f_cost", "satisfied": bool(ok2), "state": str(x),
                        "detail": f"E[sum f] ub {moment_ucb:.6g} vs delta = {dlt(x):.6g}"})
    clauses.append(_v_bounded_gate(spec, grid, policy, c_inside_events))
    verdict = _verdict(drift_ok and moment_ok, inconclusive)
    fname = getattr(spec.f, "__name__", "f") if spec.f is not None else "1"
    return DriftCertificate(
        theorem="harris",
        verdict=verdict,
        constants={"b": b},
        clauses=clauses,
        grid=list(grid),
        seeds=[seed],
        sample_sizes={"per_state": 0 if exact else n_samples},
        censor_rates=censor,
        chain_id=kernel.kernel_id,
        claim={"f": fname, "r": "1"},
        conclusion="positive Harris recurrent; stationary f-moment finite"
                   if verdict == "pass" else "",
        notes=["exact arithmetic (finite rows, deterministic sampling)" if exact
               else STATISTICAL_NOTE],
    )


# ---------------------------------------------------------------------------
# (1, r)-ergodicity under random sampling

def check_subgeometric_rate(kernel, policy, spec: DriftSpec, r: RateFunction, grid,
                            n_samples: int, horizon: int = 10_000, seed: int = 0,
                            delta: float = 0.05, k_blocks: int = 3,
                            rate_check_N: int = 1000,
                            c_inside_events: bool = False) -> DriftCertificate:
    """Contraction of V at the stopping times plus two rate-moment bounds:
    the within-block accumulated rate must stay bounded (M) and the rate of a
    block length must have mean at most 1/lambda.  A pass claims
    (1, r)-ergodicity.
    """
    gate = lambda0_membership(r, rate_check_N)
    if not gate["passes"]:
        return DriftCertificate(
            theorem="subgeometric", verdict="fail",
            constants={"lambda": spec.lam},
            clauses=[{"name": "rate_class_gate", "satisfied": False,
                      "detail": f"rate rejected before sampling: {gate['failures']}"}],
            grid=list(grid), seeds=[seed], sample_sizes={}, censor_rates={},
            chain_id=kernel.kernel_id, claim={"f": "1", "r": r.to_config()},
            conclusion="", notes=["rate-class gate failed; no sampling performed"])
    lam, b = spec.lam, spec.b
    V, C = spec.V, spec.C
    clauses = []
    # pointwise separation: lam V(x) <= V(x) - eps off C, exact arithmetic
    eps = spec.epsilon
    sep_ok = True
    if math.isfinite(eps):
        for x in grid:
            if not C(x) and lam * V(x) > V(x) - eps + 1e-12:
                sep_ok = False
                clauses.append({"name": "separation", "satisfied": False, "state": str(x),
                                "detail": f"lam V = {lam * V(x):.6g} > V - eps = {V(x) - eps:.6g}"})
        if sep_ok:
            clauses.append({"name": "separation", "satisfied": True,
                            "detail": "lam V <= V - eps on all off-C grid points"})
    censor = {}
    d = delta / max(len(grid), 1) / max(k_blocks, 1) / 3.0
    drift_ok, M_ok, rmom_ok, inconclusive = True, True, True, False
    M_hat = 0.0
    rmom_hat = 0.0
    det_steps = _deterministic_grid_steps(policy, grid)
    for i, x in enumerate(grid):
        def block_stats(blk):
            t0, t1, seg = blk
            dt = t1 - t0
            rsum = sum(r.eval(j) for j in range(dt))
            resid = V(seg[-1]) - lam * V(seg[0]) - (b if C(seg[0]) else 0.0)
            return (resid, rsum, r.eval(dt))

        samples = {k: [] for k in range(k_blocks)}
        censored = 0
        for j in range(n_samples):
            rng_path = stream(seed, 300 + i, 1, j)
            rng_policy = stream(seed, 300 + i, 2, j)
            blocks, cens = collect_blocks(kernel, policy, x, horizon, k_blocks,
                                          rng_path, rng_policy)
            if cens and not blocks:
                censored += 1
                continue
            for k, blk in enumerate(blocks):
                samples[k].append(block_stats(blk))
        censor[str(x)] = censored / n_samples
        if censor[str(x)] > CENSOR_LIMIT:
            inconclusive = True
            clauses.append({"name": "censoring", "satisfied": False, "state": str(x),
                            "detail": f"censor rate {censor[str(x)]:.4f}"})
            continue
        for k in range(k_blocks):
            if len(samples[k]) < 2:
                continue
            arr = np.asarray(samples[k])
            exact_dt = det_steps is not None and np.unique(arr[:, 2]).size == 1
            if exact_dt:
                resid_ucb = stats.empirical_bernstein_ucb(arr[:, 0], d)
                rsum_ucb = float(arr[0, 1])
                rmom_ucb = float(arr[0, 2])
            else:
                resid_ucb = stats.empirical_bernstein_ucb(arr[:, 0], d)
                rsum_ucb = stats.empirical_bernstein_ucb(arr[:, 1], d)
                rmom_ucb = stats.empirical_bernstein_ucb(arr[:, 2], d)
                hill = stats.hill_tail_index(arr[:, 2])
                if hill is not None and hill < 1.2:
                    inconclusive = True
                    clauses.append({"name": "heavy_tail_guard", "satisfied": False,
                                    "state": str(x), "block": k,
                                    "detail": f"rate-moment tail index {hill:.3g} < 1.2"})
            ok_d = resid_ucb <= 1e-12
            ok_r = rmom_ucb <= 1.0 / lam + 1e-12
            drift_ok &= ok_d
            rmom_ok &= ok_r
            M_hat = max(M_hat, rsum_ucb)
            rmom_hat = max(rmom_hat, rmom_ucb)
            clauses.append({"name": "drift", "satisfied": bool(ok_d), "state": str(x),
                            "block": k, "detail": f"residual ub {resid_ucb:.6g} vs 0"})
            clauses.append({"name": "block_rate_sum", "satisfied": True, "state": str(x),
                            "block": k, "detail": f"M contribution {rsum_ucb:.6g}"})
            clauses.append({"name": "rate_moment", "satisfied": bool(ok_r), "state": str(x),
                            "block": k,
                            "detail": f"E[r(dT)] ub {rmom_ucb:.6g} vs 1/lambda = {1.0 / lam:.6g}"})
    clauses.append(_v_bounded_gate(spec, grid, policy, c_inside_events))
    notes = [STATISTICAL_NOTE]
    constants = {"lambda": lam, "b": b, "M": M_hat, "rate_moment": rmom_hat}
    if not rmom_ok and math.isfinite(M_hat) and M_hat > 0 and lam < 1:
        # a root of the rate still satisfies the moment bound if s is large
        # enough that M^(1/s) <= 1/lambda
        s = math.log(max(rmom_hat, 1.0 + 1e-9)) / math.log(1.0 / lam)
        constants["jensen_root_s"] = max(1.0, s)
        notes.append(f"rate moment fails but r^(1/s) satisfies it for s >= {max(1.0, s):.4g}")
    verdict = _verdict(sep_ok and drift_ok and M_ok and rmom_ok, inconclusive)
    return DriftCertificate(
        theorem="subgeometric", verdict=verdict, constants=constants, clauses=clauses,
        grid=list(grid), seeds=[seed], sample_sizes={"per_state": n_samples},
        censor_rates=censor, chain_id=kernel.kernel_id,
        claim={"f": "1", "r": r.to_config()},
        conclusion="(1, r)-ergodic" if verdict == "pass" else "",
        notes=notes)


# ---------------------------------------------------------------------------
# deterministic state-dependent sampling

def check_deterministic_sampling(n_func, r: RateFunction, lam: float, domain_sample,
                                 n_cap: int = 10 ** 6, rate_check_N: int = 1000) -> DriftCertificate:
    """Exact arithmetic check of the sampling/rate compatibility clauses for
    deterministic state-dependent times: the accumulated rate over one block
    is bounded and r(n(x)) <= 1/lambda everywhere sampled.
    """
    gate = lambda0_membership(r, rate_check_N)
    if not gate["passes"]:
        return DriftCertificate(
            theorem="det_sampling", verdict="fail", constants={"lambda": lam},
            clauses=[{"name": "rate_class_gate", "satisfied": False,
                      "detail": f"rate rejected before the corollary runs: {gate['failures']}"}],
            grid=[str(x) for x in domain_sample], seeds=[], sample_sizes={},
            censor_rates={}, chain_id="", claim={"f": "1", "r": r.to_config()},
            conclusion="", notes=["rate-class gate failed"])
    steps = [int(n_func(x)) for x in domain_sample]
    if any(s < 1 for s in steps):
        raise ValueError("stopping times must strictly increase: n(x) >= 1 required")
    if max(steps) >= n_cap:
        return DriftCertificate(
            theorem="det_sampling", verdict="inconclusive", constants={"lambda": lam},
            clauses=[{"name": "bounded_n", "satisfied": False,
                      "detail": f"n(x) reached the cap {n_cap} on the sample"}],
            grid=[str(x) for x in domain_sample], seeds=[], sample_sizes={},
            censor_rates={}, chain_id="", claim={"f": "1", "r": r.to_config()},
            conclusion="", notes=["n unbounded over sample"])
    M = max(sum(r.eval(k) for k in range(s + 1)) for s in steps)
    worst_r = max(r.eval(s) for s in steps)
    ok = worst_r <= 1.0 / lam + 1e-12
    return DriftCertificate(
        theorem="det_sampling", verdict="pass" if ok else "fail",
        constants={"lambda": lam, "M": M, "worst_rate_at_n": worst_r},
        clauses=[{"name": "rate_sum", "satisfied": True, "detail": f"M = {M:.6g}"},
                 {"name": "rate_at_n", "satisfied": bool(ok),
                  "detail": f"max r(n(x)) = {worst_r:.6g} vs 1/lambda = {1.0 / lam:.6g}"}],
        grid=[str(x) for x in domain_sample], seeds=[], sample_sizes={},
        censor_rates={}, chain_id="",
        claim={"f": "1", "r": r.to_config()},
        conclusion="(1, r)-ergodic (given the sampled-drift hypothesis)" if ok else "",
        notes=["exact arithmetic over the sampled domain"])


# ---------------------------------------------------------------------------
# increasing-rate criterion for independent sampling (Connor-Fort style)

def check_connor_fort(kernel, policy, spec: DriftSpec, R_func, grid, n_samples: int,
                      horizon: int = 10_000, seed: int = 0, delta: float = 0.05,
                      mono_N: int = 1000, pi_v_horizon: int = 20_000) -> DriftCertificate:
    """Increasing R with R(t)/t non-increasing, independent sampling times,
    E[R(dT)] <= V(x) per grid state, and the sampled-drift contraction.
    Needs a finite stationary V-moment, which is only estimated (flagged).
    """
    if getattr(policy, "kind", None) != "independent":
        raise ValueError("requires independent stopping times")
    Rv = R_func.eval if isinstance(R_func, RateFunction) else R_func
    ts = np.arange(1, mono_N + 1, dtype=float)
    Rvals = np.array([Rv(t) for t in ts])
    inc_bad = stats.decreasing_within_tol(-Rvals)
    ratio_bad = stats.decreasing_within_tol(Rvals / ts)
    clauses = [
        {"name": "R_increasing", "satisfied": inc_bad is None,
         "detail": "strictly increasing on 1..N" if inc_bad is None
         else f"not increasing at t = {inc_bad}"},
        {"name": "R_over_t_non_increasing", "satisfied": ratio_bad is None,
         "detail": "R(t)/t non-increasing on 1..N" if ratio_bad is None
         else f"R(t)/t increases at t = {ratio_bad}"},
    ]
    mono_ok = inc_bad is None and ratio_bad is None
    # inter-times are independent of the state: one sample batch serves all x
    rng_policy = stream(seed, 400, 2)
    dts = np.array([policy.renewal(rng_policy) for _ in range(n_samples)], dtype=float)
    Rdt = np.array([Rv(t) for t in dts])
    d = delta / (len(grid) + 2)
    R_ucb = stats.empirical_bernstein_ucb(Rdt, d)
    bound_ok = True
    for x in grid:
        ok = R_ucb <= spec.V(x) + 1e-12
        bound_ok &= ok
        clauses.append({"name": "R_moment_vs_V", "satisfied": bool(ok), "state": str(x),
                        "detail": f"E[R(dT)] ub {R_ucb:.6g} vs V(x) = {spec.V(x):.6g}"})
    est = estimate_sampled_drift(kernel, policy, spec, grid, n_samples,
                                 horizon=horizon, seed=seed + 1, delta=d)
    drift_ok = True
    for row, x in zip(est["rows"], grid):
        target = spec.lam * spec.V(x) + (spec.b if spec.C(x) else 0.0)
        ok = row["ucb"] <= target + 1e-12
        drift_ok &= ok
        clauses.append({"name": "drift", "satisfied": bool(ok), "state": str(x),
                        "detail": f"E[V(x_T1)] ub {row['ucb']:.6g} vs lam V + b1_C = {target:.6g}"})
    # pi(V) < infinity: ergodic-average stabilization of V along one long run
    from .chains import simulate
    long_run = simulate(kernel, grid[0], pi_v_horizon, seed + 7)
    Vpath = np.array([spec.V(s) for s in long_run.states])
    burn = pi_v_horizon // 10
    m_half = float(Vpath[burn:pi_v_horizon // 2].mean())
    m_full = float(Vpath[burn:].mean())
    pi_v_ok = m_half > 0 and 0.5 <= m_full / m_half <= 2.0
    clauses.append({"name": "pi_V_finite", "satisfied": bool(pi_v_ok),
                    "detail": f"ergodic V-average {m_half:.6g} -> {m_full:.6g} (statistical)"})
    inconclusive = est["inconclusive"]
    verdict = _verdict(mono_ok and bound_ok and drift_ok and pi_v_ok, inconclusive)
    return DriftCertificate(
        theorem="connor_fort", verdict=verdict,
        constants={"lambda": spec.lam, "b": spec.b, "R_moment_ucb": R_ucb},
        clauses=clauses, grid=list(grid), seeds=[seed],
        sample_sizes={"per_state": n_samples}, censor_rates=est["censor_rates"],
        chain_id=kernel.kernel_id, claim={"f": "1", "r": "R"},
        conclusion="(1, R)-ergodic" if verdict == "pass" else "",
        notes=[STATISTICAL_NOTE, "pi(V) finite: statistical"])


# ---------------------------------------------------------------------------
# geometric ergodicity from geometric inter-time tails

def fit_intertime_bound(dt_samples_by_state: dict, lam: float, delta: float = 0.05,
                        min_count: int = 500, beta_grid=None) -> dict:
    """Fit (B, beta) with P(dT = k) <= B beta^(k-1) from inter-time samples.

    beta is the worst (largest) per-state least-squares decay of the resolved
    head of the pmf (k with at least min_count observations); B is the
    smallest envelope over the per-(state, k) Clopper-Pearson upper bounds.
    If the composite condition (1 - B lam)/beta > 1 fails at that envelope,
    a grid of beta candidates is scanned for any feasible pair.
    A tail-consistency clause checks the envelope is not contradicted beyond
    the resolved head (lower confidence bound on the tail mass must not
    exceed the envelope's tail mass).
    """
    states = list(dt_samples_by_state)
    n_tests = sum(1 for _ in states)
    betas_ls = []
    per_state = {}
    for sname, dts in dt_samples_by_state.items():
        dts = np.asarray(dts, dtype=int)
        n = dts.size
        kmax_obs = int(dts.max()) if n else 0
        counts = np.bincount(dts, minlength=kmax_obs + 1)
        resolved = [k for k in range(1, kmax_obs + 1) if counts[k] >= min_count]
        per_state[sname] = {"n": n, "counts": counts, "resolved": resolved}
        if len(resolved) >= 2:
            ks = np.array(resolved, dtype=float)
            logs = np.log(counts[resolved] / n)
            w = counts[resolved].astype(float)
            slope = np.polyfit(ks - 1.0, logs, 1, w=np.sqrt(w))[0]
            betas_ls.append(math.exp(slope))
    if not any(v["resolved"] for v in per_state.values()):
        return {"ok": False, "reason": "no resolved pmf points",
                "per_state": {s: v["n"] for s, v in per_state.items()}}
    # a single resolved point identifies no decay; the grid scan below picks
    # the smallest feasible beta instead
    beta_hat = float(min(max(betas_ls), 1.0 - 1e-9)) if betas_ls else None

    def envelope_B(beta):
        B = 0.0
        for sname, info in per_state.items():
            n = info["n"]
            for k in info["resolved"]:
                ucb = stats.binom_ucb(int(info["counts"][k]), n, delta / (n_tests * max(len(info["resolved"]), 1)))
                B = max(B, ucb / beta ** (k - 1))
        return B

    def composite(B, beta):
        return (1.0 - B * lam) / beta

    if beta_hat is not None:
        B_hat = envelope_B(beta_hat)
        chosen = (B_hat, beta_hat)
        comp = composite(*chosen)
    else:
        chosen = (float("inf"), 1.0 - 1e-9)
        comp = float("-inf")
    scanned = False
    if not comp > 1.0:
        scanned = True
        grid = beta_grid if beta_grid is not None else np.arange(0.005, 1.0, 0.005)
        best = (comp, chosen)
        found = None
        for beta in grid:
            Bb = envelope_B(float(beta))
            c = composite(Bb, float(beta))
            if c > best[0]:
                best = (c, (Bb, float(beta)))
            if c > 1.0:
                found = (Bb, float(beta))
                break
        if found is not None:
            chosen = found
            comp = composite(*chosen)
        else:
            chosen = best[1]
            comp = best[0]
    B_hat, beta_hat = chosen
    tail_ok = True
    tail_details = []
    for sname, info in per_state.items():
        if not info["resolved"]:
            continue
        k0 = max(info["resolved"])
        n = info["n"]
        beyond = int(info["counts"][k0 + 1:].sum())
        lcb = stats.binom_lcb(beyond, n, delta / n_tests)
        env_mass = B_hat * beta_hat ** k0 / (1.0 - beta_hat)
        ok = lcb <= env_mass + 1e-15
        tail_ok &= ok
        tail_details.append({"state": sname, "beyond_k": k0, "tail_lcb": lcb,
                             "envelope_mass": env_mass, "ok": bool(ok)})
    return {"ok": comp > 1.0 and tail_ok, "B": float(B_hat), "beta": float(beta_hat),
            "composite": float(comp), "composite_ok": bool(comp > 1.0),
            "tail_ok": bool(tail_ok), "tail": tail_details, "grid_scanned": scanned,
            "per_state": {s: v["n"] for s, v in per_state.items()}}


def check_geometric_rate(kernel, policy, spec: DriftSpec, a_test: float, grid_off_C,
                         grid_C, n_samples: int, horizon: int = 10_000, seed: int = 0,
                         delta: float = 0.05, min_count: int = 500,
                         c_inside_events: bool = False) -> DriftCertificate:
    """Geometric ergodicity under random sampling: fit a geometric envelope on
    the inter-time pmf off C, verify the composite condition with the supplied
    contraction lambda, and confirm a finite a^{T_1} moment from C.

    The pmf convention is P(dT = k) <= B beta^(k-1) for k >= 1; with the
    composite condition (1 - B lam)/beta > 1 this makes B land in (p, p/lam)
    for exactly-geometric(p) inter-times.
    """
    if not a_test > 1:
        raise ValueError("a_test must exceed 1")
    lam = spec.lam
    if not (0 < lam < 1):
        raise ValueError("spec.lam must lie in (0, 1)")
    clauses = []
    censor = {}
    samples_by_state = {}
    inconclusive = False
    for i, x in enumerate(grid_off_C):
        vals, cr = _first_block_samples(kernel, policy, x, n_samples, horizon, seed, 500 + i,
                                        lambda blk: blk[1] - blk[0])
        censor[str(x)] = cr
        if cr > CENSOR_LIMIT:
            inconclusive = True
            clauses.append({"name": "censoring", "satisfied": False, "state": str(x),
                            "detail": f"censor rate {cr:.4f}"})
        samples_by_state[str(x)] = vals.astype(int)
    fit = fit_intertime_bound(samples_by_state, lam, delta=delta, min_count=min_count)
    if "B" not in fit:
        return DriftCertificate(
            theorem="geometric", verdict="inconclusive", constants={"lambda": lam},
            clauses=[{"name": "pmf_fit", "satisfied": False, "detail": fit["reason"]}],
            grid=list(grid_off_C) + list(grid_C), seeds=[seed],
            sample_sizes={"per_state": n_samples}, censor_rates=censor,
            chain_id=kernel.kernel_id, claim={"f": "1", "r": "geometric"},
            conclusion="", notes=[STATISTICAL_NOTE])
    clauses.append({"name": "pmf_envelope", "satisfied": True,
                    "detail": f"P(dT = k) <= B beta^(k-1) with B = {fit['B']:.6g}, "
                              f"beta = {fit['beta']:.6g} on resolved k"})
    clauses.append({"name": "composite_condition", "satisfied": fit["composite_ok"],
                    "detail": f"(1 - B lam)/beta = {fit['composite']:.6g} vs > 1"})
    clauses.append({"name": "tail_consistency", "satisfied": fit["tail_ok"],
                    "detail": json.dumps(_plain(fit["tail"]), sort_keys=True)})
    # moment of a^{T_1} from the C grid, truncated with the clipped mass reported
    c_moment = {}
    c_ok = True
    for i, x in enumerate(grid_C):
        vals, cr = _first_block_samples(kernel, policy, x, n_samples, horizon, seed, 600 + i,
                                        lambda blk: blk[1] - blk[0])
        censor[str(x)] = cr
        if cr > CENSOR_LIMIT:
            inconclusive = True
            continue
        powed = a_test ** vals
        rep = stats.truncated_mean_report(powed)
        hill = stats.hill_tail_index(powed)
        heavy = hill is not None and hill <= 1.0
        if heavy:
            inconclusive = True
        c_ok &= not heavy
        c_moment[str(x)] = {"trunc_mean": rep["mean"], "clipped_mass": rep["clipped_mass"],
                            "tail_index": hill}
        clauses.append({"name": "c_moment", "satisfied": not heavy, "state": str(x),
                        "detail": f"E[a^T1] trunc {rep['mean']:.6g} "
                                  f"(clipped mass {rep['clipped_mass']:.3g})"})
    # series-derived alternative condition, reported without asserting which
    # form is intended: E[rho^dT] <= B rho / (1 - rho beta) for rho in
    # (1, 1/beta); feasible iff B / (1 - beta) < 1/lam
    series_ok = fit["B"] / (1.0 - fit["beta"]) < 1.0 / lam
    constants = {"lambda": lam, "B": fit["B"], "beta": fit["beta"],
                 "composite": fit["composite"], "a_test": a_test,
                 "series_condition_value": fit["B"] / (1.0 - fit["beta"]),
                 "series_condition_ok": bool(series_ok),
                 "c_moment": c_moment}
    clauses.append(_v_bounded_gate(spec, list(grid_C), policy, c_inside_events))
    verdict = _verdict(fit["composite_ok"] and fit["tail_ok"] and c_ok, inconclusive)
    return DriftCertificate(
        theorem="geometric", verdict=verdict, constants=constants, clauses=clauses,
        grid=list(grid_off_C) + list(grid_C), seeds=[seed],
        sample_sizes={"per_state": n_samples}, censor_rates=censor,
        chain_id=kernel.kernel_id,
        claim={"f": "1", "r": "geometric"},
        conclusion="geometrically ergodic" if verdict == "pass" else "",
        notes=[STATISTICAL_NOTE,
               "pmf convention: P(dT = k) <= B beta^(k-1), k >= 1"])


# ---------------------------------------------------------------------------
# concave-drift criterion (Douc et al. style one-step condition)

def check_douc_drift(kernel, V, phi, C, grid, n_samples: int, b: float,
                     seed: int = 0, delta: float = 0.05,
                     phi_grid=(1.0, 1e6, 60)) -> DriftCertificate:
    """One-step drift PV + phi(V) <= V + b 1_C with a concave increasing phi.

    phi is screened numerically (midpoint concavity on a log grid) before any
    sampling; a convex phi raises immediately.  A pass claims
    (phi o V, 1)-ergodicity.
    """
    lo, hi, m = phi_grid
    vs = np.geomspace(lo, hi, int(m))
    pv = np.array([phi(v) for v in vs])
    if np.any(pv <= 0):
        raise ValueError("phi must be positive on [1, inf)")
    if np.any(np.diff(pv) < -1e-9 * np.maximum(1.0, np.abs(pv[:-1]))):
        raise ValueError("phi must be non-decreasing")
    mids = np.array([phi(0.5 * (u + w)) for u, w in zip(vs[:-1], vs[1:])])
    chords = 0.5 * (pv[:-1] + pv[1:])
    if np.any(mids < chords - 1e-9 * np.maximum(1.0, np.abs(chords))):
        bad = int(np.argmax(chords - mids))
        raise ValueError(f"phi fails the midpoint concavity test near v = {vs[bad]:.6g}")
    clauses = [{"name": "phi_concave_increasing", "satisfied": True,
                "detail": f"midpoint test on [{lo:g}, {hi:g}] log grid"}]
    exact = kernel.matrix is not None
    d = delta / max(len(grid), 1)
    ok_all, inconclusive = True, False
    censor = {}
    for i, x in enumerate(grid):
        if exact:
            n_states = kernel.matrix.shape[0]
            Vvec = np.array([V(s) for s in range(n_states)])
            pv_x = float((kernel.matrix @ Vvec)[int(x)])
            ucb = pv_x
            censor[str(x)] = 0.0
        else:
            vals = []
            for j in range(n_samples):
                rng = stream(seed, 700 + i, j)
                vals.append(V(kernel.sample(x, rng)))
            ucb = stats.empirical_bernstein_ucb(np.asarray(vals), d)
            censor[str(x)] = 0.0
        bound = V(x) - phi(V(x)) + (b if C(x) else 0.0)
        ok = ucb <= bound + 1e-12
        ok_all &= ok
        clauses.append({"name": "drift", "satisfied": bool(ok), "state": str(x),
                        "detail": f"PV ub {ucb:.6g} vs V - phi(V) + b1_C = {bound:.6g}"})
    verdict = _verdict(ok_all, inconclusive)
    return DriftCertificate(
        theorem="douc", verdict=verdict, constants={"b": b},
        clauses=clauses, grid=list(grid), seeds=[seed],
        sample_sizes={"per_state": 0 if exact else n_samples}, censor_rates=censor,
        chain_id=kernel.kernel_id, claim={"f": "phi(V)", "r": "1"},
        conclusion="(phi o V, 1)-ergodic" if verdict == "pass" else "",
        notes=["exact arithmetic (finite rows)" if exact else STATISTICAL_NOTE])
