"""Rate functions for convergence-rate claims.

A rate function maps step counts n = 0, 1, 2, ... to positive weights r(n).
Geometric rates r(n) = M * zeta**n characterize geometric ergodicity; the
subgeometric families (polynomial, subexponential) belong to the class of
non-decreasing rates with r(1) >= 2 and log r(n) / n decreasing to zero,
which makes them submultiplicative: r(m + n) <= r(m) * r(n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GEOMETRIC = "geometric"
POLYNOMIAL = "polynomial"
SUBEXPONENTIAL = "subexponential"
TABLE = "table"

# log r(N) / N must fall below this for the decreasing-to-zero clause; finite-N
# evidence only, so geometric rates with log(zeta) below the tolerance pass.
LOG_SLOPE_TOL = 0.05


@dataclass(frozen=True)
class RateFunction:
    """Tagged rate family with positive evaluation n -> r(n)."""

    family: str
    params: dict = field(default_factory=dict)

    def __call__(self, n) -> float:
        return self.eval(n)

    def eval(self, n) -> float:
        if n < 0:
            raise ValueError("rate functions are defined on n >= 0")
        p = self.params
        if self.family == POLYNOMIAL:
            return p["c"] * (n + 1.0) ** p["alpha"]
        if self.family == GEOMETRIC:
            return p["M"] * p["zeta"] ** n
        if self.family == SUBEXPONENTIAL:
            return math.exp(p["c"] * float(n) ** p["gamma"])
        if self.family == TABLE:
            values = p["values"]
            if n >= len(values):
                raise ValueError(f"table rate defined on 0..{len(values) - 1}, got n={n}")
            return float(values[int(n)])
        raise ValueError(f"unknown rate family {self.family!r}")

    def log_eval(self, n) -> float:
        """log r(n), exact per family; immune to float overflow of r itself."""
        if n < 0:
            raise ValueError("rate functions are defined on n >= 0")
        p = self.params
        if self.family == POLYNOMIAL:
            return math.log(p["c"]) + p["alpha"] * math.log(n + 1.0)
        if self.family == GEOMETRIC:
            return math.log(p["M"]) + n * math.log(p["zeta"])
        if self.family == SUBEXPONENTIAL:
            return p["c"] * float(n) ** p["gamma"]
        return math.log(self.eval(n))

    @property
    def domain_end(self) -> int | None:
        """Last valid n for table rates, None for unbounded families."""
        if self.family == TABLE:
            return len(self.params["values"]) - 1
        return None

    def to_config(self) -> dict:
        """Structured text block {family, params}; round-trips exactly via JSON."""
        return {"family": self.family, "params": dict(self.params)}

    @staticmethod
    def from_config(block: dict) -> "RateFunction":
        family = block["family"]
        params = dict(block["params"])
        if family == POLYNOMIAL:
            return make_polynomial(params["alpha"], params["c"])
        if family == GEOMETRIC:
            return make_geometric(params["zeta"], params["M"])
        if family == SUBEXPONENTIAL:
            return make_subexponential(params["c"], params["gamma"])
        if family == TABLE:
            return make_table(params["values"])
        raise ValueError(f"unknown rate family {family!r}")


def make_polynomial(alpha: float, c: float) -> RateFunction:
    """r(n) = c * (n + 1)**alpha. Requires alpha >= 0 and c > 0."""
    if not (alpha >= 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    if not c > 0:
        raise ValueError(f"c must be > 0, got {c}")
    return RateFunction(POLYNOMIAL, {"alpha": float(alpha), "c": float(c)})


def make_geometric(zeta: float, M: float) -> RateFunction:
    """r(n) = M * zeta**n with zeta > 1."""
    if not zeta > 1:
        raise ValueError(f"zeta must be > 1, got {zeta}")
    if not M > 0:
        raise ValueError(f"M must be > 0, got {M}")
    return RateFunction(GEOMETRIC, {"zeta": float(zeta), "M": float(M)})


def make_subexponential(c: float, gamma: float) -> RateFunction:
    """r(n) = exp(c * n**gamma) with c > 0 and gamma in (0, 1)."""
    if not c > 0:
        raise ValueError(f"c must be > 0, got {c}")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    return RateFunction(SUBEXPONENTIAL, {"c": float(c), "gamma": float(gamma)})


def make_table(values) -> RateFunction:
    """Empirical rate given by an explicit table of positive values."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("table rate needs at least one value")
    if any(v <= 0 for v in vals):
        raise ValueError("table rate values must be positive")
    return RateFunction(TABLE, {"values": vals})


def builtin_rates() -> dict[str, RateFunction]:
    """Built-in subgeometric rates; all pass the rate-class membership check."""
    return {
        "poly_half": make_polynomial(0.5, 2.0),
        "poly_linear": make_polynomial(1.0, 2.0),
        "poly_quadratic": make_polynomial(2.0, 2.0),
        "subexp_sqrt": make_subexponential(1.0, 0.5),
        "subexp_mild": make_subexponential(0.8, 0.3),
    }


def builtin_geometric_rates() -> dict[str, RateFunction]:
    return {
        "geo_2": make_geometric(2.0, 1.0),
        "geo_15": make_geometric(1.5, 2.0),
    }


def lambda0_membership(r: RateFunction, N: int, slope_tol: float = LOG_SLOPE_TOL) -> dict:
    """Check the subgeometric rate-class clauses on n = 1..N.

    Clauses: (a) r non-decreasing, (b) r(1) >= 2, (c) log r(n) / n
    non-increasing with final value below `slope_tol`.  Finite-N evidence only:
    a geometric rate with log(zeta) < slope_tol cannot be caught.  Table rates
    are checked on min(N, domain) and the report says so.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    n_hi = N
    clipped = False
    if r.domain_end is not None and r.domain_end < N:
        n_hi = r.domain_end
        clipped = True
        if n_hi < 2:
            return {"passes": False, "failures": [{"clause": "domain", "index": n_hi,
                                                   "detail": "table too short to check"}],
                    "checked_to": n_hi, "clipped": True}
    ns = np.arange(1, n_hi + 1)
    logs = np.array([r.log_eval(int(n)) for n in ns])
    failures = []
    diffs = np.diff(logs)
    bad = np.nonzero(diffs < -1e-12)[0]
    if bad.size:
        failures.append({"clause": "non_decreasing", "index": int(ns[bad[0] + 1]),
                         "detail": f"r({ns[bad[0] + 1]}) < r({ns[bad[0]]})"})
    if logs[0] < math.log(2.0) - 1e-12:
        failures.append({"clause": "r1_at_least_2", "index": 1,
                         "detail": f"r(1) = {math.exp(logs[0])}"})
    slope = logs / ns
    sbad = np.nonzero(np.diff(slope) > 1e-12 * np.maximum(1.0, np.abs(slope[:-1])))[0]
    if sbad.size:
        failures.append({"clause": "log_slope_non_increasing", "index": int(ns[sbad[0] + 1]),
                         "detail": f"log r(n)/n increased at n = {ns[sbad[0] + 1]}"})
    if slope[-1] >= slope_tol:
        failures.append({"clause": "log_slope_vanishes", "index": int(ns[-1]),
                         "detail": f"log r(N)/N = {slope[-1]:.6g} >= {slope_tol}"})
    return {"passes": not failures, "failures": failures, "checked_to": int(n_hi),
            "clipped": clipped, "final_log_slope": float(slope[-1])}


def submultiplicativity_check(r: RateFunction, trials: int, N: int, seed: int = 0) -> bool:
    """Sample (m, n) pairs uniformly in [0, N]^2 and test r(m+n) <= r(m) r(n)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if r.domain_end is not None:
        N = min(N, r.domain_end)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        m = int(rng.integers(0, N + 1))
        n = int(rng.integers(0, N + 1))
        if r.domain_end is not None and m + n > r.domain_end:
            continue
        if r.log_eval(m + n) > r.log_eval(m) + r.log_eval(n) + 1e-12:
            return False
    return True


def convolve(f, g, n: int) -> float:
    """(f * g)(n) = sum_{k=0}^{n} f(k) g(n-k); f, g callables or sequences."""
    if n < 0:
        raise ValueError("convolution index must be >= 0")
    fv = f if callable(f) else (lambda k, s=f: s[k])
    gv = g if callable(g) else (lambda k, s=g: s[k])
    return float(sum(fv(k) * gv(n - k) for k in range(n + 1)))


@dataclass(frozen=True)
class UndPair:
    """Pair of functions on [1, inf) with psi1(x) psi2(y) <= x + y.

    At least one member must grow without bound; checked on x = 10**1..10**9
    at construction (strictly increasing tail).
    """

    psi1: object
    psi2: object
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        probes = [10.0 ** k for k in range(1, 10)]
        for fn in (self.psi1, self.psi2):
            vals = [fn(x) for x in probes]
            if all(b > a * (1 + 1e-12) for a, b in zip(vals, vals[1:])):
                return
        raise ValueError("neither component of the pair tends to infinity")


def young_pair(p: float) -> UndPair:
    """psi1(x) = x**(1/p), psi2(y) = y**(1/q) with 1/p + 1/q = 1, p > 1.

    The product inequality psi1(x) psi2(y) <= x/p + y/q <= x + y holds by
    Young's inequality.
    """
    if not p > 1:
        raise ValueError(f"p must be > 1, got {p}")
    q = p / (p - 1.0)
    return UndPair(psi1=lambda x, e=1.0 / p: x ** e,
                   psi2=lambda y, e=1.0 / q: y ** e,
                   provenance={"construction": "young", "p": float(p), "q": float(q)})


def compose_ergodicity(f_claim, r_claim, pair: UndPair):
    """Combine an (f,1) certificate and a (1,r) certificate through an
    ultimately non-decreasing pair into a (psi1 o f, psi2 o r) claim.

    Inputs are DriftCertificate objects for the same chain; only bookkeeping
    happens here, no new numerics.
    """
    if f_claim.chain_id != r_claim.chain_id:
        raise ValueError(
            f"certificates refer to different chains: {f_claim.chain_id!r} vs {r_claim.chain_id!r}")
    from .drift import DriftCertificate  # local import: drift depends on rates

    f_name = f_claim.claim.get("f", "f")
    r_name = r_claim.claim.get("r", "r")
    prov = pair.provenance
    label = prov.get("construction", "pair")
    claim = {"f": f"psi1[{label}] o {f_name}", "r": f"psi2[{label}] o {r_name}"}
    verdict = "pass" if f_claim.verdict == "pass" and r_claim.verdict == "pass" else "inconclusive"
    return DriftCertificate(
        theorem="composed",
        verdict=verdict,
        constants={"pair": dict(prov)},
        clauses=[{"name": "inputs", "satisfied": verdict == "pass",
                  "detail": f"from {f_claim.cert_id()} and {r_claim.cert_id()}"}],
        grid=[],
        seeds=[],
        sample_sizes={},
        censor_rates={},
        chain_id=f_claim.chain_id,
        claim=claim,
        conclusion=f"({claim['f']}, {claim['r']})-ergodic",
        notes=[f"provenance: {f_claim.cert_id()}, {r_claim.cert_id()}"],
    )
