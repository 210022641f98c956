"""Exact linear-algebra computations on finite chains.

Everything here is deterministic ground truth that the statistical estimators
elsewhere are validated against.  The f-norm convention is the total absolute
f-weighted mass sum_y f(y) |mu(y)|, so the plain total-variation distance
(f = 1) is twice the maximum event difference.  Both conventions appear in the
literature; all distances in this package use this one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import csr_matrix

from .rates import RateFunction


@dataclass(frozen=True)
class FiniteChain:
    """Row-stochastic matrix with state labels."""

    matrix: np.ndarray
    labels: tuple

    def __init__(self, matrix, labels=None):
        P = np.asarray(matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("matrix must be square")
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("entries must lie in [0, 1]")
        rowsums = P.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > 1e-12):
            bad = int(np.argmax(np.abs(rowsums - 1.0)))
            raise ValueError(f"row {bad} sums to {rowsums[bad]!r}")
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "labels",
                           tuple(labels) if labels is not None else tuple(str(i) for i in range(len(P))))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class MinorizationWitness:
    """C, n0, epsilon, nu with P^{n0}(x, .) >= epsilon * nu(.) on C, checked exactly."""

    C: tuple
    n0: int
    epsilon: float
    nu: np.ndarray


class ReducibleChainError(ValueError):
    def __init__(self, closed_classes):
        self.closed_classes = closed_classes
        super().__init__(f"chain is reducible; closed communicating classes: {closed_classes}")


class PeriodicChainError(ValueError):
    def __init__(self, period):
        self.period = period
        super().__init__(f"chain is periodic with period {period}")


def communicating_structure(chain: FiniteChain):
    """(number of SCCs, membership array, list of closed classes)."""
    support = csr_matrix(chain.matrix > 0)
    n_comp, member = connected_components(support, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        idx = np.nonzero(member == c)[0]
        outside = chain.matrix[np.ix_(idx, np.nonzero(member != c)[0])]
        if outside.size == 0 or outside.sum() == 0:
            closed.append([int(i) for i in idx])
    return n_comp, member, closed


def is_irreducible(chain: FiniteChain) -> bool:
    n_comp, _, _ = communicating_structure(chain)
    return n_comp == 1


def period(chain: FiniteChain) -> int:
    """Period of an irreducible chain: gcd of level mismatches on the support graph."""
    import math

    P = chain.matrix
    n = chain.n
    level = np.full(n, -1)
    level[0] = 0
    queue = [0]
    edges = []
    while queue:
        u = queue.pop()
        for v in np.nonzero(P[u] > 0)[0]:
            edges.append((u, int(v)))
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u, v in edges:
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return g if g > 0 else 1


def stationary(chain: FiniteChain) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1 by direct linear solve; residual <= 1e-10."""
    n_comp, _, closed = communicating_structure(chain)
    if n_comp != 1:
        raise ReducibleChainError(closed)
    n = chain.n
    A = chain.matrix.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    residual = float(np.max(np.abs(pi @ chain.matrix - pi)))
    if residual > 1e-10:
        raise ArithmeticError(f"stationary solve residual {residual} exceeds 1e-10")
    return pi


def f_norm_distance(chain: FiniteChain, x: int, n: int, f=None) -> float:
    """sum_y f(y) |P^n(x, y) - pi(y)|; with f = 1 this is the TV distance."""
    if n < 0:
        raise ValueError("n must be >= 0")
    fvec = np.ones(chain.n) if f is None else np.asarray(f, dtype=float)
    if np.any(fvec < 1):
        raise ValueError("f must satisfy f(y) >= 1 everywhere")
    pi = stationary(chain)
    row = np.zeros(chain.n)
    row[int(x)] = 1.0
    Pn = np.linalg.matrix_power(chain.matrix, n)
    return float(np.sum(fvec * np.abs(row @ Pn - pi)))


def slem(chain: FiniteChain) -> float:
    """Second-largest eigenvalue modulus; the asymptotic geometric decay rate."""
    if not is_irreducible(chain):
        raise ReducibleChainError(communicating_structure(chain)[2])
    d = period(chain)
    if d > 1:
        raise PeriodicChainError(d)
    ev = np.linalg.eigvals(chain.matrix)
    mods = np.sort(np.abs(ev))[::-1]
    return float(mods[1]) if len(mods) > 1 else 0.0


def mean_hitting_times(chain: FiniteChain, B) -> np.ndarray:
    """E_x[T_B] for all x from the standard linear system (T_B = first t >= 1 in B)."""
    B = sorted(set(int(b) for b in B))
    n = chain.n
    mask = np.ones(n, dtype=bool)
    mask[B] = False
    Q = chain.matrix[np.ix_(mask, mask)]
    h_out = np.linalg.solve(np.eye(mask.sum()) - Q, np.ones(mask.sum()))
    # one-step conditioning works for every start, including x in B
    return 1.0 + chain.matrix[:, mask] @ h_out


def expected_hitting_sum(chain: FiniteChain, x: int, B, f=None, r: RateFunction | None = None,
                         horizon: int = 2000) -> dict:
    """E_x[sum_{k=0}^{T_B - 1} r(k) f(x_k)] by dynamic programming.

    Propagates the survival measure mu_k(y) = P_x(x_k = y, x_1..x_k not in B)
    and accumulates r(k) * <mu_k, f>.  Returns the truncated value plus a tail
    bound built from the survival decay (valid whenever the worst one-step
    escape probability away from B is < 1); `value` is exact as horizon -> oo.
    """
    B = sorted(set(int(b) for b in B))
    if not B:
        raise ValueError("B must be nonempty")
    n = chain.n
    fvec = np.ones(n) if f is None else np.asarray(f, dtype=float)
    rfun = (lambda k: 1.0) if r is None else r.eval
    mask_out = np.ones(n, dtype=bool)
    mask_out[B] = False
    # reachability gate: from x, B must be reachable or the sum diverges
    reach = {int(x)}
    frontier = [int(x)]
    while frontier:
        u = frontier.pop()
        for v in np.nonzero(chain.matrix[u] > 0)[0]:
            if int(v) not in reach:
                reach.add(int(v))
                frontier.append(int(v))
    if not reach & set(B):
        raise ValueError("B is unreachable from x; the expectation diverges")

    lam_escape = float(chain.matrix[mask_out][:, mask_out].sum(axis=1).max()) if mask_out.sum() else 0.0
    mu = np.zeros(n)
    mu[int(x)] = 1.0
    total = rfun(0) * fvec[int(x)]
    survival = 1.0
    k = 0
    while k < horizon and survival > 1e-300:
        nxt = mu @ chain.matrix
        nxt[~mask_out] = 0.0
        mu = nxt
        survival = float(mu.sum())
        k += 1
        total += rfun(k) * float(mu @ fvec)
    # tail: survival mass decays at worst by lam_escape per step; r grows
    # submultiplicatively, so sum r(k + j) s_k lam^j <= r(k) s_k sum r(j) lam^j
    tail = 0.0
    if survival > 0 and lam_escape < 1:
        fmax = float(fvec.max())
        acc = 0.0
        lamj = 1.0
        for j in range(1, 10000):
            lamj *= lam_escape
            inc = rfun(j) * lamj
            acc += inc
            if inc < 1e-16 * max(acc, 1.0):
                break
        tail = rfun(k) * survival * fmax * acc
    elif survival > 0:
        tail = float("inf")
    return {"value": float(total), "tail_bound": float(tail), "steps": k,
            "survival_mass": survival}


def exact_geometric_moment(chain: FiniteChain, C, kappa: float) -> dict:
    """E_x[kappa^{T_C}] for every x by the first-step linear system.

    Returns {'diverges': True, 'spectral_radius': rho} when kappa * P
    restricted to the complement of C has spectral radius >= 1.
    """
    C = sorted(set(int(c) for c in C))
    if not C:
        raise ValueError("C must be nonempty")
    n = chain.n
    mask_out = np.ones(n, dtype=bool)
    mask_out[C] = False
    values = np.empty(n)
    if mask_out.sum():
        Q = chain.matrix[np.ix_(mask_out, mask_out)]
        rho = float(np.max(np.abs(np.linalg.eigvals(kappa * Q)))) if Q.size else 0.0
        if rho >= 1.0 - 1e-12:
            return {"diverges": True, "spectral_radius": rho, "values": None}
        bvec = chain.matrix[mask_out][:, C].sum(axis=1)
        z_out = np.linalg.solve(np.eye(mask_out.sum()) - kappa * Q, kappa * bvec)
        values[mask_out] = z_out
    else:
        rho = 0.0
        z_out = np.zeros(0)
    p_in = chain.matrix[:, C].sum(axis=1)
    values[~mask_out] = kappa * (p_in[~mask_out] + chain.matrix[~mask_out][:, mask_out] @ z_out)
    return {"diverges": False, "spectral_radius": rho, "values": values}


def find_minorization(chain: FiniteChain, C, n0: int = 1) -> MinorizationWitness:
    """Columnwise minima of P^{n0} over C; epsilon is their total mass."""
    C = sorted(set(int(c) for c in C))
    if not C:
        raise ValueError("C must be nonempty")
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    Pn = np.linalg.matrix_power(chain.matrix, n0)
    nu_tilde = Pn[C].min(axis=0)
    eps = float(nu_tilde.sum())
    if eps <= 0:
        raise ValueError(f"C is not small at n0 = {n0}: the minorization mass is zero")
    return MinorizationWitness(C=tuple(C), n0=int(n0), epsilon=eps, nu=nu_tilde / eps)


def petite_minorization(chain: FiniteChain, C, weights) -> MinorizationWitness:
    """Minorization for the mixture sum_k a(k) P^k with weights a on 0..len-1.

    Exhibits one petite witness; the step-count distribution is the caller's
    choice (finite mean recommended).
    """
    a = np.asarray(weights, dtype=float)
    if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability distribution")
    C = sorted(set(int(c) for c in C))
    mix = np.zeros_like(chain.matrix)
    Pk = np.eye(chain.n)
    for k, w in enumerate(a):
        if k > 0:
            Pk = Pk @ chain.matrix
        mix += w * Pk
    nu_tilde = mix[C].min(axis=0)
    eps = float(nu_tilde.sum())
    if eps <= 0:
        raise ValueError("mixture admits no minorization on C")
    return MinorizationWitness(C=tuple(C), n0=0, epsilon=eps, nu=nu_tilde / eps)


def check_univariate_drift(chain: FiniteChain, V, C) -> dict:
    """Exact one-step drift: PV <= lambda V + b 1_C.

    lambda is the worst ratio (PV)(x)/V(x) off C; success iff lambda < 1.
    """
    V = np.asarray(V, dtype=float)
    if np.any(V < 1):
        raise ValueError("V must satisfy V(x) >= 1")
    C = sorted(set(int(c) for c in C))
    mask_out = np.ones(chain.n, dtype=bool)
    mask_out[C] = False
    PV = chain.matrix @ V
    if mask_out.sum():
        ratios = PV[mask_out] / V[mask_out]
        lam = float(ratios.max())
        argmax = int(np.nonzero(mask_out)[0][int(np.argmax(ratios))])
    else:
        lam, argmax = 0.0, None
    b = float(np.max(np.maximum(PV[C] - lam * V[C], 0.0))) if C else 0.0
    ok = lam < 1.0
    out = {"success": ok, "lambda": lam, "b": b, "PV": PV}
    if not ok:
        out["witness_state"] = argmax
    return out
