"""Bi-Lipschitz constants, the convergence condition, error bounds and audits.

For a set ``A`` the constants satisfy

    alpha ||f1 + f2||^2 <= ||T(f1 + f2)||^2 <= beta ||f1 + f2||^2,  f1, f2 in A.

For K-sparse sets the sums live on supports of size 2K, and by eigenvalue
interlacing the extremes are attained on supports of exactly that size.
"""
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .hilbert import as_vector
from .sets import KSparse, UnionOfSubspaces
from .solver import ConditionError, iteration_budget

__all__ = [
    "EnumerationCapExceeded",
    "BiLipschitzEstimate",
    "BoundReport",
    "OracleResult",
    "TraceAudit",
    "exact_bilipschitz_sparse",
    "exact_bilipschitz_uos",
    "exact_bilipschitz",
    "mc_bilipschitz",
    "condition_check",
    "contraction_factor",
    "c_constant",
    "evaluate_bounds",
    "brute_force_fopt",
    "audit_trace",
    "neighborhood_entry",
]

ENUMERATION_CAP = 10**6
_CHUNK = 8192


class EnumerationCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class BiLipschitzEstimate:
    alpha: float
    beta: float
    method: str
    trials_or_supports: int

    @property
    def is_bilipschitz(self):
        """False when alpha <= 0, i.e. T is not injective on sums from A."""
        return self.alpha > 0


@dataclass(frozen=True)
class BoundReport:
    condition_pass: bool
    condition_margin: float
    theorem2_rhs: float | None
    lemma2_rhs: float | None
    c: float | None = None
    c_statement: float | None = None
    n_star: int | None = None
    theorem4_rhs: float | None = None
    contraction: float | None = None

    def as_rows(self):
        return [(k, getattr(self, k)) for k in (
            "condition_pass", "condition_margin", "contraction", "c", "c_statement",
            "n_star", "theorem4_rhs", "theorem2_rhs", "lemma2_rhs")]


@dataclass(frozen=True)
class OracleResult:
    f_opt: np.ndarray
    residual: float
    support_or_index: object
    candidates: int


@dataclass(frozen=True)
class TraceAudit:
    checked: int
    lemma3_violations: int
    errb_violations: int
    worst_relative_violation: float

    @property
    def violations(self):
        return self.lemma3_violations + self.errb_violations


def _dense(op):
    return np.asarray(op.to_dense(), dtype=np.float64)


def exact_bilipschitz_sparse(op, K, cap=ENUMERATION_CAP):
    """Exact constants for K-sparse sets by enumerating all size-2K supports.

    alpha (beta) is the smallest (largest) eigenvalue over every 2K x 2K
    Gram submatrix T_S^T T_S. A non-positive alpha is returned as a finding.
    """
    A = _dense(op)
    N = A.shape[1]
    if K < 1:
        raise ValueError("K must be >= 1")
    s = min(2 * K, N)
    count = math.comb(N, s)
    if count > cap:
        raise EnumerationCapExceeded(
            f"C({N},{s}) = {count} supports exceeds the cap {cap}; use mc_bilipschitz")
    G = A.T @ A
    lo, hi = np.inf, -np.inf
    it = combinations(range(N), s)
    while True:
        chunk = np.array([c for _, c in zip(range(_CHUNK), it)], dtype=np.intp)
        if chunk.size == 0:
            break
        sub = G[chunk[:, :, None], chunk[:, None, :]]
        ev = np.linalg.eigvalsh(sub)
        lo = min(lo, float(ev[:, 0].min()))
        hi = max(hi, float(ev[:, -1].max()))
    return BiLipschitzEstimate(lo, hi, "exact_enumeration", count)


def _orth(M, rtol=1e-12):
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, s > rtol * s[0]]


def exact_bilipschitz_uos(op, uos, cap=ENUMERATION_CAP):
    """Exact constants over all subspace pairs (i <= j) of a union of subspaces."""
    A = _dense(op)
    L = len(uos.bases)
    count = L * (L + 1) // 2
    if count > cap:
        raise EnumerationCapExceeded(f"{count} subspace pairs exceeds the cap {cap}; use mc_bilipschitz")
    lo, hi = np.inf, -np.inf
    for i in range(L):
        for j in range(i, L):
            Q = _orth(np.hstack([uos.bases[i], uos.bases[j]]))
            if Q.shape[1] == 0:
                continue
            TQ = A @ Q
            ev = np.linalg.eigvalsh(TQ.T @ TQ)
            lo = min(lo, float(ev[0]))
            hi = max(hi, float(ev[-1]))
    return BiLipschitzEstimate(lo, hi, "exact_enumeration", count)


def exact_bilipschitz(op, cset, cap=ENUMERATION_CAP):
    if isinstance(cset, KSparse):
        return exact_bilipschitz_sparse(op, cset.k, cap)
    if isinstance(cset, UnionOfSubspaces):
        return exact_bilipschitz_uos(op, cset, cap)
    raise EnumerationCapExceeded(f"no exact enumeration for {cset}; use mc_bilipschitz")


def mc_bilipschitz(op, cset, trials, seed=0):
    """Sampled inner bracket of (alpha, beta) from random pairs f1, f2 in A.

    Pairs whose sum has norm below 1e-12 are skipped. Because every sample
    is a feasible sum, alpha_mc >= alpha and beta_mc <= beta.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = op.domain_dim
    lo, hi, used = np.inf, -np.inf, 0
    for _ in range(trials):
        s = cset.sample(rng, n) + cset.sample(rng, n)
        ns = float(s @ s)
        if math.sqrt(ns) < 1e-12:
            continue
        Ts = op.apply(s)
        q = float(Ts @ Ts) / ns
        lo, hi = min(lo, q), max(hi, q)
        used += 1
    if used == 0:
        raise ValueError("every sampled pair was degenerate")
    return BiLipschitzEstimate(lo, hi, "monte_carlo", trials)


def condition_check(est, mu):
    """(pass, margin) for beta <= 1/mu < 1.5 alpha; margin = min(1/mu - beta, 1.5 alpha - 1/mu)."""
    inv = 1.0 / mu
    passed = est.beta <= inv < 1.5 * est.alpha
    return passed, min(inv - est.beta, 1.5 * est.alpha - inv)


def contraction_factor(alpha, mu):
    """Per-iteration factor 2(1/(mu alpha) - 1) on the squared error."""
    return 2.0 * (1.0 / (mu * alpha) - 1.0)


def c_constant(alpha, mu):
    """Error amplification 4 / (3 alpha - 2/mu)."""
    return 4.0 / (3.0 * alpha - 2.0 / mu)


def evaluate_bounds(est, mu, delta, eps, etilde_norm, f_minus_fA_norm, fA_norm, proj_tol=0.0):
    """Evaluate the optimal-estimate and IPA error bounds.

    ``eps`` is the optimality/projection tolerance, ``delta`` the accuracy
    of the iteration budget and ``proj_tol`` the tolerance of the projection
    that produced f_A (0 for exact projections). ``c_statement`` holds
    4/(3 alpha - 2 mu), which differs from ``c`` when mu != 1.
    """
    passed, margin = condition_check(est, mu)
    alpha = est.alpha
    t2 = l2 = None
    if alpha > 0:
        ra = math.sqrt(alpha)
        l2 = (2.0 * etilde_norm + math.sqrt(eps)) / ra
        t2 = 2.0 * etilde_norm / ra + f_minus_fA_norm + math.sqrt(eps) / ra + math.sqrt(proj_tol)
    if not passed:
        return BoundReport(False, margin, t2, l2)
    c = c_constant(alpha, mu)
    denom = 3.0 * alpha - 2.0 * mu
    c_stmt = 4.0 / denom if denom > 0 else None
    noise = etilde_norm + math.sqrt(eps / (2.0 * mu))
    try:
        n_star = iteration_budget(alpha, mu, delta, etilde_norm, eps, fA_norm)
    except (ConditionError, ValueError):
        n_star = None
    t4 = (math.sqrt(c) + delta) * noise + f_minus_fA_norm
    return BoundReport(True, margin, t2, l2, c, c_stmt, n_star, t4, contraction_factor(alpha, mu))


def brute_force_fopt(g, op, cset, cap=ENUMERATION_CAP):
    """Exhaustive minimiser of ||g - T f|| over an enumerable set.

    Each support (lexicographic order) or listed subspace is solved by
    minimum-norm least squares. Residuals within 1e-12 * max(1, ||g||) of
    the incumbent count as ties, which the first candidate found wins.
    """
    A = _dense(op)
    g = as_vector(g, A.shape[0], "measurement")
    N = A.shape[1]
    if isinstance(cset, KSparse):
        if cset.k > N:
            raise ValueError(f"K={cset.k} exceeds dimension {N}")
        count = math.comb(N, cset.k)
        if count > cap:
            raise EnumerationCapExceeded(f"C({N},{cset.k}) = {count} supports exceeds the cap {cap}")

        def candidates():
            for S in combinations(range(N), cset.k):
                idx = list(S)
                coef = np.linalg.lstsq(A[:, idx], g, rcond=None)[0] if idx else np.zeros(0)
                f = np.zeros(N)
                f[idx] = coef
                yield S, f
    elif isinstance(cset, UnionOfSubspaces):
        count = len(cset.bases)

        def candidates():
            for i, B in enumerate(cset.bases):
                coef = np.linalg.lstsq(A @ B, g, rcond=None)[0]
                yield i, B @ coef
    else:
        raise EnumerationCapExceeded(f"{cset} is not enumerable")

    tie = 1e-12 * max(1.0, float(np.linalg.norm(g)))
    best = None
    for key, f in candidates():
        res = float(np.linalg.norm(g - A @ f))
        if best is None or res < best[1] - tie:
            best = (f, res, key)
    return OracleResult(best[0], best[1], best[2], count)


def audit_trace(trace, est, mu, eps_schedule, reference, g, op, slack=1e-9):
    """Re-check the one-step descent inequality and the squared-error recursion.

    For each n, with r = 2 T^*(g - T f^n) and e~ = g - T f_A:

        ||g - T f^{n+1}||^2 - ||g - T f^n||^2
            <= -<f_A - f^n, r> + ||f_A - f^n||^2 / mu + eps_n / mu

        ||f_A - f^{n+1}||^2
            <= 2(1/(mu alpha) - 1) ||f_A - f^n||^2 + (4/alpha) ||e~||^2 + 2 eps_n / (mu alpha)

    Everything is recomputed from the stored iterates. A violation is an
    excess above ``slack`` times the sum of magnitudes of the terms.
    """
    fA = as_vector(reference, op.domain_dim, "reference")
    g = as_vector(g, op.codomain_dim, "measurement")
    alpha = est.alpha
    et2 = float(np.sum((g - op.apply(fA)) ** 2))
    iterates = trace.iterates()
    res2 = [float(np.sum((g - op.apply(f)) ** 2)) for f in iterates]
    lem = errb = 0
    worst = 0.0
    for n in range(len(iterates) - 1):
        f, f1 = iterates[n], iterates[n + 1]
        eps_n = eps_schedule(n)
        r = 2.0 * op.adjoint_apply(g - op.apply(f))
        d = fA - f
        d2 = float(d @ d)
        inner = float(d @ r)
        lhs = res2[n + 1] - res2[n]
        rhs = -inner + d2 / mu + eps_n / mu
        scale = 1.0 + res2[n + 1] + res2[n] + abs(inner) + d2 / mu + eps_n / mu
        excess = (lhs - rhs) / scale
        if excess > slack:
            lem += 1
        worst = max(worst, excess)

        d1 = float(np.sum((fA - f1) ** 2))
        rhs = contraction_factor(alpha, mu) * d2 + 4.0 / alpha * et2 + 2.0 * eps_n / (mu * alpha)
        scale = 1.0 + d1 + abs(contraction_factor(alpha, mu)) * d2 + 4.0 / alpha * et2 + 2.0 * eps_n / (mu * alpha)
        excess = (d1 - rhs) / scale
        if excess > slack:
            errb += 1
        worst = max(worst, excess)
    return TraceAudit(len(iterates) - 1, lem, errb, worst)


def neighborhood_entry(trace, f_opt, radius_sq, slack=0.0):
    """First index n0 with ||f_opt - f^n||^2 <= radius_sq + slack for all n >= n0, else None."""
    f_opt = np.asarray(f_opt, dtype=np.float64)
    d2 = [float(np.sum((f_opt - f) ** 2)) for f in trace.iterates()]
    n0 = None
    for n in range(len(d2) - 1, -1, -1):
        if d2[n] <= radius_sq + slack:
            n0 = n
        else:
            break
    return n0
