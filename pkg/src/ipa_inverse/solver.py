"""The Iterative Projection Algorithm.

    f^{n+1} = P_A^{eps_n}(f^n + mu * T^*(g - T f^n)),   f^0 = 0

With ``A`` the K-sparse vectors this is iterative hard thresholding; with a
convex ``A`` it would be projected Landweber.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .hilbert import as_vector, spectral_norm_sq_estimate

__all__ = [
    "ConstantEps",
    "GeometricEps",
    "SolverConfig",
    "IPAStepRecord",
    "SolverTrace",
    "DivergenceError",
    "ConditionError",
    "default_mu",
    "ipa_step",
    "solve",
    "iteration_budget",
    "write_trace",
    "read_trace",
]

STAGNATION_WINDOW = 10
DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """The iteration produced a non-finite iterate or an exploding residual."""

    def __init__(self, iteration, reason):
        super().__init__(f"divergence at iteration {iteration}: {reason}")
        self.iteration = iteration


class ConditionError(ValueError):
    """The contraction condition beta <= 1/mu < 1.5*alpha cannot be certified."""


@dataclass(frozen=True)
class ConstantEps:
    eps: float = 0.0

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("eps must be >= 0")

    def __call__(self, n):
        return self.eps

    @property
    def sup(self):
        return self.eps


@dataclass(frozen=True)
class GeometricEps:
    """eps_n = eps0 * ratio**n, which tends to zero."""

    eps0: float
    ratio: float = 0.5

    def __post_init__(self):
        if not self.eps0 >= 0:
            raise ValueError("eps0 must be >= 0")
        if not 0 < self.ratio < 1:
            raise ValueError("geometric ratio must lie in (0, 1)")

    def __call__(self, n):
        return self.eps0 * self.ratio ** n

    @property
    def sup(self):
        return self.eps0


@dataclass(frozen=True)
class SolverConfig:
    mu: float
    eps_schedule: object = field(default_factory=ConstantEps)
    max_iter: int = 500
    residual_tol: float = 0.0
    stagnation_tol: float = 0.0
    # accuracy parameter of the iteration budget; unrelated to projection eps
    delta: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"step size mu must be finite and positive, got {self.mu}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.residual_tol < 0 or self.stagnation_tol < 0:
            raise ValueError("tolerances must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass
class IPAStepRecord:
    """State at iterate ``iter``.

    ``gradient_direction`` is r = 2 T^*(g - T f^n) and ``eps_used`` the
    projection tolerance applied when stepping from this iterate.
    """

    iter: int
    iterate: np.ndarray
    residual_norm: float
    eps_used: float
    gradient_direction: np.ndarray
    dist_to_reference: float | None = None


@dataclass
class SolverTrace:
    records: list
    final_iterate: np.ndarray
    termination_reason: str
    mu: float = float("nan")

    @property
    def iters_used(self):
        return self.records[-1].iter

    def iterates(self):
        return [rec.iterate for rec in self.records]

    def decay_ratios(self):
        """Squared-distance ratios ||f_A - f^n||^2 / ||f_A - f^{n-1}||^2 (None where undefined)."""
        out = [None]
        for prev, cur in zip(self.records, self.records[1:]):
            if prev.dist_to_reference is None or cur.dist_to_reference is None or prev.dist_to_reference == 0:
                out.append(None)
            else:
                out.append((cur.dist_to_reference / prev.dist_to_reference) ** 2)
        return out


def default_mu(op, safety=0.99, iters=200, seed=0):
    """mu = safety / ||T||^2, so that 1/mu dominates any set-restricted beta."""
    beta_hat = spectral_norm_sq_estimate(op, iters=iters, seed=seed)
    if beta_hat <= 0:
        raise ValueError("operator norm estimate is zero; cannot derive a step size")
    return safety / beta_hat


def _record(n, f, g, op, eps_n, reference):
    with np.errstate(over="ignore", invalid="ignore"):
        resid = g - op.apply(f)
    if not np.all(np.isfinite(resid)):
        raise DivergenceError(n, "non-finite residual")
    r = 2.0 * op.adjoint_apply(resid)
    dist = None if reference is None else float(np.linalg.norm(reference - f))
    return IPAStepRecord(n, f, float(np.linalg.norm(resid)), eps_n, r, dist), resid


def _project(cset, v, eps_n):
    res = cset.project(v, eps_n)
    if res.achieved_eps > eps_n:
        raise ValueError(f"projection achieved eps {res.achieved_eps} above requested {eps_n}")
    return res.point


def ipa_step(f_n, g, op, cset, mu, eps_n=0.0, n=0, reference=None):
    """One IPA update. Returns ``(f_next, record)`` where the record describes ``f_n``."""
    f_n = as_vector(f_n, op.domain_dim, "iterate")
    g = as_vector(g, op.codomain_dim, "measurement")
    rec, resid = _record(n, f_n, g, op, eps_n, reference)
    f_next = _project(cset, f_n + mu * op.adjoint_apply(resid), eps_n)
    return f_next, rec


def solve(g, op, cset, config, reference=None, budget=None):
    """Run the IPA from f^0 = 0.

    Exits are checked in this order at every iterate: divergence (raises
    :class:`DivergenceError`), ``residual_tol`` ("converged"), ``budget``
    ("iteration_budget"), stagnation of the residual over 10 consecutive
    steps ("stagnated"), ``max_iter`` ("max_iter").
    """
    g = as_vector(g, op.codomain_dim, "measurement")
    if reference is not None:
        reference = as_vector(reference, op.domain_dim, "reference")
    mu = config.mu
    eps = config.eps_schedule
    f = np.zeros(op.domain_dim)
    baseline = float(np.linalg.norm(g))
    limit = DIVERGENCE_FACTOR * max(baseline, np.finfo(np.float64).tiny)
    records = []
    steady = 0
    n = 0
    while True:
        rec, resid = _record(n, f, g, op, eps(n), reference)
        records.append(rec)
        if not (np.all(np.isfinite(f)) and math.isfinite(rec.residual_norm)):
            raise DivergenceError(n, "non-finite iterate")
        if rec.residual_norm > limit:
            raise DivergenceError(n, f"residual {rec.residual_norm:.3e} exceeds {DIVERGENCE_FACTOR:g} x initial {baseline:.3e}")
        if n > 0:
            change = abs(rec.residual_norm - records[-2].residual_norm)
            steady = steady + 1 if change <= config.stagnation_tol else 0

        if rec.residual_norm <= config.residual_tol:
            reason = "converged"
        elif budget is not None and n >= budget:
            reason = "iteration_budget"
        elif steady >= STAGNATION_WINDOW:
            reason = "stagnated"
        elif n >= config.max_iter:
            reason = "max_iter"
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                step = f + mu * op.adjoint_apply(resid)
            if not np.all(np.isfinite(step)):
                raise DivergenceError(n + 1, "non-finite iterate")
            f = _project(cset, step, rec.eps_used)
            n += 1
            continue
        return SolverTrace(records, f, reason, mu)


def iteration_budget(alpha, mu, delta, etilde_norm, eps, fA_norm):
    """Iteration count n* after which the terminal error bound holds.

    n* = ceil(2 ln(delta (||e~|| + sqrt(eps/(2 mu))) / ||f_A||) / ln(2/(mu alpha) - 2))

    Returns 0 when the log argument is >= 1 (f^0 = 0 already meets the
    target). A contraction factor of exactly zero or below means one step
    suffices.
    """
    if not (alpha > 0 and mu > 0):
        raise ConditionError("condition beta <= 1/mu < 1.5 alpha not certifiable: need alpha, mu > 0")
    rho = 2.0 / (mu * alpha) - 2.0
    if rho >= 1.0:
        raise ConditionError(
            f"condition beta <= 1/mu < 1.5 alpha not certifiable: contraction factor {rho:.6g} >= 1")
    if not fA_norm > 0:
        raise ValueError("||f_A|| must be positive")
    noise = etilde_norm + math.sqrt(eps / (2.0 * mu))
    if not noise > 0:
        raise ValueError("||e~|| + sqrt(eps/(2 mu)) must be positive")
    arg = delta * noise / fA_norm
    if arg >= 1.0:
        return 0
    if rho <= 0.0:
        return 1
    return max(0, math.ceil(2.0 * math.log(arg) / math.log(rho)))


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_trace(path, trace):
    """Columns: iter, residual_norm, eps_used, dist_to_reference, decay_ratio."""
    ratios = trace.decay_ratios()
    lines = ["iter,residual_norm,eps_used,dist_to_reference,decay_ratio"]
    for rec, ratio in zip(trace.records, ratios):
        lines.append(",".join([
            str(rec.iter), _fmt(rec.residual_norm), _fmt(rec.eps_used),
            _fmt(rec.dist_to_reference), _fmt(ratio),
        ]))
    lines.append(f"# termination={trace.termination_reason}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path):
    """Parse a trace CSV back into (rows, termination_reason); rows are dicts."""
    rows, reason = [], None
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            line = line.strip()
            if line.startswith("# termination="):
                reason = line.split("=", 1)[1]
            elif line:
                vals = line.split(",")
                rows.append({k: (None if v == "" else int(v) if k == "iter" else float(v))
                             for k, v in zip(header, vals)})
    return rows, reason
