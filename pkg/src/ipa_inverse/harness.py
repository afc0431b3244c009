"""Seeded problem generation and batch experiments.

Random numbers come from numpy's PCG64 bit generator seeded with the trial
seed; normal variates use numpy's ``Generator.standard_normal``. Draws
happen in a fixed order: operator, signal, noise.
"""
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .hilbert import DimensionError, LinearOperator, read_matrix, read_vector, spectral_norm_sq_estimate
from .sets import KSparse, UnionOfSubspaces, parse_set
from .solver import ConstantEps, DivergenceError, GeometricEps, SolverConfig, solve

__all__ = [
    "ProblemSpec",
    "Problem",
    "ExperimentConfig",
    "make_rng",
    "generate_problem",
    "load_config",
    "parse_config",
    "run_trial",
    "run_experiment",
    "RESULT_COLUMNS",
    "format_results",
]

OPERATOR_KINDS = ("gaussian_normalized", "gaussian_raw", "identity", "diagonal", "near_identity", "from_file")
SIGNAL_KINDS = ("in_set_random", "near_set", "from_file")

RESULT_COLUMNS = (
    "trial", "seed", "alpha", "beta", "mu", "condition_pass", "n_star", "iters_used",
    "final_residual", "err_true", "theorem4_rhs", "bound_satisfied", "oracle_residual",
    "lemma2_lhs", "lemma2_rhs", "termination", "status",
)

BOUND_SLACK = 1e-9


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ProblemSpec:
    N: int
    M: int
    set_descriptor: str
    operator_kind: str = "gaussian_normalized"
    signal_kind: str = "in_set_random"
    noise_sigma: float = 0.0
    seed: int = 0
    operator_values: tuple = ()
    operator_sigma: float = 0.05
    operator_path: str | None = None
    signal_sigma: float = 0.1
    signal_path: str | None = None

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("N and M must be >= 1")
        if self.operator_kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.operator_kind!r}")
        if self.signal_kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.signal_kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class Problem:
    op: LinearOperator
    f_true: np.ndarray
    e: np.ndarray
    g: np.ndarray
    cset: object


def _operator(spec, rng):
    N, M, kind = spec.N, spec.M, spec.operator_kind
    if kind in ("identity", "diagonal", "near_identity") and M != N:
        raise DimensionError(f"{kind} operator needs M == N, got M={M}, N={N}")
    if kind == "gaussian_normalized":
        A = rng.standard_normal((M, N))
        return LinearOperator.dense(A / np.linalg.norm(A, axis=0))
    if kind == "gaussian_raw":
        return LinearOperator.dense(rng.standard_normal((M, N)))
    if kind == "identity":
        return LinearOperator.identity(N)
    if kind == "diagonal":
        if len(spec.operator_values) != N:
            raise DimensionError(f"diagonal operator needs {N} values, got {len(spec.operator_values)}")
        return LinearOperator.diagonal(spec.operator_values)
    if kind == "near_identity":
        return LinearOperator.dense(np.eye(N) + spec.operator_sigma * rng.standard_normal((N, N)) / math.sqrt(N))
    A = read_matrix(spec.operator_path)
    if A.shape != (M, N):
        raise DimensionError(f"{spec.operator_path}: operator has shape {A.shape}, expected ({M}, {N})")
    return LinearOperator.dense(A)


def generate_problem(spec):
    """Build (op, f_true, e, g) for g = T f_true + e, deterministically in ``spec.seed``."""
    rng = make_rng(spec.seed)
    cset = parse_set(spec.set_descriptor)
    op = _operator(spec, rng)
    if spec.signal_kind == "from_file":
        f = read_vector(spec.signal_path)
        if f.size != spec.N:
            raise DimensionError(f"{spec.signal_path}: signal has length {f.size}, expected {spec.N}")
    else:
        f = cset.sample(rng, spec.N)
        if f.size != spec.N:
            raise DimensionError(f"set {spec.set_descriptor} lives in dimension {f.size}, expected N={spec.N}")
        if spec.signal_kind == "near_set":
            f = cset.project(f).point
            f = f + spec.signal_sigma * cset.off_set_direction(f, rng)
    if spec.noise_sigma > 0:
        e = spec.noise_sigma * rng.standard_normal(spec.M)
    else:
        e = np.zeros(spec.M)
    g = op.apply(f) + e
    return Problem(op, f, e, g, cset)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    mu: float | None = None  # None means 0.99 / ||T||^2
    eps_schedule: object = field(default_factory=ConstantEps)
    max_iter: int = 500
    residual_tol: float = 0.0
    stagnation_tol: float = 0.0
    delta: float = 0.1
    trials: int = 1
    analysis_mode: str = "exact"
    mc_trials: int = 2000
    output_path: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.analysis_mode not in ("exact", "mc", "none"):
            raise ValueError(f"analysis must be exact, mc or none, got {self.analysis_mode!r}")


# --- config files ------------------------------------------------------------

_INT_KEYS = {"N", "M", "seed", "max_iter", "trials", "mc_trials"}
_FLOAT_KEYS = {"noise_sigma", "operator_sigma", "signal_sigma", "eps", "eps_ratio",
               "residual_tol", "stagnation_tol", "delta"}
_STR_KEYS = {"operator", "set", "signal", "operator_path", "signal_path", "operator_values",
             "mu", "eps_schedule", "analysis", "output"}


def parse_config(text, base_dir="."):
    """Parse the flat ``key = value`` config format into an :class:`ExperimentConfig`.

    Blank lines and ``#`` comments are ignored. Relative file paths are
    resolved against ``base_dir``.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"config line {lineno}: expected key = value")
        if key not in _INT_KEYS | _FLOAT_KEYS | _STR_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        try:
            raw[key] = int(value) if key in _INT_KEYS else float(value) if key in _FLOAT_KEYS else value
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value for {key}: {value!r}") from exc
    for key in ("N", "M", "set"):
        if key not in raw:
            raise ValueError(f"config is missing required key {key!r}")

    base = Path(base_dir)

    def resolve(p):
        return None if p is None else str(p if Path(p).is_absolute() else base / p)

    set_desc = raw["set"]
    if set_desc.startswith("uos:"):
        set_desc = "uos:" + resolve(set_desc[4:])
    values = tuple(float(v) for v in raw["operator_values"].split(",")) if "operator_values" in raw else ()
    problem = ProblemSpec(
        N=raw["N"], M=raw["M"], set_descriptor=set_desc,
        operator_kind=raw.get("operator", "gaussian_normalized"),
        signal_kind=raw.get("signal", "in_set_random"),
        noise_sigma=raw.get("noise_sigma", 0.0), seed=raw.get("seed", 0),
        operator_values=values, operator_sigma=raw.get("operator_sigma", 0.05),
        operator_path=resolve(raw.get("operator_path")),
        signal_sigma=raw.get("signal_sigma", 0.1), signal_path=resolve(raw.get("signal_path")),
    )
    mu = raw.get("mu", "auto")
    schedule = raw.get("eps_schedule", "constant")
    if schedule == "constant":
        eps = ConstantEps(raw.get("eps", 0.0))
    elif schedule == "geometric":
        eps = GeometricEps(raw.get("eps", 0.1), raw.get("eps_ratio", 0.5))
    else:
        raise ValueError(f"eps_schedule must be constant or geometric, got {schedule!r}")
    return ExperimentConfig(
        problem=problem, mu=None if mu == "auto" else float(mu), eps_schedule=eps,
        max_iter=raw.get("max_iter", 500), residual_tol=raw.get("residual_tol", 0.0),
        stagnation_tol=raw.get("stagnation_tol", 0.0), delta=raw.get("delta", 0.1),
        trials=raw.get("trials", 1), analysis_mode=raw.get("analysis", "exact"),
        mc_trials=raw.get("mc_trials", 2000), output_path=resolve(raw.get("output")),
    )


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


# --- experiments -------------------------------------------------------------

def run_trial(config, t):
    """Run trial ``t`` (seed = base seed + t) and return one result row as a dict."""
    seed = config.problem.seed + t
    row = dict.fromkeys(RESULT_COLUMNS)
    row.update(trial=t, seed=seed, status="ok")
    try:
        prob = generate_problem(replace(config.problem, seed=seed))
        op, cset, g, f_true = prob.op, prob.cset, prob.g, prob.f_true
        mu = config.mu
        if mu is None:
            beta_hat = spectral_norm_sq_estimate(op, iters=200)
            if beta_hat <= 0:
                raise ValueError("zero operator: cannot choose mu")
            mu = 0.99 / beta_hat
        row["mu"] = mu

        fA = cset.project(f_true).point
        etilde = float(np.linalg.norm(g - op.apply(fA)))
        f_minus_fA = float(np.linalg.norm(f_true - fA))
        eps = config.eps_schedule.sup

        report = None
        if config.analysis_mode != "none":
            if config.analysis_mode == "exact":
                est = analysis.exact_bilipschitz(op, cset)
            else:
                est = analysis.mc_bilipschitz(op, cset, config.mc_trials, seed=seed)
            row.update(alpha=est.alpha, beta=est.beta)
            report = analysis.evaluate_bounds(
                est, mu, config.delta, eps, etilde, f_minus_fA, float(np.linalg.norm(fA)))
            row["condition_pass"] = report.condition_pass
            if not report.condition_pass:
                row["status"] = "condition_fail"

        certified = report is not None and report.condition_pass
        solver_cfg = SolverConfig(mu, config.eps_schedule, config.max_iter,
                                  config.residual_tol, config.stagnation_tol, config.delta)
        budget = report.n_star if certified else None
        try:
            trace = solve(g, op, cset, solver_cfg, reference=fA, budget=budget)
        except DivergenceError as exc:
            row["status"] = f"diverged: {exc}"
            return row
        err = float(np.linalg.norm(f_true - trace.final_iterate))
        row.update(iters_used=trace.iters_used, final_residual=trace.records[-1].residual_norm,
                   err_true=err, termination=trace.termination_reason)

        if isinstance(cset, (KSparse, UnionOfSubspaces)):
            try:
                orc = analysis.brute_force_fopt(g, op, cset)
            except analysis.EnumerationCapExceeded:
                orc = None
            if orc is not None:
                row["oracle_residual"] = orc.residual
                row["lemma2_lhs"] = float(np.linalg.norm(fA - orc.f_opt))

        if certified:
            row["n_star"] = report.n_star
            row["theorem4_rhs"] = report.theorem4_rhs
            row["bound_satisfied"] = err <= report.theorem4_rhs + BOUND_SLACK * max(1.0, float(np.linalg.norm(f_true)))
            if row["lemma2_lhs"] is not None:
                row["lemma2_rhs"] = report.lemma2_rhs
    except Exception as exc:  # a failed trial is a finding, not a batch abort
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def run_experiment(config, threads=1):
    """Run every trial; rows come back in trial order whatever the thread count."""
    trials = range(config.trials)
    if threads <= 1:
        return [run_trial(config, t) for t in trials]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: run_trial(config, t), trials))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_results(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[k]) for k in RESULT_COLUMNS])
    return buf.getvalue()
