"""Finite-dimensional real Hilbert-space primitives.

Signals and measurements are plain 1-D ``float64`` numpy arrays. Operators
wrap a forward map and its adjoint; dense, diagonal and matrix-free
representations are supported.
"""
import numpy as np
from dataclasses import dataclass

__all__ = [
    "DimensionError",
    "LinearOperator",
    "as_vector",
    "apply",
    "adjoint_apply",
    "AdjointReport",
    "adjoint_consistency_check",
    "linearity_check",
    "spectral_norm_sq_estimate",
    "read_matrix",
    "read_vector",
    "write_matrix",
    "write_vector",
]


class DimensionError(ValueError):
    """Raised when vector and operator dimensions do not agree."""


def as_vector(x, length=None, name="vector"):
    """Return ``x`` as a finite 1-D float64 array, optionally checking length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 2 and 1 in v.shape:
        v = v.reshape(-1)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError(f"{name} must have positive length")
    if length is not None and v.size != length:
        raise DimensionError(f"{name} has length {v.size}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


class LinearOperator:
    """A linear map T: R^N -> R^M with an explicitly supplied adjoint.

    Use the constructors :meth:`dense`, :meth:`diagonal`, :meth:`identity`
    and :meth:`matrix_free` rather than calling ``__init__`` directly.
    """

    def __init__(self, domain_dim, codomain_dim, forward, adjoint, kind, matrix=None):
        if domain_dim < 1 or codomain_dim < 1:
            raise DimensionError("operator dimensions must be positive")
        self.domain_dim = int(domain_dim)
        self.codomain_dim = int(codomain_dim)
        self._forward = forward
        self._adjoint = adjoint
        self.kind = kind
        self._matrix = matrix

    @classmethod
    def dense(cls, matrix):
        A = np.array(matrix, dtype=np.float64)
        if A.ndim != 2:
            raise DimensionError(f"dense operator needs a 2-D matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("operator matrix contains non-finite entries")
        A.setflags(write=False)
        return cls(A.shape[1], A.shape[0], A.__matmul__, A.T.__matmul__, "dense", A)

    @classmethod
    def diagonal(cls, values):
        d = as_vector(values, name="diagonal").copy()
        d.setflags(write=False)
        op = cls(d.size, d.size, d.__mul__, d.__mul__, "diagonal")
        op._diag = d
        return op

    @classmethod
    def identity(cls, n):
        return cls(n, n, np.array, np.array, "identity")

    @classmethod
    def matrix_free(cls, forward, adjoint, domain_dim, codomain_dim):
        """Wrap a pair of callables. The adjoint is trusted, not derived;
        check it with :func:`adjoint_consistency_check`."""
        return cls(domain_dim, codomain_dim, forward, adjoint, "matrix_free")

    @property
    def shape(self):
        return (self.codomain_dim, self.domain_dim)

    def apply(self, x):
        x = as_vector(x, self.domain_dim, "signal")
        y = np.asarray(self._forward(x), dtype=np.float64)
        if y.shape != (self.codomain_dim,):
            raise DimensionError(f"forward map returned shape {y.shape}, expected ({self.codomain_dim},)")
        return y

    def adjoint_apply(self, y):
        y = as_vector(y, self.codomain_dim, "measurement")
        x = np.asarray(self._adjoint(y), dtype=np.float64)
        if x.shape != (self.domain_dim,):
            raise DimensionError(f"adjoint map returned shape {x.shape}, expected ({self.domain_dim},)")
        return x

    def to_dense(self):
        """Matrix of the operator; built column by column for matrix-free maps."""
        if self._matrix is not None:
            return self._matrix
        if self.kind == "diagonal":
            return np.diag(self._diag)
        if self.kind == "identity":
            return np.eye(self.domain_dim)
        eye = np.eye(self.domain_dim)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.domain_dim)])

    def __repr__(self):
        return f"LinearOperator(kind={self.kind!r}, shape={self.shape})"


def apply(op, x):
    return op.apply(x)


def adjoint_apply(op, y):
    return op.adjoint_apply(y)


@dataclass(frozen=True)
class AdjointReport:
    max_relative_defect: float
    passed: bool
    trials: int


def adjoint_consistency_check(op, trials=100, tol=1e-9, seed=0):
    """Probe <Tx, y> = <x, T*y> on seeded random pairs.

    The defect of each probe is ``|<Tx,y> - <x,T*y>| / (|<Tx,y>| + floor)``
    with ``floor`` a machine-epsilon multiple of the product norms, so an
    exactly zero inner product does not blow up the ratio.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    eps = np.finfo(np.float64).eps
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.domain_dim)
        y = rng.standard_normal(op.codomain_dim)
        Tx = op.apply(x)
        Tty = op.adjoint_apply(y)
        lhs = float(Tx @ y)
        rhs = float(x @ Tty)
        floor = eps * (np.linalg.norm(Tx) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(Tty))
        denom = abs(lhs) + floor
        defect = 0.0 if lhs == rhs else abs(lhs - rhs) / (denom if denom > 0 else np.finfo(np.float64).tiny)
        worst = max(worst, defect)
    return AdjointReport(worst, worst <= tol, trials)


def linearity_check(op, trials=100, tol=1e-9, seed=0):
    """Worst ratio ||T(2x+3y) - 2Tx - 3Ty|| / (||Tx|| + ||Ty||) over seeded probes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.domain_dim)
        y = rng.standard_normal(op.domain_dim)
        Tx, Ty = op.apply(x), op.apply(y)
        defect = np.linalg.norm(op.apply(2 * x + 3 * y) - 2 * Tx - 3 * Ty)
        scale = np.linalg.norm(Tx) + np.linalg.norm(Ty)
        if defect > 0:
            worst = max(worst, defect / scale if scale > 0 else np.inf)
    return AdjointReport(worst, worst <= tol, trials)


def spectral_norm_sq_estimate(op, iters=200, tol=0.0, seed=0):
    """Estimate ||T||^2 as the largest Ritz value of T*T on a Krylov space.

    The Krylov space grows from a seeded uniform start in [-1, 1]^N (redrawn
    once if its Rayleigh quotient is below 1e-12). Step k returns the largest
    eigenvalue of T*T compressed to span{x, (T*T)x, ..., (T*T)^k x}. That
    value is at least the k-th power-iteration Rayleigh quotient, never
    decreases, and never exceeds ||T||^2. It is exact once the space becomes
    invariant. Stops early when the relative change falls below ``tol``.
    A zero operator yields 0.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, op.domain_dim)
    Tx = op.apply(x)
    if float(Tx @ Tx) / float(x @ x) < 1e-12:
        x = rng.uniform(-1.0, 1.0, op.domain_dim)
    q = x / np.linalg.norm(x)
    Q, AQ = [], []
    est = 0.0
    for _ in range(min(iters, op.domain_dim)):
        Q.append(q)
        AQ.append(op.adjoint_apply(op.apply(q)))
        Qm, AQm = np.array(Q), np.array(AQ)
        H = Qm @ AQm.T
        prev, est = est, max(est, float(np.linalg.eigvalsh(0.5 * (H + H.T))[-1]))
        if tol > 0 and est > 0 and (est - prev) <= tol * est:
            break
        w = AQ[-1]
        nw = np.linalg.norm(w)
        for _ in range(2):
            w = w - Qm.T @ (Qm @ w)
        nr = np.linalg.norm(w)
        if nw == 0.0 or nr <= 1e-12 * nw:
            break
        q = w / nr
    return est


# --- CSV I/O -----------------------------------------------------------------

_FMT = "%.17g"


def read_matrix(path):
    A = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if A.size == 0:
        raise DimensionError(f"{path}: empty matrix file")
    return A


def read_vector(path):
    A = read_matrix(path)
    if A.shape[1] != 1 and A.shape[0] != 1:
        raise DimensionError(f"{path}: expected a single column, got shape {A.shape}")
    return as_vector(A.reshape(-1), name=str(path))


def write_matrix(path, A):
    np.savetxt(path, np.atleast_2d(np.asarray(A, dtype=np.float64)), delimiter=",", fmt=_FMT)


def write_vector(path, v):
    np.savetxt(path, np.asarray(v, dtype=np.float64).reshape(-1, 1), delimiter=",", fmt=_FMT)
