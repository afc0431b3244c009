"""Non-convex constraint sets and their exact projections.

Each set returns a :class:`ProjectionResult` whose ``achieved_eps`` bounds
``||v - point||^2 - inf_{w in A} ||v - w||^2``. All shipped sets project
exactly, so it is always 0; the field exists for inexact sets.

Ties are resolved deterministically: lowest index among equal magnitudes,
first listed subspace among equal distances, and the SVD's own ordering
among equal singular values.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hilbert import DimensionError, as_vector, read_matrix

__all__ = [
    "ProjectionResult",
    "ConstraintSet",
    "KSparse",
    "UnionOfSubspaces",
    "LowRank",
    "project_ksparse",
    "project_union_subspaces",
    "project_lowrank",
    "membership_check",
    "parse_set",
]

# relative distance below which an input is treated as already in the set
_MEMBER_RTOL = 1e-12


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    achieved_eps: float = 0.0


class ConstraintSet:
    """Base class. Subclasses implement ``project``, ``contains`` and ``sample``."""

    enumerable = False

    def project(self, v, eps=0.0):
        raise NotImplementedError

    def contains(self, v, tol=1e-10):
        raise NotImplementedError

    def sample(self, rng, n):
        """Draw a random element of the set in R^n."""
        raise NotImplementedError

    def off_set_direction(self, point, rng):
        """Unit vector ``u`` with ``project(point + s*u) == point`` for small ``s``."""
        raise NotImplementedError

    def ambient_dim(self, n=None):
        return n


@dataclass(frozen=True)
class KSparse(ConstraintSet):
    k: int
    enumerable = True

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("K must be non-negative")

    def project(self, v, eps=0.0):
        return project_ksparse(v, self.k)

    def contains(self, v, tol=1e-10):
        v = as_vector(v)
        return int(np.count_nonzero(np.abs(v) > tol)) <= self.k

    def sample(self, rng, n):
        if self.k > n:
            raise DimensionError(f"K={self.k} exceeds dimension {n}")
        f = np.zeros(n)
        support = rng.choice(n, size=self.k, replace=False)
        f[np.sort(support)] = rng.standard_normal(self.k)
        return f

    def off_set_direction(self, point, rng):
        point = as_vector(point)
        free = np.flatnonzero(point == 0)
        if free.size == 0:
            raise ValueError("no coordinates outside the support")
        u = np.zeros(point.size)
        u[free] = rng.standard_normal(free.size)
        return u / np.linalg.norm(u)

    def __str__(self):
        return f"ksparse:{self.k}"


@dataclass(frozen=True, eq=False)
class UnionOfSubspaces(ConstraintSet):
    """Union of the column spans of orthonormal basis matrices (each N x d_i)."""

    bases: tuple
    source: str = field(default="", compare=False)
    enumerable = True

    def __post_init__(self):
        if len(self.bases) == 0:
            raise ValueError("union of subspaces needs at least one basis")
        checked = []
        n = None
        for i, B in enumerate(self.bases):
            B = np.array(B, dtype=np.float64)
            if B.ndim == 1:
                B = B[:, None]
            if n is None:
                n = B.shape[0]
            if B.shape[0] != n:
                raise DimensionError(f"basis {i} has {B.shape[0]} rows, expected {n}")
            gram = B.T @ B
            if not np.allclose(gram, np.eye(B.shape[1]), rtol=0.0, atol=1e-10):
                raise ValueError(f"basis {i} does not have orthonormal columns")
            B.setflags(write=False)
            checked.append(B)
        object.__setattr__(self, "bases", tuple(checked))

    def ambient_dim(self, n=None):
        return self.bases[0].shape[0]

    def distances_sq(self, v):
        return [float(np.sum((v - B @ (B.T @ v)) ** 2)) for B in self.bases]

    def project(self, v, eps=0.0):
        return project_union_subspaces(v, self)

    def contains(self, v, tol=1e-10):
        v = as_vector(v, self.ambient_dim())
        return min(self.distances_sq(v)) <= tol * tol

    def sample(self, rng, n=None):
        B = self.bases[rng.integers(len(self.bases))]
        return B @ rng.standard_normal(B.shape[1])

    def off_set_direction(self, point, rng):
        point = as_vector(point, self.ambient_dim())
        i = int(np.argmin(self.distances_sq(point)))
        B = self.bases[i]
        w = rng.standard_normal(point.size)
        u = w - B @ (B.T @ w)
        return u / np.linalg.norm(u)

    def __str__(self):
        return f"uos:{self.source}" if self.source else f"uos[{len(self.bases)}]"


@dataclass(frozen=True)
class LowRank(ConstraintSet):
    """Matrices of shape rows x cols with rank <= rank, vectorised column-major."""

    rows: int
    cols: int
    rank: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("low-rank shape must be positive")
        if not 0 <= self.rank <= min(self.rows, self.cols):
            raise ValueError(f"rank {self.rank} outside [0, {min(self.rows, self.cols)}]")

    def ambient_dim(self, n=None):
        return self.rows * self.cols

    def as_matrix(self, v):
        return as_vector(v, self.ambient_dim()).reshape((self.rows, self.cols), order="F")

    def project(self, v, eps=0.0):
        return project_lowrank(v, self)

    def contains(self, v, tol=1e-10):
        s = np.linalg.svd(self.as_matrix(v), compute_uv=False)
        return bool(np.all(s[self.rank:] <= tol))

    def sample(self, rng, n=None):
        L = rng.standard_normal((self.rows, self.rank))
        R = rng.standard_normal((self.rank, self.cols))
        return (L @ R).reshape(-1, order="F")

    def off_set_direction(self, point, rng):
        X = self.as_matrix(point)
        U, s, Vt = np.linalg.svd(X)
        r = int(np.count_nonzero(s > 1e-12 * max(s[0], 1.0))) if s.size else 0
        U, V = U[:, :r], Vt[:r].T
        W = rng.standard_normal(X.shape)
        W = W - U @ (U.T @ W)
        W = W - (W @ V) @ V.T
        u = W.reshape(-1, order="F")
        return u / np.linalg.norm(u)

    def __str__(self):
        return f"lowrank:{self.rows}x{self.cols}:{self.rank}"


def project_ksparse(v, K):
    """Keep the K largest-magnitude entries of ``v``; ties go to the lower index."""
    v = as_vector(v)
    if not 0 <= K <= v.size:
        raise DimensionError(f"K={K} outside [0, {v.size}]")
    out = np.zeros_like(v)
    keep = np.argsort(-np.abs(v), kind="stable")[:K]
    out[keep] = v[keep]
    return ProjectionResult(out, 0.0)


def project_union_subspaces(v, uos):
    """Orthogonal projection onto the nearest listed subspace (first wins ties)."""
    if not isinstance(uos, UnionOfSubspaces):
        raise TypeError("expected a UnionOfSubspaces set")
    v = as_vector(v, uos.ambient_dim())
    d2 = uos.distances_sq(v)
    best = int(np.argmin(d2))  # argmin returns the first minimiser
    if d2[best] <= (_MEMBER_RTOL * np.linalg.norm(v)) ** 2:
        return ProjectionResult(v.copy(), 0.0)
    B = uos.bases[best]
    return ProjectionResult(B @ (B.T @ v), 0.0)


def project_lowrank(v, lr):
    """Truncated SVD (Eckart-Young): keep the ``rank`` leading singular triplets."""
    if not isinstance(lr, LowRank):
        raise TypeError("expected a LowRank set")
    X = lr.as_matrix(v)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    r = lr.rank
    if s.size == 0 or np.all(s[r:] <= _MEMBER_RTOL * max(s[0], np.finfo(float).tiny)):
        return ProjectionResult(X.reshape(-1, order="F").copy(), 0.0)
    Y = (U[:, :r] * s[:r]) @ Vt[:r]
    return ProjectionResult(Y.reshape(-1, order="F"), 0.0)


def membership_check(v, cset, tol=1e-10):
    return bool(cset.contains(v, tol))


def _read_manifest(path):
    path = Path(path)
    bases = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        p = Path(line)
        if not p.is_absolute():
            p = path.parent / p
        bases.append(read_matrix(p))
    return bases


def parse_set(descriptor):
    """Parse ``ksparse:K``, ``uos:PATH`` or ``lowrank:ROWSxCOLS:r``.

    For ``uos`` the path names a manifest listing one basis CSV per line,
    relative to the manifest's directory.
    """
    kind, _, rest = descriptor.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "ksparse":
            return KSparse(int(rest))
        if kind == "uos":
            return UnionOfSubspaces(tuple(_read_manifest(rest)), source=rest)
        if kind == "lowrank":
            shape, _, r = rest.partition(":")
            rows, _, cols = shape.lower().partition("x")
            return LowRank(int(rows), int(cols), int(r))
    except (TypeError, OSError) as exc:
        raise ValueError(f"bad set descriptor {descriptor!r}: {exc}") from exc
    raise ValueError(f"unknown set descriptor {descriptor!r}; expected ksparse:K, uos:PATH or lowrank:RxC:r")
