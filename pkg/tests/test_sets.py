from itertools import combinations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ipa_inverse.harness import make_rng
from ipa_inverse.hilbert import DimensionError, write_matrix
from ipa_inverse.sets import (
    KSparse,
    LowRank,
    UnionOfSubspaces,
    membership_check,
    parse_set,
    project_ksparse,
    project_lowrank,
    project_union_subspaces,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def random_uos(n, dims, seed):
    rng = make_rng(seed)
    return UnionOfSubspaces(tuple(np.linalg.qr(rng.standard_normal((n, d)))[0] for d in dims))


E2 = UnionOfSubspaces((np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])))


@pytest.mark.parametrize("v, K, expected", [
    ([3, 1, -4, 0], 2, [3, 0, -4, 0]),
    ([3, 1, -4, 0], 4, [3, 1, -4, 0]),
    ([1, 1, 1], 2, [1, 1, 0]),
])
def test_ksparse_examples(v, K, expected):
    res = project_ksparse(v, K)
    np.testing.assert_array_equal(res.point, expected)
    assert res.achieved_eps == 0.0


def test_ksparse_too_large():
    with pytest.raises(DimensionError):
        project_ksparse([1, 2], 3)


def test_uos_examples():
    np.testing.assert_array_equal(project_union_subspaces([3, 1], E2).point, [3, 0])
    np.testing.assert_array_equal(project_union_subspaces([1, 1], E2).point, [1, 0])
    whole = UnionOfSubspaces((np.eye(2),))
    np.testing.assert_array_equal(project_union_subspaces([5, -2], whole).point, [5, -2])


def test_uos_validation():
    with pytest.raises(ValueError):
        UnionOfSubspaces(())
    with pytest.raises(ValueError):
        UnionOfSubspaces((np.array([[1.0], [1.0]]),))


def test_lowrank_examples():
    lr1 = LowRank(2, 2, 1)
    v = np.diag([3.0, 1.0]).reshape(-1, order="F")
    np.testing.assert_allclose(project_lowrank(v, lr1).point, np.diag([3.0, 0.0]).reshape(-1, order="F"), atol=1e-15)
    w = make_rng(0).standard_normal(4)
    np.testing.assert_array_equal(project_lowrank(w, LowRank(2, 2, 2)).point, w)
    with pytest.raises(ValueError):
        LowRank(2, 2, 3)


def best_rank1_scipy(X):
    U, s, Vt = scipy.linalg.svd(X, lapack_driver="gesvd")
    return s[0] * np.outer(U[:, 0], Vt[0])


def test_lowrank_vs_independent_svd():
    X = make_rng(7).standard_normal((3, 3))
    got = project_lowrank(X.reshape(-1, order="F"), LowRank(3, 3, 1)).point.reshape((3, 3), order="F")
    assert np.linalg.norm(got - best_rank1_scipy(X)) <= 1e-9


def test_lowrank_column_major():
    # rank-1 matrix with distinct rows and columns pins the layout
    X = np.outer([1.0, 2.0], [1.0, 10.0, 100.0])
    v = X.reshape(-1, order="F")
    lr = LowRank(2, 3, 1)
    assert membership_check(v, lr)
    assert not membership_check(X.reshape(-1), lr)


def test_membership_examples():
    assert membership_check([3, 0, -4, 0], KSparse(2))
    assert not membership_check([3, 1, -4, 0], KSparse(2))
    for cset, n in [(KSparse(2), 4), (E2, 2), (LowRank(2, 3, 1), 6)]:
        assert membership_check(np.zeros(n), cset)


def brute_force_ksparse_dist(v, K):
    best = np.inf
    for S in combinations(range(v.size), K):
        w = np.zeros_like(v)
        w[list(S)] = v[list(S)]
        best = min(best, float(np.sum((v - w) ** 2)))
    return best


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=finite), st.data())
def test_ksparse_optimal_by_enumeration(v, data):
    K = data.draw(st.integers(0, v.size))
    p = project_ksparse(v, K).point
    assert float(np.sum((v - p) ** 2)) <= brute_force_ksparse_dist(v, K) + 1e-12 * (1 + float(v @ v))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=finite), st.data())
def test_ksparse_idempotent_and_member(v, data):
    K = data.draw(st.integers(0, v.size))
    p = project_ksparse(v, K).point
    assert np.count_nonzero(p) <= K
    np.testing.assert_array_equal(project_ksparse(p, K).point, p)


@pytest.mark.parametrize("cset, n", [
    (KSparse(3), 9),
    (random_uos(6, [1, 2, 3, 2], seed=11), 6),
    (LowRank(3, 4, 2), 12),
])
def test_idempotent_nonexpansive_deterministic(cset, n):
    rng = make_rng(5)
    for _ in range(20):
        v = rng.standard_normal(n)
        p = cset.project(v).point
        assert membership_check(p, cset, tol=1e-10)
        np.testing.assert_array_equal(cset.project(p).point, p)
        np.testing.assert_array_equal(cset.project(v).point, p)
        dist = np.linalg.norm(v - p)
        for _ in range(100):
            w = cset.sample(rng, n)
            assert dist <= np.linalg.norm(v - w) + 1e-12
        assert np.isfinite(cset.project(v).achieved_eps) and cset.project(v).achieved_eps >= 0


def test_parse_set(tmp_path):
    assert parse_set("ksparse:3") == KSparse(3)
    assert parse_set("lowrank:3x4:2") == LowRank(3, 4, 2)
    write_matrix(tmp_path / "b0.csv", np.array([[1.0], [0.0]]))
    write_matrix(tmp_path / "b1.csv", np.array([[0.0], [1.0]]))
    (tmp_path / "m.txt").write_text("# two axes\nb0.csv\nb1.csv\n")
    uos = parse_set(f"uos:{tmp_path / 'm.txt'}")
    np.testing.assert_array_equal(uos.project([1, 3]).point, [0, 3])
    with pytest.raises(ValueError):
        parse_set("simplex:3")
    with pytest.raises(ValueError):
        parse_set("ksparse:two")


def test_off_set_direction_keeps_projection():
    rng = make_rng(2)
    for cset, n in [(KSparse(2), 8), (random_uos(5, [2, 2], 3), 5), (LowRank(3, 3, 1), 9)]:
        f = cset.sample(rng, n)
        u = cset.off_set_direction(f, rng)
        assert np.linalg.norm(u) == pytest.approx(1.0)
        np.testing.assert_allclose(cset.project(f + 1e-3 * u).point, f, atol=1e-9)
