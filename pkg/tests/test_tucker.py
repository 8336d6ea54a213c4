import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdf.errors import NotMinimalError, TensorFormatError
from tdf.tensor import elementary_tensor, multi_mode_contract
from tdf.tucker import (
    TuckerTensor,
    alpha_rank,
    hosvd,
    is_admissible,
    is_minimal,
    minimal_subspace,
    orthonormalize,
    random_tucker,
    read_tucker,
    require_minimal,
    to_tucker,
    tucker_to_dense,
    write_tucker,
)


def naive_tucker_dense(u):
    out = np.zeros(u.shape)
    for idx in itertools.product(*map(range, u.rank)):
        out += u.core[idx] * elementary_tensor([f[:, i] for f, i in zip(u.factors, idx)])
    return out


def random_admissible(rng, d):
    while True:
        shape = tuple(int(n) for n in rng.integers(1, 7, d))
        rank = tuple(int(rng.integers(1, n + 1)) for n in shape)
        if is_admissible(rank, shape):
            return shape, rank


def test_alpha_rank_examples(rng):
    t = elementary_tensor([rng.standard_normal(n) + 3 for n in (2, 3, 4)])
    assert [alpha_rank(t, a) for a in range(3)] == [1, 1, 1]
    assert alpha_rank(np.zeros((2, 3)), 0) == 0
    u = random_tucker(rng, (4, 5, 4), (2, 3, 2), orthonormal=False)
    assert tuple(alpha_rank(u.to_dense(), a) for a in range(3)) == (2, 3, 2)


def test_alpha_rank_errors():
    with pytest.raises(IndexError):
        alpha_rank(np.ones((2, 2)), 3)
    with pytest.raises(ValueError):
        alpha_rank(np.ones((2, 2)), 0, tol=0.0)


def test_minimal_subspace_examples(rng):
    v, w = rng.standard_normal(3), rng.standard_normal(4)
    basis = minimal_subspace(elementary_tensor([v, w]), 0).basis
    np.testing.assert_allclose(basis @ basis.T, np.outer(v, v) / (v @ v), atol=1e-14)
    s = minimal_subspace(np.eye(2), 1)
    np.testing.assert_allclose(s.projector(), np.eye(2), atol=1e-15)
    with pytest.raises(ValueError):
        minimal_subspace(np.zeros((2, 2)), 0)


def test_minimal_subspace_matches_factor_span(rng):
    u = random_tucker(rng, (5, 4, 6), (2, 3, 3), orthonormal=False)
    t = u.to_dense()
    for a, f in enumerate(u.factors):
        s = minimal_subspace(t, a)
        np.testing.assert_allclose(s.basis.T @ s.basis, np.eye(s.dim), atol=1e-12)
        q, _ = np.linalg.qr(f)
        np.testing.assert_allclose(s.projector(), q @ q.T, atol=1e-10)


def test_minimal_subspace_sign_convention(rng):
    t = rng.standard_normal((4, 3, 3))
    b = minimal_subspace(t, 0).basis
    idx = np.argmax(np.abs(b), axis=0)
    assert np.all(b[idx, np.arange(b.shape[1])] > 0)


def test_tucker_to_dense_examples(rng):
    eye = TuckerTensor(np.eye(2), (np.eye(2), np.eye(2)))
    np.testing.assert_array_equal(eye.to_dense(), np.eye(2))
    v, w = rng.standard_normal(3), rng.standard_normal(2)
    u = TuckerTensor(np.array([[2.5]]), (v[:, None], w[:, None]))
    np.testing.assert_allclose(u.to_dense(), 2.5 * np.outer(v, w), atol=1e-15)
    for _ in range(5):
        u = random_tucker(rng, (4, 3, 5), (2, 3, 2), orthonormal=False)
        np.testing.assert_allclose(tucker_to_dense(u), naive_tucker_dense(u), atol=1e-12)


def test_tucker_tensor_shape_mismatch():
    with pytest.raises(ValueError):
        TuckerTensor(np.ones((2, 2)), (np.ones((3, 2)), np.ones((3, 3))))
    with pytest.raises(ValueError):
        TuckerTensor(np.ones((2, 2)), (np.ones((3, 2)),))


def test_to_tucker_elementary(rng):
    vs = [rng.standard_normal(n) for n in (3, 2, 4)]
    u = to_tucker(elementary_tensor(vs))
    assert u.rank == (1, 1, 1)
    expected = np.prod([np.linalg.norm(v) for v in vs])
    assert abs(abs(u.core.item()) - expected) <= 1e-12 * expected


def test_to_tucker_superdiagonal():
    e1, e2 = np.eye(2)
    t = elementary_tensor([e1, e1, e1]) + elementary_tensor([e2, e2, e2])
    u = to_tucker(t)
    assert u.rank == (2, 2, 2)
    assert is_minimal(u)
    np.testing.assert_allclose(u.to_dense(), t, atol=1e-14)


def test_to_tucker_zero_raises():
    with pytest.raises(ValueError):
        to_tucker(np.zeros((2, 2)))


def test_to_tucker_roundtrip_preserves_rank(rng):
    for _ in range(20):
        shape, rank = random_admissible(rng, 3)
        u = random_tucker(rng, shape, rank, orthonormal=False)
        t = u.to_dense()
        w = to_tucker(t)
        assert w.rank == rank
        assert np.linalg.norm(w.to_dense() - t) <= 1e-10 * np.linalg.norm(t)
        assert is_minimal(w)
        core = multi_mode_contract(t, w.factors, transpose=True)
        np.testing.assert_allclose(core, w.core, atol=1e-12 * np.abs(core).max())


def test_is_minimal_examples(rng):
    fs = tuple(rng.standard_normal((3, 2)) for _ in range(3))
    assert not is_minimal(TuckerTensor(np.ones((2, 2, 2)), fs))
    super_diag = np.zeros((2, 2, 2))
    super_diag[0, 0, 0] = super_diag[1, 1, 1] = 1.0
    assert is_minimal(TuckerTensor(super_diag, fs))
    ones = tuple(rng.standard_normal((n, 1)) for n in (2, 3, 4))
    assert is_minimal(TuckerTensor(np.full((1, 1, 1), 0.3), ones))
    dependent = (np.ones((3, 2)), fs[1], fs[2])
    assert not is_minimal(TuckerTensor(super_diag, dependent))
    with pytest.raises(NotMinimalError):
        require_minimal(TuckerTensor(np.ones((2, 2, 2)), fs))


def test_is_admissible():
    assert is_admissible((2, 2, 2), (3, 3, 3))
    assert not is_admissible((1, 2), (3, 3))
    assert not is_admissible((3, 1, 1), (4, 4, 4))
    assert not is_admissible((4, 4), (3, 4))
    assert is_admissible((2, 3, 6), (6, 6, 6))
    assert not is_admissible((2, 2), (3, 3, 3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 4))
def test_random_minimal_tucker_ranks_property(seed, d):
    rng = np.random.default_rng(seed)
    shape, rank = random_admissible(rng, d)
    u = random_tucker(rng, shape, rank, orthonormal=False)
    t = u.to_dense()
    assert tuple(alpha_rank(t, a) for a in range(d)) == rank
    for a, f in enumerate(u.factors):
        b = minimal_subspace(t, a).basis
        q, _ = np.linalg.qr(f)
        # inclusion of the minimal subspace in the factor span
        assert np.linalg.norm(b - q @ (q.T @ b)) <= 1e-8


def test_hosvd_truncation(rng):
    u = random_tucker(rng, (5, 5, 5), (3, 3, 3))
    t = u.to_dense()
    v, svals = hosvd(t, (3, 3, 3))
    np.testing.assert_allclose(v.to_dense(), t, atol=1e-12)
    assert len(svals) == 3
    w, _ = hosvd(t, (1, 1, 1))
    assert w.rank == (1, 1, 1)
    # HOSVD error bound: sum of discarded squared singular values
    tail = sum(np.sum(s[1:] ** 2) for s in svals)
    assert np.linalg.norm(w.to_dense() - t) ** 2 <= tail * (1 + 1e-12)
    with pytest.raises(ValueError):
        hosvd(t, (1, 2, 3, 4))
    with pytest.raises(ValueError):
        hosvd(t, (1, 1, 3))


def test_orthonormalize_preserves_tensor(rng):
    u = random_tucker(rng, (4, 5, 3), (2, 2, 2), orthonormal=False)
    v = orthonormalize(u)
    np.testing.assert_allclose(v.to_dense(), u.to_dense(), atol=1e-12)
    for f in v.factors:
        np.testing.assert_allclose(f.T @ f, np.eye(f.shape[1]), atol=1e-13)


def test_tucker_file_roundtrip(tmp_path, rng):
    u = random_tucker(rng, (3, 4, 2), (2, 2, 2), orthonormal=False)
    path = tmp_path / "u.json"
    write_tucker(u, path)
    obj = json.loads(path.read_text())
    # factors stored column-major
    assert obj["factors"][0]["data"][:3] == list(u.factors[0][:, 0])
    back = read_tucker(path)
    assert back.core.tobytes() == u.core.tobytes()
    for f, g in zip(back.factors, u.factors):
        assert f.tobytes() == g.tobytes()


def test_tucker_file_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"core": {"dims": [1, 1], "data": [1.0]},
                                "factors": [{"rows": 2, "cols": 1, "data": [1.0]}]}))
    with pytest.raises(TensorFormatError):
        read_tucker(path)
    path.write_text(json.dumps({"core": {"dims": [1, 1], "data": [1.0]}}))
    with pytest.raises(TensorFormatError):
        read_tucker(path)
