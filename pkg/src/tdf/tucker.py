"""Tucker representation, mode ranks and minimal subspaces."""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotMinimalError, TensorFormatError
from .tensor import (
    as_tensor,
    matricize,
    multi_mode_contract,
    tensor_from_dict,
    tensor_to_dict,
)

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class TuckerTensor:
    """Core tensor of shape ``rank`` and one ``n_a x r_a`` factor per mode."""

    core: np.ndarray
    factors: tuple

    def __post_init__(self):
        core = np.asarray(self.core, dtype=float)
        factors = tuple(np.asarray(f, dtype=float) for f in self.factors)
        if core.ndim < 2 or core.ndim != len(factors):
            raise ValueError(
                f"core of order {core.ndim} needs {core.ndim} factors, got {len(factors)}"
            )
        for a, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != core.shape[a]:
                raise ValueError(
                    f"factor {a} has shape {f.shape}, expected (n, {core.shape[a]})"
                )
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)

    @property
    def order(self):
        return self.core.ndim

    @property
    def rank(self):
        return tuple(self.core.shape)

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)

    def to_dense(self):
        return tucker_to_dense(self)


@dataclass(frozen=True)
class MinimalSubspace:
    mode: int
    basis: np.ndarray

    @property
    def dim(self):
        return self.basis.shape[1]

    def projector(self):
        return self.basis @ self.basis.T


def numerical_rank(m, tol=DEFAULT_RANK_TOL):
    """Number of singular values of ``m`` above ``tol * sigma_max``."""
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def alpha_rank(t, mu, tol=DEFAULT_RANK_TOL):
    """Rank of the mode-``mu`` matricization (dimension of the minimal subspace)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return numerical_rank(matricize(t, mu), tol)


def _fix_signs(u):
    # largest-magnitude entry of every column made positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def _leading_left_vectors(m, r=None, tol=DEFAULT_RANK_TOL):
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if r is None:
        r = 0 if s[0] == 0.0 else int(np.sum(s > tol * s[0]))
    return _fix_signs(u[:, :r]), s


def minimal_subspace(t, mu, tol=DEFAULT_RANK_TOL):
    """Orthonormal basis of the column space of the mode-``mu`` matricization."""
    t = as_tensor(t)
    if not np.any(t):
        raise ValueError("the zero tensor has no minimal subspace basis")
    basis, _ = _leading_left_vectors(matricize(t, mu), tol=tol)
    return MinimalSubspace(mu, basis)


def tucker_to_dense(u):
    return multi_mode_contract(u.core, u.factors)


def to_tucker(t, tol=DEFAULT_RANK_TOL):
    """Minimal Tucker representation via the higher-order SVD."""
    t = as_tensor(t)
    if not np.any(t):
        raise ValueError("the zero tensor has no minimal Tucker representation")
    factors = [minimal_subspace(t, a, tol).basis for a in range(t.ndim)]
    core = multi_mode_contract(t, factors, transpose=True)
    return TuckerTensor(core, tuple(factors))


def hosvd(t, rank):
    """Rank-``rank`` truncated higher-order SVD of a dense tensor.

    Returns the truncation together with the per-mode singular values of the
    input matricizations.
    """
    t = as_tensor(t)
    rank = tuple(int(r) for r in rank)
    if len(rank) != t.ndim:
        raise ValueError(f"rank {rank} does not match order {t.ndim}")
    if not is_admissible(rank, t.shape):
        raise ValueError(f"rank {rank} is not admissible for shape {t.shape}")
    factors, svals = [], []
    for a, r in enumerate(rank):
        u, s = _leading_left_vectors(matricize(t, a), r=r)
        factors.append(u)
        svals.append(s)
    core = multi_mode_contract(t, factors, transpose=True)
    return TuckerTensor(core, tuple(factors)), svals


def is_admissible(rank, shape):
    """``r_a <= n_a`` and ``r_a <= prod_{b != a} r_b`` for every mode."""
    rank = tuple(int(r) for r in rank)
    if len(rank) != len(shape) or any(r < 0 for r in rank):
        return False
    for a, (r, n) in enumerate(zip(rank, shape)):
        if r > n or r > math.prod(rank[:a] + rank[a + 1:]):
            return False
    return True


def is_minimal(u, tol=DEFAULT_RANK_TOL):
    """Independent factor columns and full-row-rank core matricizations."""
    for a, f in enumerate(u.factors):
        r = f.shape[1]
        if r == 0 or numerical_rank(f, tol) != r:
            return False
        if numerical_rank(matricize(u.core, a), tol) != r:
            return False
    return True


def core_singular_values(core):
    """Singular values of every matricization of ``core``."""
    return [np.linalg.svd(matricize(core, a), compute_uv=False) for a in range(core.ndim)]


def orthonormalize(u):
    """Same tensor with orthonormal factors (QR gauge, core absorbs the R parts)."""
    qs, rs = [], []
    for f in u.factors:
        q, r = np.linalg.qr(f)
        qs.append(q)
        rs.append(r)
    return TuckerTensor(multi_mode_contract(u.core, rs), tuple(qs))


def random_tucker(rng, shape, rank, orthonormal=True):
    """Random Tucker tensor with the given (admissible) rank.

    Gaussian cores have full-rank matricizations with probability one.
    """
    if not is_admissible(rank, shape):
        raise ValueError(f"rank {tuple(rank)} is not admissible for shape {tuple(shape)}")
    core = rng.standard_normal(tuple(rank))
    factors = []
    for n, r in zip(shape, rank):
        f = rng.standard_normal((n, r))
        if orthonormal:
            f, _ = np.linalg.qr(f)
        factors.append(f)
    return TuckerTensor(core, tuple(factors))


# -- JSON file format -------------------------------------------------------

def matrix_to_dict(m):
    m = np.asarray(m, dtype=float)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "data": [float(x) for x in m.ravel(order="F")]}


def matrix_from_dict(obj):
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError, ValueError):
        raise TensorFormatError('matrix object needs integer "rows", "cols" and a "data" list') from None
    if rows < 0 or cols < 0 or not isinstance(data, list) or len(data) != rows * cols:
        raise TensorFormatError(f"matrix {rows}x{cols} does not match {len(data)} entries")
    arr = np.array(data, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("matrix data must be finite")
    return arr.reshape((rows, cols), order="F")


def tucker_to_dict(u):
    return {"core": tensor_to_dict(u.core), "factors": [matrix_to_dict(f) for f in u.factors]}


def tucker_from_dict(obj):
    if not isinstance(obj, dict) or "core" not in obj or "factors" not in obj:
        raise TensorFormatError('Tucker object needs "core" and "factors"')
    core = tensor_from_dict(obj["core"])
    factors = [matrix_from_dict(f) for f in obj["factors"]]
    try:
        return TuckerTensor(core, tuple(factors))
    except ValueError as exc:
        raise TensorFormatError(str(exc)) from None


def read_tucker(path):
    with open(path) as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TensorFormatError(f"{path}: invalid JSON ({exc})") from None
    return tucker_from_dict(obj)


def write_tucker(u, path):
    with open(path, "w") as fh:
        json.dump(tucker_to_dict(u), fh)
        fh.write("\n")


def require_minimal(u, tol=DEFAULT_RANK_TOL):
    if not is_minimal(u, tol):
        raise NotMinimalError(f"Tucker tensor of rank {u.rank} is not minimal at tol {tol:g}")
