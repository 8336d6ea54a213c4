"""Charts, retraction and tangent spaces of the fixed-rank Tucker manifold.

A :class:`BasePoint` fixes a point ``v`` of the manifold in the orthonormal
gauge together with orthonormal bases ``W_a`` of the Euclidean orthogonal
complements of its factor spans. Nearby points are parametrized by a
:class:`ChartPoint` ``(L, E)``: the factor subspaces are the graphs of
``id + L_a`` (``L_a`` expressed in the basis ``W_a``) and ``E`` is the core
in the basis ``(U_a + W_a L_a)``.
"""

from dataclasses import dataclass
import functools
import math
from functools import cached_property

import numpy as np
from scipy import optimize

from .errors import (
    CommonComplementViolation,
    NotInTangentSpace,
    NotMinimalError,
    SingularCore,
    TensorFormatError,
)
from .tensor import ModeNorm, matricize, multi_mode_contract, tensor_from_dict, tensor_to_dict
from .tucker import (
    DEFAULT_RANK_TOL,
    TuckerTensor,
    matrix_from_dict,
    matrix_to_dict,
    numerical_rank,
    orthonormalize,
    require_minimal,
    tucker_to_dict,
)

GRAM_COND_LIMIT = 1e12
TANGENT_RESIDUAL_TOL = 1e-8
GAUGE_TOL = 1e-10


def _complement(u):
    n, r = u.shape
    if r == n:
        return np.zeros((n, 0))
    q, _ = np.linalg.qr(u, mode="complete")
    w = q[:, r:]
    # deterministic orientation: largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(w), axis=0)
    return w * np.sign(w[idx, np.arange(w.shape[1])])


@dataclass(frozen=True, eq=False)
class BasePoint:
    """A minimal Tucker tensor in orthonormal gauge plus complement bases."""

    v: TuckerTensor
    complements: tuple

    @property
    def factors(self):
        return self.v.factors

    @property
    def core(self):
        return self.v.core

    @property
    def rank(self):
        return self.v.rank

    @property
    def shape(self):
        return self.v.shape

    @property
    def order(self):
        return self.v.order

    @cached_property
    def dense(self):
        return self.v.to_dense()

    @cached_property
    def _core_right_inverses(self):
        # M_a(C)^T (M_a(C) M_a(C)^T)^{-1} for every mode
        out = []
        for a in range(self.order):
            m = matricize(self.core, a)
            gram = m @ m.T
            cond = np.linalg.cond(gram)
            if not np.isfinite(cond) or cond >= GRAM_COND_LIMIT:
                raise SingularCore(
                    f"core Gram matrix in mode {a} has condition number {cond:.3e}"
                )
            out.append(np.linalg.solve(gram, m).T)
        return tuple(out)

    def core_right_inverse(self, a):
        return self._core_right_inverses[a]

    @cached_property
    def basis_matrix(self):
        return _basis_matrix(self)


@dataclass(frozen=True)
class ChartPoint:
    """Chart coordinates: ``L[a]`` is ``(n_a - r_a) x r_a``, ``E`` has shape ``rank``."""

    L: tuple
    E: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", tuple(np.asarray(x, dtype=float) for x in self.L))
        object.__setattr__(self, "E", np.asarray(self.E, dtype=float))


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector ``(dC, dU)`` with the gauge ``U_a^T dU_a = 0``."""

    base: BasePoint
    dC: np.ndarray
    dU: tuple

    def __post_init__(self):
        dC = np.asarray(self.dC, dtype=float)
        dU = tuple(np.asarray(x, dtype=float) for x in self.dU)
        b = self.base
        if dC.shape != b.rank:
            raise ValueError(f"dC has shape {dC.shape}, expected {b.rank}")
        if len(dU) != b.order:
            raise ValueError(f"need {b.order} factor directions, got {len(dU)}")
        for a, (u, du) in enumerate(zip(b.factors, dU)):
            if du.shape != u.shape:
                raise ValueError(f"dU[{a}] has shape {du.shape}, expected {u.shape}")
            size = np.linalg.norm(du)
            if size > 0 and np.linalg.norm(u.T @ du) > GAUGE_TOL * size + 1e-300:
                raise ValueError(f"dU[{a}] violates the gauge condition U^T dU = 0")
        object.__setattr__(self, "dC", dC)
        object.__setattr__(self, "dU", dU)

    def __add__(self, other):
        return TangentVector(self.base, self.dC + other.dC,
                             tuple(x + y for x, y in zip(self.dU, other.dU)))

    def __mul__(self, s):
        return TangentVector(self.base, s * self.dC, tuple(s * x for x in self.dU))

    __rmul__ = __mul__

    def to_dense(self):
        return embed_tangent(self)


def make_base(v, tol=DEFAULT_RANK_TOL):
    """Base point at the minimal Tucker tensor ``v`` (moved to orthonormal gauge)."""
    require_minimal(v, tol)
    v = orthonormalize(v)
    return BasePoint(v, tuple(_complement(u) for u in v.factors))


def zero_chart_point(b):
    """Chart coordinates of the base point itself."""
    return ChartPoint(tuple(np.zeros((w.shape[1], u.shape[1])) for u, w in zip(b.factors, b.complements)),
                      b.core.copy())


def _check_core(E, rank, tol=DEFAULT_RANK_TOL):
    if E.shape != tuple(rank):
        raise ValueError(f"core has shape {E.shape}, expected {tuple(rank)}")
    for a in range(E.ndim):
        if numerical_rank(matricize(E, a), tol) != E.shape[a]:
            raise NotMinimalError(f"core matricization in mode {a} is rank deficient")


def retract(b, c):
    """Tucker tensor with factors ``U_a + W_a L_a`` and core ``E``."""
    _check_core(c.E, b.rank)
    factors = []
    for a, (u, w, L) in enumerate(zip(b.factors, b.complements, c.L)):
        if L.shape != (w.shape[1], u.shape[1]):
            raise ValueError(f"L[{a}] has shape {L.shape}, expected {(w.shape[1], u.shape[1])}")
        factors.append(u + w @ L)
    return TuckerTensor(c.E, tuple(factors))


def invert_chart(b, w):
    """Chart coordinates of the Tucker tensor ``w`` in the chart at ``b``.

    Raises :class:`CommonComplementViolation` when a factor span of ``w``
    does not project isomorphically onto the base factor span along the
    complement.
    """
    if w.shape != b.shape or w.rank != b.rank:
        raise ValueError(f"w has shape {w.shape}, rank {w.rank}; base has {b.shape}, {b.rank}")
    Ls, Gs = [], []
    for a, (u, comp, f) in enumerate(zip(b.factors, b.complements, w.factors)):
        g = u.T @ f
        cond = np.linalg.cond(g)
        if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
            raise CommonComplementViolation(
                f"mode {a}: projection onto the base factor span is singular (cond {cond:.3e})"
            )
        Ls.append(np.linalg.solve(g.T, (comp.T @ f).T).T)
        Gs.append(g)
    return ChartPoint(tuple(Ls), multi_mode_contract(w.core, Gs))


def transition(b1, b2, c1):
    """Change of chart from ``b1`` to ``b2``."""
    return invert_chart(b2, retract(b1, c1))


def embed_tangent(tv):
    """Ambient (dense) tensor represented by a tangent vector."""
    b = tv.base
    out = multi_mode_contract(tv.dC, b.factors)
    for a, du in enumerate(tv.dU):
        if not np.any(du):
            continue
        mats = list(b.factors)
        mats[a] = du
        out = out + multi_mode_contract(b.core, mats)
    return out


def _tangent_parts(b, w):
    dC = multi_mode_contract(w, b.factors, transpose=True)
    dU = []
    for a, comp in enumerate(b.complements):
        x = matricize(multi_mode_contract(w, b.factors, skip=a, transpose=True), a)
        # I - U U^T applied as W W^T: exact zero when the complement is empty
        dU.append(comp @ ((comp.T @ x) @ b.core_right_inverse(a)))
    return dC, tuple(dU)


def orthogonal_tangent(b, w):
    """Euclidean orthogonal projection of ``w`` onto the tangent space, as a tangent vector."""
    w = np.asarray(w, dtype=float)
    if w.shape != b.shape:
        raise ValueError(f"tensor has shape {w.shape}, base has shape {b.shape}")
    dC, dU = _tangent_parts(b, w)
    return TangentVector(b, dC, dU)


def extract_tangent(b, w, tol=TANGENT_RESIDUAL_TOL):
    """Inverse of :func:`embed_tangent` on the tangent space."""
    tv = orthogonal_tangent(b, w)
    size = np.linalg.norm(w)
    resid = np.linalg.norm(embed_tangent(tv) - w)
    if resid > tol * size:
        raise NotInTangentSpace(
            f"re-embedding residual {resid:.3e} exceeds {tol:g} * |w| = {tol * size:.3e}"
        )
    return tv


def tangent_dim(b):
    return math.prod(b.rank) + sum((n - r) * r for n, r in zip(b.shape, b.rank))


def tangent_basis_vectors(b):
    """Tangent vectors whose embeddings form an orthonormal basis of the tangent space.

    Ordering: core block (row-major over the rank multi-index), then for each
    mode ``a`` the complement block indexed by (complement column, core
    singular direction).
    """
    zeros_u = tuple(np.zeros_like(u) for u in b.factors)
    out = []
    for idx in np.ndindex(*b.rank):
        dC = np.zeros(b.rank)
        dC[idx] = 1.0
        out.append(TangentVector(b, dC, zeros_u))
    zero_c = np.zeros(b.rank)
    for a, w in enumerate(b.complements):
        p, s, _ = np.linalg.svd(matricize(b.core, a), full_matrices=False)
        coeffs = p / s
        for j in range(w.shape[1]):
            for k in range(coeffs.shape[1]):
                dU = list(zeros_u)
                dU[a] = np.outer(w[:, j], coeffs[:, k])
                out.append(TangentVector(b, zero_c, tuple(dU)))
    return out


def tangent_basis(b):
    """Orthonormal basis of the tangent space as a list of dense tensors.

    Same ordering as :func:`tangent_basis_vectors`.
    """
    return [col.reshape(b.shape) for col in tangent_basis_matrix(b).T]


def tangent_basis_matrix(b):
    """Tangent basis as the columns of a ``prod(shape) x tangent_dim`` matrix."""
    return b.basis_matrix


def _basis_matrix(b):
    d, shape = b.order, b.shape
    kron = lambda mats: functools.reduce(np.kron, mats)
    blocks = [kron(b.factors)]
    for a, w in enumerate(b.complements):
        if w.shape[1] == 0:
            continue
        _, _, vt = np.linalg.svd(matricize(b.core, a), full_matrices=False)
        others = [b.factors[x] for x in range(d) if x != a]
        y = kron(others) @ vt.T
        rest = shape[:a] + shape[a + 1:]
        elems = np.einsum("aj,bk->jkab", w, y).reshape((-1, shape[a]) + rest)
        blocks.append(np.moveaxis(elems, 1, a + 1).reshape(elems.shape[0], -1).T)
    return np.concatenate(blocks, axis=1)


def chart_velocity_to_tangent(b, L_dot, C_dot):
    """Tangent vector of the chart curve ``t -> (t L_dot, C + t C_dot)`` at ``t = 0``."""
    dU = tuple(w @ np.asarray(ld, dtype=float) for w, ld in zip(b.complements, L_dot))
    return TangentVector(b, C_dot, dU)


def _operator_norm(du, u, norm):
    # sup_x |du x| / |u x| over the r-dimensional coefficient space
    if not np.any(du):
        return 0.0
    if norm.p == 2.0 and norm.weights is None:
        return float(np.linalg.norm(du, 2))

    def neg_ratio(x):
        den = norm(u @ x)
        return -norm(du @ x) / den if den > 0 else 0.0

    r = u.shape[1]
    starts = list(np.eye(r)) + [np.linalg.svd(du)[2][0]]
    best = 0.0
    for x0 in starts:
        res = optimize.minimize(neg_ratio, x0, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -neg_ratio(x0), -float(res.fun))
    return best


def tangent_norm(tv, mode_norms=None):
    """Product norm ``|dC|_F + sum_a |L_dot_a|_op`` of a tangent vector.

    ``mode_norms`` gives the norm on each mode (Euclidean by default); for
    ``p != 2`` the operator norm is found by direct maximization.
    """
    b = tv.base
    if mode_norms is None:
        mode_norms = [ModeNorm(2.0)] * b.order
    return float(np.linalg.norm(tv.dC)) + sum(
        _operator_norm(du, u, nrm) for du, u, nrm in zip(tv.dU, b.factors, mode_norms)
    )


def tangent_to_dict(tv):
    return {"dC": tensor_to_dict(tv.dC), "dU": [matrix_to_dict(x) for x in tv.dU]}


def chart_point_to_dict(b, c):
    """Tucker JSON of the retracted point plus an ``"L"`` list of coordinate matrices."""
    obj = tucker_to_dict(retract(b, c))
    obj["L"] = [matrix_to_dict(x) for x in c.L]
    return obj


def chart_point_from_dict(obj):
    if not isinstance(obj, dict) or "core" not in obj or "L" not in obj:
        raise TensorFormatError('chart point object needs "core" and "L"')
    return ChartPoint(tuple(matrix_from_dict(x) for x in obj["L"]), tensor_from_dict(obj["core"]))


__all__ = [
    "BasePoint",
    "ChartPoint",
    "TangentVector",
    "make_base",
    "zero_chart_point",
    "retract",
    "invert_chart",
    "transition",
    "embed_tangent",
    "extract_tangent",
    "orthogonal_tangent",
    "tangent_basis",
    "tangent_basis_vectors",
    "tangent_basis_matrix",
    "tangent_dim",
    "tangent_norm",
    "chart_velocity_to_tangent",
    "tangent_to_dict",
    "chart_point_to_dict",
    "chart_point_from_dict",
]
