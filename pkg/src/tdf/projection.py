"""Projections of ambient tensors onto the tangent space of the Tucker manifold.

Three projectors are provided:

* :func:`project_hilbert` -- Euclidean orthogonal projection (closed form).
* :func:`project_metric_lp` -- nearest point in a weighted l^p norm.
* :func:`project_generalized_lp` -- minimizer of
  ``phi(z, g) = |z|^2 - 2 <z, J(g)> + |g|^2``.

The two Banach projections are solved on the coefficients of an orthonormal
tangent basis with a damped Newton iteration started from the orthogonal
projection; for ``p < 2`` the iteration runs on the Fenchel dual (exponent
``q > 2``) over the orthogonal complement of the tangent space. Optimality is reported as the normalized duality residual
``max_i |<z_i, J(g - w)>| / (|z_i| |g|)`` (metric) or
``max_i |<z_i, J(g) - J(w)>| / (|z_i| |g|)`` (generalized).
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import MaxIterationsExceeded
from .geometry import (
    TangentVector,
    embed_tangent,
    orthogonal_tangent,
    tangent_basis_matrix,
    tangent_to_dict,
)
from .rng import spawn_rngs
from .tensor import AmbientNorm, as_tensor, matricize, multi_mode_contract

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
# stop when the residual has not improved for this many iterations (rounding floor)
STAGNATION_ITERS = 10


@dataclass(frozen=True)
class DualVector:
    coefficients: np.ndarray
    norm_q: float
    q: float


def _jmap(x, w, p):
    # normalized duality map of the weighted l^p norm, flat arrays
    a = np.abs(x)
    scale = a.max(initial=0.0)
    if scale == 0.0:
        return np.zeros_like(x)
    s = np.sum(w * (a / scale) ** p)
    # |x|^{2-p} * w |x_i|^{p-1} sign(x_i), written in scaled form
    return scale * s ** ((2.0 - p) / p) * w * (a / scale) ** (p - 1.0) * np.sign(x)


def duality_map(x, nrm=None):
    """Normalized duality mapping ``J(x)`` for the weighted l^p ambient norm."""
    x = np.asarray(x, dtype=float)
    if nrm is None:
        nrm = AmbientNorm.lp(x.ndim)
    w = nrm.weight_tensor(x.shape).ravel()
    f = _jmap(x.ravel(), w, nrm.p).reshape(x.shape)
    return DualVector(f, nrm.dual(f), nrm.q)


@dataclass(frozen=True, eq=False)
class ProjectionReport:
    tangent: TangentVector
    objective: float
    duality_residual: float
    iterations: int
    converged: bool = True
    projector: str = "hilbert"
    p: float = 2.0

    @cached_property
    def dense(self):
        return embed_tangent(self.tangent)

    def to_dict(self):
        return {
            "projector": self.projector,
            "p": self.p,
            "objective": self.objective,
            "duality_residual": self.duality_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "tangent": tangent_to_dict(self.tangent),
        }


@dataclass
class _Problem:
    """Coefficient-space data shared by the Banach solvers (g scaled to unit norm)."""

    B: np.ndarray
    g: np.ndarray
    w: np.ndarray
    p: float
    zn: np.ndarray = field(init=False)

    def __post_init__(self):
        self.zn = np.array([_pnorm(z, self.w, self.p) for z in self.B.T])


def _pnorm(x, w, p):
    a = np.abs(x)
    scale = a.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    return float(scale * np.sum(w * (a / scale) ** p) ** (1.0 / p))


def _normalized_residual(num, zn, gnorm):
    if gnorm == 0.0 or num.size == 0:
        return 0.0
    return float(np.max(np.abs(num) / (zn * gnorm)))


def duality_residual(basis, g, wdot, nrm=None, kind="metric"):
    """Normalized optimality residual of ``wdot`` as a projection of ``g``.

    ``basis`` is a list of dense tangent tensors (or a matrix with one
    flattened basis tensor per column).
    """
    g = np.asarray(g, dtype=float)
    if nrm is None:
        nrm = AmbientNorm.lp(g.ndim)
    B = basis if isinstance(basis, np.ndarray) else np.stack([z.ravel() for z in basis], axis=1)
    w = nrm.weight_tensor(g.shape).ravel()
    prob = _Problem(B, g.ravel(), w, nrm.p)
    gv, wv = g.ravel(), np.asarray(wdot, dtype=float).ravel()
    if kind == "metric":
        num = B.T @ _jmap(gv - wv, w, nrm.p)
    elif kind == "generalized":
        num = B.T @ (_jmap(gv, w, nrm.p) - _jmap(wv, w, nrm.p))
    else:
        raise ValueError(f"unknown residual kind {kind!r}")
    return _normalized_residual(num, prob.zn, _pnorm(gv, w, nrm.p))


def project_hilbert(b, g):
    """Euclidean orthogonal projection of ``g`` onto the tangent space at ``b``."""
    g = as_tensor(g)
    tv = orthogonal_tangent(b, g)
    wdot = embed_tangent(tv)
    B = tangent_basis_matrix(b)
    res = duality_residual(B, g, wdot)
    return ProjectionReport(tv, float(np.linalg.norm(g - wdot)), res, 0)


# -- Banach projections -----------------------------------------------------

def _metric_terms(prob, c, need_hess=True):
    r = prob.B @ c - prob.g
    a = np.abs(r)
    p, w = prob.p, prob.w
    f = float(np.sum(w * a ** p) / p)
    grad = prob.B.T @ (w * a ** (p - 1.0) * np.sign(r))
    if not need_hess:
        return f, grad, None
    amax = a.max(initial=0.0)
    floor = max(amax * 1e-12, 1e-300)
    d = (p - 1.0) * w * np.maximum(a, floor) ** (p - 2.0)
    hess = prob.B.T @ (d[:, None] * prob.B)
    return f, grad, hess


def _metric_residual(prob, c):
    r = prob.g - prob.B @ c
    return _normalized_residual(prob.B.T @ _jmap(r, prob.w, prob.p), prob.zn, 1.0)


def _generalized_terms(prob, c, need_hess=True):
    x = prob.B @ c
    p, w = prob.p, prob.w
    jg = _jmap(prob.g, w, p)
    nx = _pnorm(x, w, p)
    f = 0.5 * nx ** 2 - float(x @ jg)
    grad = prob.B.T @ (_jmap(x, w, p) - jg)
    if not need_hess:
        return f, grad, None
    if nx == 0.0:
        return f, grad, np.eye(c.size)
    a = np.abs(x)
    h = w * a ** (p - 1.0) * np.sign(x)
    floor = max(a.max() * 1e-12, 1e-300)
    diag = (p - 1.0) * nx ** (2.0 - p) * w * np.maximum(a, floor) ** (p - 2.0)
    Bh = prob.B.T @ h
    hess = prob.B.T @ (diag[:, None] * prob.B) + (2.0 - p) * nx ** (2.0 - 2.0 * p) * np.outer(Bh, Bh)
    return f, grad, hess


def _generalized_residual(prob, c):
    x = prob.B @ c
    num = prob.B.T @ (_jmap(prob.g, prob.w, prob.p) - _jmap(x, prob.w, prob.p))
    return _normalized_residual(num, prob.zn, 1.0)


# For p < 2 the primal objectives are not twice differentiable where an
# entry of the residual (metric) or of the iterate (generalized) vanishes,
# and Newton degrades to slow linear convergence. Their Fenchel duals live
# on the orthogonal complement of the tangent space with exponent q > 2 and
# are C^2, so for p < 2 the solver runs on the dual variable instead.

@dataclass
class _DualProblem:
    primal: _Problem
    N: np.ndarray
    wq: np.ndarray = field(init=False)
    q: float = field(init=False)
    jg: np.ndarray = field(init=False)

    def __post_init__(self):
        p = self.primal.p
        self.q = p / (p - 1.0)
        self.wq = self.primal.w ** (1.0 - self.q)
        self.jg = _jmap(self.primal.g, self.primal.w, p)


def _dual_metric_terms(dp, y, need_hess=True):
    s = dp.N @ y
    a = np.abs(s)
    q = dp.q
    f = float(np.sum(dp.wq * a ** q) / q - s @ dp.primal.g)
    grad = dp.N.T @ (dp.wq * a ** (q - 1.0) * np.sign(s) - dp.primal.g)
    if not need_hess:
        return f, grad, None
    d = (q - 1.0) * dp.wq * a ** (q - 2.0)
    return f, grad, dp.N.T @ (d[:, None] * dp.N)


def _dual_metric_primal(dp, y):
    s = dp.N @ y
    r = dp.wq * np.abs(s) ** (dp.q - 1.0) * np.sign(s)
    return dp.primal.B.T @ (dp.primal.g - r)


def _dual_generalized_terms(dp, y, need_hess=True):
    s = dp.jg + dp.N @ y
    q, wq = dp.q, dp.wq
    ns = _pnorm(s, wq, q)
    f = 0.5 * ns ** 2
    grad = dp.N.T @ _jmap(s, wq, q)
    if not need_hess:
        return f, grad, None
    if ns == 0.0:
        return f, grad, np.eye(y.size)
    a = np.abs(s)
    h = dp.N.T @ (wq * a ** (q - 1.0) * np.sign(s))
    diag = (q - 1.0) * ns ** (2.0 - q) * wq * a ** (q - 2.0)
    hess = dp.N.T @ (diag[:, None] * dp.N) + (2.0 - q) * ns ** (2.0 - 2.0 * q) * np.outer(h, h)
    return f, grad, hess


def _dual_generalized_primal(dp, y):
    return dp.primal.B.T @ _jmap(dp.jg + dp.N @ y, dp.wq, dp.q)


def _solve_dual(prob, c0, kind, tol, max_iter):
    B = prob.B
    m = B.shape[1]
    if m == B.shape[0]:
        return c0, 0, 0.0, True
    N = np.linalg.qr(B, mode="complete")[0][:, m:]
    dp = _DualProblem(prob, N)
    if kind == "metric":
        terms, to_primal, residual = _dual_metric_terms, _dual_metric_primal, _metric_residual
        r0 = prob.g - B @ c0
        y0 = N.T @ (prob.w * np.abs(r0) ** (prob.p - 1.0) * np.sign(r0))
    else:
        terms, to_primal, residual = _dual_generalized_terms, _dual_generalized_primal, _generalized_residual
        y0 = np.zeros(N.shape[1])
    y, iters, res, ok = _newton(dp, y0, terms, lambda d, y: residual(prob, to_primal(d, y)), tol, max_iter)
    return to_primal(dp, y), iters, res, ok


def _line_search(prob, c, step, slope0, terms, eta=0.1, max_halvings=60):
    """Step length along a descent direction of a convex objective.

    Works on the directional derivative only (objective values lose all
    significant digits near the minimizer): the full step is taken when the
    derivative is still non-positive there, otherwise bisection returns a
    point before the 1-D minimizer with ``eta * slope0 <= slope <= 0``.
    """
    def slope(t):
        return float(terms(prob, c + t * step, need_hess=False)[1] @ step)

    if slope(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_halvings):
        mid = 0.5 * (lo + hi)
        d = slope(mid)
        if d > 0.0:
            hi = mid
        elif d >= eta * slope0:
            return mid
        else:
            lo = mid
    return lo


def _newton(prob, c, terms, residual, tol, max_iter):
    """Damped Newton iteration on a smooth convex objective.

    Returns ``(c, iterations, residual, converged)`` for the best iterate.
    """
    best_c, best_res = c, residual(prob, c)
    if best_res <= tol:
        return best_c, 0, best_res, True
    it, best_it = 0, 0
    for it in range(1, max_iter + 1):
        if it - best_it > STAGNATION_ITERS:
            break
        _, grad, hess = terms(prob, c)
        try:
            step = -np.linalg.solve(hess + 1e-15 * np.trace(hess) / max(c.size, 1) * np.eye(c.size), grad)
        except np.linalg.LinAlgError:
            step = -grad
        if not np.all(np.isfinite(step)) or grad @ step >= 0:
            step = -grad
        slope0 = float(grad @ step)
        if slope0 >= 0.0:
            break
        t = _line_search(prob, c, step, slope0, terms)
        if t == 0.0:
            break
        c = c + t * step
        res = residual(prob, c)
        if res < best_res:
            best_c, best_res, best_it = c, res, it
        if res <= tol:
            return best_c, it, best_res, True
    return best_c, it, best_res, False


def _banach_projection(b, g, nrm, tol, max_iter, kind):
    g = as_tensor(g)
    if nrm is None:
        nrm = AmbientNorm.lp(g.ndim)
    B = tangent_basis_matrix(b)
    w = nrm.weight_tensor(g.shape).ravel()
    gnorm = _pnorm(g.ravel(), w, nrm.p)
    scale = gnorm if gnorm > 0 else 1.0
    prob = _Problem(B, g.ravel() / scale, w, nrm.p)
    c0 = B.T @ prob.g
    if nrm.p < 2.0:
        c, iters, res, ok = _solve_dual(prob, c0, kind, tol, max_iter)
    elif kind == "metric":
        c, iters, res, ok = _newton(prob, c0, _metric_terms, _metric_residual, tol, max_iter)
    else:
        c, iters, res, ok = _newton(prob, c0, _generalized_terms, _generalized_residual, tol, max_iter)
    wdot = (B @ c * scale).reshape(g.shape)
    tv = orthogonal_tangent(b, wdot)
    if kind == "metric":
        objective = nrm(g - wdot)
    else:
        objective = generalized_phi(wdot, g, nrm)
    report = ProjectionReport(tv, float(objective), float(res), iters, ok,
                              "metric" if kind == "metric" else "generalized", nrm.p)
    if not ok:
        raise MaxIterationsExceeded(
            f"{report.projector} projection stopped after {iters} iterations "
            f"with duality residual {res:.3e} > tol {tol:g}",
            report,
        )
    return report


def project_metric_lp(b, g, nrm=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Best approximation of ``g`` in the tangent space measured in ``nrm``.

    Raises :class:`MaxIterationsExceeded` (carrying the best report) if the
    duality residual does not reach ``tol``.
    """
    return _banach_projection(b, g, nrm, tol, max_iter, "metric")


def generalized_phi(u, v, nrm=None):
    """``phi(u, v) = |u|^2 - 2 <u, J(v)> + |v|^2``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if nrm is None:
        nrm = AmbientNorm.lp(u.ndim)
    return nrm(u) ** 2 - 2.0 * float(np.dot(u.ravel(), duality_map(v, nrm).coefficients.ravel())) + nrm(v) ** 2


def project_generalized_lp(b, g, nrm=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Minimizer of ``phi(z, g)`` over the tangent space; see :func:`project_metric_lp`."""
    return _banach_projection(b, g, nrm, tol, max_iter, "generalized")


# -- injective norm ---------------------------------------------------------

class InjectiveNormEstimate(NamedTuple):
    lower_bound: float
    certificate: list


def _norming_functional(y, mode_norm):
    n = mode_norm(y)
    if n == 0.0:
        return np.zeros_like(y), 0.0
    w = mode_norm.weight_vector(y.size)
    return _jmap(y, w, mode_norm.p) / n, n


def _contract_except(t, phis, skip):
    out = t
    # contract from the last mode down so axis indices stay valid
    for a in reversed(range(t.ndim)):
        if a != skip:
            out = np.tensordot(out, phis[a], axes=(a, 0))
    return out


def injective_norm(t, nrm=None, restarts=20, seed=None, max_iter=500, tol=1e-14):
    """Lower bound on the injective norm with dual unit vectors as certificate.

    Alternating maximization: each update replaces one functional by the
    norming functional of the contraction of ``t`` with all the others.
    For ``d = 2, p = 2`` the exact value (a weighted largest singular value)
    is returned.
    """
    t = as_tensor(t)
    if not np.any(t):
        raise ValueError("injective norm estimate needs a nonzero tensor")
    if nrm is None:
        nrm = AmbientNorm.lp(t.ndim)
    d = t.ndim
    mode_norms = nrm.mode_norms
    if d == 2 and nrm.p == 2.0:
        s1 = np.sqrt(mode_norms[0].weight_vector(t.shape[0]))
        s2 = np.sqrt(mode_norms[1].weight_vector(t.shape[1]))
        u, s, vt = np.linalg.svd(s1[:, None] * t * s2[None, :])
        return InjectiveNormEstimate(float(s[0]), [s1 * u[:, 0], s2 * vt[0]])

    best_val, best_phis = -1.0, None
    rngs = spawn_rngs(seed, max(restarts, 1))
    for k, rng in enumerate(rngs):
        if k == 0:
            starts = [np.linalg.svd(matricize(t, a), full_matrices=False)[0][:, 0] for a in range(d)]
        else:
            starts = [rng.standard_normal(n) for n in t.shape]
        phis = [_norming_functional(v, m)[0] for v, m in zip(starts, mode_norms)]
        val = 0.0
        for _ in range(max_iter):
            prev = val
            for a in range(d):
                y = _contract_except(t, phis, a)
                phis[a], val = _norming_functional(y, mode_norms[a])
                if val == 0.0:
                    phis[a] = _norming_functional(rng.standard_normal(t.shape[a]), mode_norms[a])[0]
            if val - prev <= tol * val:
                break
        val = abs(float(multi_mode_contract(t, [phi[None, :] for phi in phis]).ravel()[0]))
        if val > best_val:
            best_val, best_phis = val, [phi.copy() for phi in phis]
    return InjectiveNormEstimate(best_val, best_phis)


__all__ = [
    "DualVector",
    "ProjectionReport",
    "InjectiveNormEstimate",
    "duality_map",
    "duality_residual",
    "generalized_phi",
    "project_hilbert",
    "project_metric_lp",
    "project_generalized_lp",
    "injective_norm",
]
