"""Flow generators, the time-dependent Hartree integrator and fixed-rank Tucker dynamics.

All integrators are explicit fourth-order Runge-Kutta with a fixed step
``h = T / round(T / dt)``.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MaxIterationsExceeded, NotMinimalError, RankDegeneracy, SingularCore
from .geometry import embed_tangent, make_base
from .projection import (
    DEFAULT_TOL,
    project_generalized_lp,
    project_hilbert,
    project_metric_lp,
)
from .tensor import AmbientNorm, as_tensor, elementary_tensor, mode_contract, tensor_to_dict
from .tucker import TuckerTensor, core_singular_values, hosvd, tucker_to_dict, tucker_to_dense

UNIT_TOL = 1e-8
RANK_DEGENERACY_TOL = 1e-10
MAX_REFERENCE_SIZE = 10 ** 5
PROJECTORS = ("hilbert", "metric", "generalized")

_RK4_A = (0.0, 0.5, 0.5, 1.0)
_RK4_B = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


@dataclass(frozen=True, eq=False)
class KroneckerSumOperator:
    """Linear operator ``sum_k A_1^(k) (x) ... (x) A_d^(k)``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(tuple(np.asarray(m, dtype=float) for m in term) for term in self.terms)
        if not terms:
            raise ValueError("operator needs at least one term")
        shape = tuple(m.shape[0] for m in terms[0])
        if len(shape) < 2:
            raise ValueError("operator terms need one matrix per mode (d >= 2)")
        for term in terms:
            if tuple(m.shape for m in term) != tuple((n, n) for n in shape):
                raise ValueError(f"inconsistent term shapes, expected square matrices of sizes {shape}")
        object.__setattr__(self, "terms", terms)

    @property
    def shape(self):
        return tuple(m.shape[0] for m in self.terms[0])

    @property
    def order(self):
        return len(self.shape)

    def __call__(self, t):
        return apply_operator(self, t)

    @classmethod
    def identity(cls, shape):
        return cls(((tuple(np.eye(n) for n in shape)),))

    @classmethod
    def kronecker_sum(cls, mats):
        """``sum_a I (x) ... (x) A_a (x) ... (x) I`` from one matrix per mode."""
        mats = [np.asarray(m, dtype=float) for m in mats]
        terms = []
        for a, m in enumerate(mats):
            term = [np.eye(x.shape[0]) for x in mats]
            term[a] = m
            terms.append(tuple(term))
        return cls(tuple(terms))

    @classmethod
    def laplacian(cls, shape):
        """Kronecker sum of 1D Dirichlet Laplacians on ``(0, 1)`` with ``n_a`` interior nodes."""
        return cls.kronecker_sum([dirichlet_laplacian(n) for n in shape])

    @classmethod
    def random_symmetric(cls, rng, shape, n_terms=2, scale=1.0):
        terms = []
        for _ in range(n_terms):
            term = []
            for n in shape:
                m = rng.standard_normal((n, n))
                term.append(scale * (m + m.T) / (2.0 * math.sqrt(n)))
            terms.append(tuple(term))
        return cls(tuple(terms))


def dirichlet_laplacian(n):
    h = 1.0 / (n + 1)
    return (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / h ** 2


def apply_operator(A, t):
    t = np.asarray(t, dtype=float)
    if t.shape != A.shape:
        raise ValueError(f"operator acts on shape {A.shape}, tensor has shape {t.shape}")
    out = np.zeros_like(t)
    for term in A.terms:
        y = t
        for a, m in enumerate(term):
            y = mode_contract(y, a, m)
        out += y
    return out


def _check_unit(factors, tol=UNIT_TOL):
    for a, v in enumerate(factors):
        dev = abs(np.linalg.norm(v) - 1.0)
        if dev > tol:
            raise ValueError(f"factor {a} is not a unit vector (| |v| - 1 | = {dev:.2e})")


def _term_expectations(A, factors):
    # s[k][b] = <A_b^(k) v_b, v_b>
    return np.array([[float(v @ (m @ v)) for m, v in zip(term, factors)] for term in A.terms])


def mean_field(A, factors, alpha):
    """Single-mode operator ``sum_k (prod_{b != alpha} <A_b v_b, v_b>) A_alpha``."""
    factors = [np.asarray(v, dtype=float) for v in factors]
    _check_unit(factors)
    s = _term_expectations(A, factors)
    weights = np.prod(np.delete(s, alpha, axis=1), axis=1)
    n = A.shape[alpha]
    out = np.zeros((n, n))
    for wk, term in zip(weights, A.terms):
        out += wk * term[alpha]
    return out


@dataclass(frozen=True, eq=False)
class HartreeState:
    """Rank-one state ``lam * v_1 (x) ... (x) v_d`` with unit factors."""

    lam: float
    factors: tuple

    def __post_init__(self):
        factors = tuple(np.asarray(v, dtype=float).ravel() for v in self.factors)
        if len(factors) < 2:
            raise ValueError("a Hartree state needs d >= 2 factors")
        _check_unit(factors, 1e-10)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "factors", factors)

    @classmethod
    def from_vectors(cls, vectors, lam=1.0):
        """Normalize ``vectors`` and absorb their norms into ``lam``."""
        norms = [np.linalg.norm(v) for v in vectors]
        return cls(lam * math.prod(norms), tuple(np.asarray(v, float) / n for v, n in zip(vectors, norms)))

    def to_dense(self):
        return self.lam * elementary_tensor(self.factors)

    def to_dict(self):
        return {"lambda": self.lam, "factors": [[float(x) for x in v] for v in self.factors]}


def hartree_rhs(A, s):
    """Right-hand side of the Hartree equations at the state ``s``.

    Returns ``(dlam, dfactors)`` with ``dlam = <A(x)v, (x)v> lam`` and
    ``dfactors[a] = (I - v_a v_a^T) M_a v_a`` where ``M_a`` is the mean field.
    """
    dfactors = []
    for a, v in enumerate(s.factors):
        mv = mean_field(A, s.factors, a) @ v
        dfactors.append(mv - v * (v @ mv))
    energy = float(np.sum(np.prod(_term_expectations(A, s.factors), axis=1)))
    return energy * s.lam, dfactors


def _hartree_field(A, lam, vs):
    # smooth extension off the unit spheres: evaluate at the normalized factors
    us = [v / np.linalg.norm(v) for v in vs]
    s = _term_expectations(A, us)
    energy = float(np.sum(np.prod(s, axis=1)))
    dvs = []
    for a, u in enumerate(us):
        weights = np.prod(np.delete(s, a, axis=1), axis=1)
        mv = sum(wk * (term[a] @ u) for wk, term in zip(weights, A.terms))
        dvs.append(mv - u * (u @ mv))
    return energy * lam, dvs, energy


@dataclass
class TrajectoryRecord:
    """Times, states and per-step diagnostics of an integration."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def append(self, t, state, **diag):
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(float(t))
        self.states.append(state)
        self.diagnostics.append(diag)

    @property
    def final(self):
        return self.states[-1]

    def dense(self, i=-1):
        return _dense_state(self.states[i])

    def series(self, key):
        """Values of one diagnostic over all recorded times (``None`` where absent)."""
        return [d.get(key) for d in self.diagnostics]

    def columns(self):
        cols = []
        for d in self.diagnostics:
            for k in d:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self, fh=None):
        """Write one row per recorded time: ``step, t`` then the diagnostics."""
        own = fh is None
        fh = io.StringIO() if own else fh
        cols = self.columns()
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "t"] + cols)
        for i, (t, d) in enumerate(zip(self.times, self.diagnostics)):
            writer.writerow([i, repr(t)] + [_fmt(d.get(k)) for k in cols])
        return fh.getvalue() if own else None

    def to_dict(self, dump_states=False):
        obj = {"times": self.times, "diagnostics": self.diagnostics}
        if dump_states:
            obj["states"] = [_state_to_dict(s) for s in self.states]
        return obj

    def to_json(self, dump_states=False):
        return json.dumps(self.to_dict(dump_states))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _dense_state(s):
    if isinstance(s, HartreeState):
        return s.to_dense()
    if isinstance(s, TuckerTensor):
        return tucker_to_dense(s)
    return np.asarray(s)


def _state_to_dict(s):
    if isinstance(s, HartreeState):
        return s.to_dict()
    if isinstance(s, TuckerTensor):
        return tucker_to_dict(s)
    return tensor_to_dict(s)


def _steps(T, dt):
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = max(1, int(round(T / dt)))
    return n, T / n


def _reference_error(reference, i, dense):
    if reference is None:
        return None
    return float(np.linalg.norm(dense - reference.dense(i)))


def _as_flow(F):
    if isinstance(F, KroneckerSumOperator):
        return lambda t, x: apply_operator(F, x)
    if callable(F):
        return F
    raise TypeError("flow must be a KroneckerSumOperator or a callable F(t, x)")


def integrate_hartree(A, s0, T, dt, reference=None):
    """Time-dependent Hartree method: RK4 on ``(lam, v_1, ..., v_d)``.

    Factors are renormalized after every step (the pre-normalization drift
    is recorded). ``lambda_closed`` is the closed-form exponential of the
    trapezoid integral of the recorded energies ``<A(x)v, (x)v>``.
    ``reference`` is an optional trajectory on the same time grid.
    """
    n, h = _steps(T, dt)
    lam, vs = s0.lam, [v.copy() for v in s0.factors]
    rec = TrajectoryRecord()
    _, _, energy = _hartree_field(A, lam, vs)
    log_int = 0.0

    def record(t, state, energy, drift):
        dlam, dfac = hartree_rhs(A, state)
        tang = max(abs(float(df @ v)) for df, v in zip(dfac, state.factors))
        closed = s0.lam * math.exp(log_int)
        rec.append(
            t, state,
            **{"lambda": state.lam, "lambda_closed": closed,
               "lambda_rel_dev": abs(state.lam - closed) / abs(state.lam) if state.lam else 0.0,
               "energy": energy, "norm_drift": drift, "tangency": tang,
               "ref_error": _reference_error(reference, len(rec.times), state.to_dense())},
        )

    record(0.0, s0, energy, 0.0)
    for step in range(1, n + 1):
        t = (step - 1) * h
        ks = []
        for a_i in _RK4_A:
            if ks and a_i:
                kl, kv = ks[-1]
                stage_lam, stage_vs = lam + a_i * h * kl, [v + a_i * h * k for v, k in zip(vs, kv)]
            else:
                stage_lam, stage_vs = lam, vs
            dl, dv, _ = _hartree_field(A, stage_lam, stage_vs)
            ks.append((dl, dv))
        lam = lam + h * sum(b * k[0] for b, k in zip(_RK4_B, ks))
        vs = [v + h * sum(b * k[1][a] for b, k in zip(_RK4_B, ks)) for a, v in enumerate(vs)]
        if not (math.isfinite(lam) and all(np.all(np.isfinite(v)) for v in vs)):
            raise FloatingPointError(f"non-finite Hartree state at step {step} (t = {t + h:g})")
        norms = [np.linalg.norm(v) for v in vs]
        drift = float(max(abs(x - 1.0) for x in norms))
        vs = [v / x for v, x in zip(vs, norms)]
        _, _, new_energy = _hartree_field(A, lam, vs)
        log_int += 0.5 * h * (energy + new_energy)
        energy = new_energy
        record(step * h, HartreeState(lam, tuple(vs)), energy, drift)
    return rec


def reference_solve(A, u0, T, dt, record_states=True):
    """RK4 on the full ambient linear ODE ``u' = A u`` (or ``u' = F(t, u)``)."""
    u0 = as_tensor(u0)
    if u0.size > MAX_REFERENCE_SIZE:
        raise ValueError(f"ambient dimension {u0.size} exceeds the cap {MAX_REFERENCE_SIZE}")
    F = _as_flow(A)
    rec = TrajectoryRecord()
    rec.append(0.0, u0.copy(), norm=float(np.linalg.norm(u0)))
    if T == 0:
        return rec
    n, h = _steps(T, dt)
    u = u0
    for step in range(1, n + 1):
        t = (step - 1) * h
        ks = []
        for c in _RK4_A:
            x = u if not ks else u + c * h * ks[-1]
            ks.append(F(t + c * h, x))
        u = u + h * sum(b * k for b, k in zip(_RK4_B, ks))
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite reference state at step {step}")
        last = step == n
        rec.append(step * h, u if (record_states or last) else None, norm=float(np.linalg.norm(u)))
    return rec


def _project(projector, b, g, nrm, tol):
    if projector == "hilbert":
        return project_hilbert(b, g)
    if projector == "metric":
        return project_metric_lp(b, g, nrm, tol=tol)
    if projector == "generalized":
        return project_generalized_lp(b, g, nrm, tol=tol)
    raise ValueError(f"unknown projector {projector!r}; expected one of {PROJECTORS}")


def _stage_base(u, step):
    svals = core_singular_values(u.core)
    for a, s in enumerate(svals):
        if s[-1] < RANK_DEGENERACY_TOL * s[0]:
            raise RankDegeneracy(
                f"step {step}: core matricization {a} has singular value ratio {s[-1] / s[0]:.3e}",
                step,
            )
    try:
        return make_base(u), [float(s[-1]) for s in svals]
    except (NotMinimalError, SingularCore) as exc:
        raise RankDegeneracy(f"step {step}: {exc}", step) from None


def integrate_tucker_dlra(F, v0, T, dt, projector="hilbert", nrm=None, p=None,
                          tol=DEFAULT_TOL, reference=None):
    """Dirac-Frenkel reduced dynamics on the Tucker manifold of rank ``v0.rank``.

    Each RK4 stage truncates the stage point to rank ``r`` (HOSVD),
    evaluates ``F`` there and projects onto the tangent space with the
    chosen projector; the step end is truncated again. ``v0`` may be a
    :class:`TuckerTensor`; a dense tensor is not accepted here, use
    :func:`tdf.tucker.hosvd` to obtain the initial reduced state.
    """
    if projector not in PROJECTORS:
        raise ValueError(f"unknown projector {projector!r}; expected one of {PROJECTORS}")
    flow = _as_flow(F)
    rank = v0.rank
    if nrm is None:
        nrm = AmbientNorm.lp(v0.order, 2.0 if p is None else p)
    n, h = _steps(T, dt)
    rec = TrajectoryRecord()
    u = v0
    dense = tucker_to_dense(u)
    _, smin = _stage_base(u, 0)
    rec.append(0.0, u, galerkin_residual=0.0, iterations=0,
               **{f"core_smin_{a}": s for a, s in enumerate(smin)},
               ref_error=_reference_error(reference, 0, dense))
    for step in range(1, n + 1):
        t = (step - 1) * h
        ks, resid, iters, smin_step = [], 0.0, 0, None
        for c in _RK4_A:
            if ks:
                stage_u, _ = hosvd(dense + c * h * ks[-1], rank)
            else:
                stage_u = u
            b, smin = _stage_base(stage_u, step)
            smin_step = smin if smin_step is None else [min(x, y) for x, y in zip(smin_step, smin)]
            g = flow(t + c * h, b.dense)
            try:
                report = _project(projector, b, g, nrm, tol)
            except MaxIterationsExceeded as exc:
                exc.args = (f"step {step}: {exc.args[0]}",)
                raise
            except SingularCore as exc:
                raise RankDegeneracy(f"step {step}: {exc}", step) from None
            resid = max(resid, report.duality_residual)
            iters += report.iterations
            ks.append(embed_tangent(report.tangent))
        new_dense = dense + h * sum(bw * k for bw, k in zip(_RK4_B, ks))
        if not np.all(np.isfinite(new_dense)):
            raise FloatingPointError(f"non-finite reduced state at step {step}")
        u, _ = hosvd(new_dense, rank)
        dense = tucker_to_dense(u)
        rec.append(step * h, u, galerkin_residual=resid, iterations=iters,
                   **{f"core_smin_{a}": s for a, s in enumerate(smin_step)},
                   ref_error=_reference_error(reference, step, dense))
    return rec


__all__ = [
    "KroneckerSumOperator",
    "HartreeState",
    "TrajectoryRecord",
    "dirichlet_laplacian",
    "apply_operator",
    "mean_field",
    "hartree_rhs",
    "integrate_hartree",
    "integrate_tucker_dlra",
    "reference_solve",
]
