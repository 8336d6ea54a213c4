"""Dense order-d tensors: matricization, mode products, inner products and norms.

Dense tensors are plain ``numpy.ndarray`` objects of dtype float64 with at
least two axes. Mode indices are zero-based throughout the package.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TensorFormatError

__all__ = [
    "as_tensor",
    "matricize",
    "dematricize",
    "mode_contract",
    "multi_mode_contract",
    "elementary_tensor",
    "inner",
    "ModeNorm",
    "AmbientNorm",
    "ambient_norm",
    "tensor_to_dict",
    "tensor_from_dict",
    "read_tensor",
    "write_tensor",
]


def as_tensor(t, min_order=2):
    """Return ``t`` as a finite float64 array of order at least ``min_order``."""
    arr = np.asarray(t, dtype=float)
    if arr.ndim < min_order:
        raise ValueError(f"tensor must have order >= {min_order}, got {arr.ndim}")
    if any(n < 1 for n in arr.shape):
        raise ValueError(f"every mode size must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor has non-finite entries")
    return arr


def _check_mode(mu, d):
    if not isinstance(mu, (int, np.integer)) or not 0 <= mu < d:
        raise IndexError(f"mode {mu!r} out of range for order {d}")


def matricize(t, mu):
    """Mode-``mu`` matricization.

    Rows are indexed by mode ``mu``; columns run over the remaining modes in
    ascending order, flattened row-major (last index fastest).
    """
    t = np.asarray(t)
    _check_mode(mu, t.ndim)
    return np.moveaxis(t, mu, 0).reshape(t.shape[mu], -1)


def dematricize(m, mu, shape):
    """Inverse of :func:`matricize` for a tensor of the given ``shape``."""
    shape = tuple(int(n) for n in shape)
    _check_mode(mu, len(shape))
    m = np.asarray(m)
    rest = shape[:mu] + shape[mu + 1:]
    if m.shape != (shape[mu], math.prod(rest)):
        raise ValueError(f"matrix of shape {m.shape} does not unfold shape {shape} in mode {mu}")
    return np.moveaxis(m.reshape((shape[mu],) + rest), 0, mu)


def mode_contract(t, mu, m):
    """Multiply mode ``mu`` of ``t`` by the matrix ``m`` (size ``k x n_mu``)."""
    t = np.asarray(t)
    m = np.asarray(m)
    _check_mode(mu, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[mu]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot act on mode {mu} of size {t.shape[mu]}"
        )
    return np.moveaxis(np.tensordot(m, t, axes=(1, mu)), 0, mu)


def multi_mode_contract(t, mats, skip=None, transpose=False):
    """Apply ``mats[a]`` to every mode ``a`` except ``skip``.

    With ``transpose=True`` the transposes are applied instead, which is how
    a tensor is expressed in the coordinates of orthonormal factor bases.
    """
    out = np.asarray(t)
    for a, m in enumerate(mats):
        if a == skip or m is None:
            continue
        out = mode_contract(out, a, m.T if transpose else m)
    return out


def elementary_tensor(vectors):
    """Outer product of ``d >= 2`` vectors."""
    vectors = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if len(vectors) < 2:
        raise ValueError("an elementary tensor needs at least two vectors")
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def inner(t, s):
    """Euclidean coefficient inner product of two tensors of equal shape."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {s.shape}")
    return float(np.dot(t.ravel(), s.ravel()))


@dataclass(frozen=True)
class ModeNorm:
    """Weighted l^p norm ``(sum_i w_i |x_i|^p)^(1/p)`` on one mode.

    ``weights=None`` means unit weights for whatever length is presented.
    """

    p: float = 2.0
    weights: tuple = None

    def __post_init__(self):
        p = float(self.p)
        if not (1.0 < p < math.inf):
            raise ValueError(f"mode norm exponent must satisfy 1 < p < inf, got {self.p}")
        object.__setattr__(self, "p", p)
        if self.weights is not None:
            w = tuple(float(x) for x in np.asarray(self.weights, dtype=float).ravel())
            if not all(x > 0 and math.isfinite(x) for x in w):
                raise ValueError("mode norm weights must be positive and finite")
            object.__setattr__(self, "weights", w)

    @property
    def q(self):
        """Dual exponent ``p / (p - 1)``."""
        return self.p / (self.p - 1.0)

    def weight_vector(self, n):
        if self.weights is None:
            return np.ones(n)
        if len(self.weights) != n:
            raise ValueError(f"norm has {len(self.weights)} weights, vector has length {n}")
        return np.asarray(self.weights)

    def __call__(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return _weighted_pnorm(x, self.weight_vector(x.size), self.p)

    def dual(self, f):
        """Dual norm of a functional ``f`` under the Euclidean pairing."""
        f = np.asarray(f, dtype=float).ravel()
        w = self.weight_vector(f.size)
        return _weighted_pnorm(f, w ** (1.0 - self.q), self.q)


def _weighted_pnorm(x, w, p):
    a = np.abs(x)
    scale = a.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    # scale first so |x|^p neither overflows nor underflows
    return float(scale * np.sum(w * (a / scale) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class AmbientNorm:
    """Entrywise weighted l^p norm on the tensor space with product weights.

    All modes must share one exponent; the norm is then multiplicative on
    elementary tensors (a crossnorm) and so is its dual.
    """

    mode_norms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        norms = tuple(self.mode_norms)
        if len(norms) < 2:
            raise ValueError("an ambient norm needs one mode norm per mode (d >= 2)")
        if len({m.p for m in norms}) != 1:
            raise ValueError("all mode norms must share the same exponent p")
        object.__setattr__(self, "mode_norms", norms)

    @classmethod
    def lp(cls, d, p=2.0, weights=None):
        """Uniform exponent ``p`` on ``d`` modes; ``weights`` is an optional per-mode list."""
        if weights is None:
            weights = [None] * d
        return cls(tuple(ModeNorm(p, w) for w in weights))

    @property
    def p(self):
        return self.mode_norms[0].p

    @property
    def q(self):
        return self.mode_norms[0].q

    @property
    def order(self):
        return len(self.mode_norms)

    def weight_tensor(self, shape):
        if len(shape) != self.order:
            raise ValueError(f"norm is for order {self.order}, tensor has order {len(shape)}")
        ws = [m.weight_vector(n) for m, n in zip(self.mode_norms, shape)]
        return elementary_tensor(ws)

    def is_euclidean(self):
        return self.p == 2.0 and all(m.weights is None or set(m.weights) == {1.0} for m in self.mode_norms)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return _weighted_pnorm(t.ravel(), self.weight_tensor(t.shape).ravel(), self.p)

    def dual(self, f):
        f = np.asarray(f, dtype=float)
        w = self.weight_tensor(f.shape).ravel()
        return _weighted_pnorm(f.ravel(), w ** (1.0 - self.q), self.q)


def ambient_norm(t, nrm=None):
    """Ambient norm of ``t``; Euclidean (Frobenius) when ``nrm`` is None."""
    t = np.asarray(t, dtype=float)
    if nrm is None:
        nrm = AmbientNorm.lp(t.ndim)
    return nrm(t)


# -- JSON file format -------------------------------------------------------

def tensor_to_dict(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise TensorFormatError("cannot serialize non-finite tensor entries")
    return {"dims": [int(n) for n in t.shape], "data": [float(x) for x in t.ravel()]}


def tensor_from_dict(obj, min_order=2):
    if not isinstance(obj, dict) or "dims" not in obj or "data" not in obj:
        raise TensorFormatError('tensor object needs "dims" and "data"')
    dims, data = obj["dims"], obj["data"]
    if not isinstance(dims, list) or not isinstance(data, list):
        raise TensorFormatError('"dims" and "data" must be lists')
    if len(dims) < min_order:
        raise TensorFormatError(f"tensor needs at least {min_order} dims, got {len(dims)}")
    if not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in dims):
        raise TensorFormatError(f"dims must be positive integers, got {dims}")
    if math.prod(dims) != len(data):
        raise TensorFormatError(
            f"dims {dims} need {math.prod(dims)} entries, data has {len(data)}"
        )
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise TensorFormatError(f"non-numeric tensor data: {exc}") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise TensorFormatError("tensor data must be a flat list of finite numbers")
    return arr.reshape(dims)


def read_tensor(path):
    """Read a tensor JSON file ``{"dims": [...], "data": [...]}``.

    Raises ``OSError`` if the file cannot be read and
    :class:`TensorFormatError` if its contents are malformed.
    """
    with open(path) as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TensorFormatError(f"{path}: invalid JSON ({exc})") from None
    return tensor_from_dict(obj)


def write_tensor(t, path):
    # json writes the shortest repr that round-trips every double exactly
    with open(path, "w") as fh:
        json.dump(tensor_to_dict(as_tensor(t)), fh)
        fh.write("\n")
