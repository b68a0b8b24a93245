"""Exact 2x2 matrix and projective-line primitives.

Matrices carry an optional ``log_scale`` so that atoms such as
``diag(exp(l**k), exp(-l**k))`` can be represented without overflow: the
represented matrix is ``exp(log_scale) * [[a, b], [c, d]]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SL_DET_TOL = 1e-12
GL_DET_MIN = 1e-300
PROJ_SNAP = 1e-12

# keep normalized entries inside [2**-RENORM_EXP, 2**RENORM_EXP]
_RENORM_EXP = 64


class MaterializationError(OverflowError):
    """A log-scaled matrix cannot be written with plain float entries."""


class SingularMatrixError(ValueError):
    pass


def _sigma(a, b, c, d):
    """Singular values (largest, smallest) of [[a, b], [c, d]], closed form."""
    q = math.hypot((a + d) / 2.0, (c - b) / 2.0)
    r = math.hypot((a - d) / 2.0, (c + b) / 2.0)
    return q + r, abs(q - r)


def sigma_max_arrays(a, b, c, d):
    """Vectorized largest singular value of stacked 2x2 matrices."""
    q = np.hypot((a + d) / 2.0, (c - b) / 2.0)
    r = np.hypot((a - d) / 2.0, (c + b) / 2.0)
    return q + r


@dataclass(frozen=True)
class Mat2:
    """Real 2x2 matrix ``exp(log_scale) * [[a, b], [c, d]]``.

    ``log_abs_det_hint`` is an optional exact value of ``log|det|`` supplied by
    constructors that know it; it survives underflow of the normalized
    entries (e.g. ``diag(1, exp(-2000))``).
    """

    a: float
    b: float
    c: float
    d: float
    log_scale: float = 0.0
    log_abs_det_hint: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("a", "b", "c", "d", "log_scale"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"Mat2 entry {name} is not finite: {v}")
            object.__setattr__(self, name, v)

    # -- constructors -------------------------------------------------------
    @classmethod
    def from_array(cls, arr, log_scale: float = 0.0) -> "Mat2":
        arr = np.asarray(arr, dtype=float).reshape(2, 2)
        return cls(arr[0, 0], arr[0, 1], arr[1, 0], arr[1, 1], log_scale)

    @classmethod
    def diag(cls, x: float, y: float) -> "Mat2":
        return cls(x, 0.0, 0.0, y)

    @classmethod
    def from_log_diag(cls, lx: float, ly: float) -> "Mat2":
        """``diag(exp(lx), exp(ly))`` without ever forming the large entry."""
        s = max(lx, ly)
        return cls(math.exp(lx - s), 0.0, 0.0, math.exp(ly - s), s,
                   log_abs_det_hint=lx + ly)

    # -- basic algebra ------------------------------------------------------
    @property
    def entries(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def det(self) -> float:
        """Determinant with the scale applied (may overflow to inf)."""
        return math.copysign(
            _safe_exp(self.log_abs_det()),
            self.a * self.d - self.b * self.c,
        )

    def log_abs_det(self) -> float:
        if self.log_abs_det_hint is not None:
            return self.log_abs_det_hint
        raw = abs(self.a * self.d - self.b * self.c)
        if raw == 0.0:
            return -math.inf
        return 2.0 * self.log_scale + math.log(raw)

    def is_diagonal(self) -> bool:
        return self.b == 0.0 and self.c == 0.0

    def log_diag(self):
        """``(log|m11|, log|m22|)`` of a diagonal matrix, exact under underflow."""
        if not self.is_diagonal():
            raise ValueError("matrix is not diagonal")
        a, d = abs(self.a), abs(self.d)
        lx = self.log_scale + math.log(a) if a > 0 else -math.inf
        ly = self.log_scale + math.log(d) if d > 0 else -math.inf
        if self.log_abs_det_hint is not None:
            # the smaller entry may have underflowed; recover it from the det
            if a >= d:
                ly = self.log_abs_det_hint - lx
            else:
                lx = self.log_abs_det_hint - ly
        return lx, ly

    def __matmul__(self, other: "Mat2") -> "Mat2":
        p = self.entries @ other.entries
        s = self.log_scale + other.log_scale
        hint = None
        if self.log_abs_det_hint is not None or other.log_abs_det_hint is not None:
            hint = self.log_abs_det() + other.log_abs_det()
        return _renormalized(p, s, hint)

    def inverse(self) -> "Mat2":
        raw = self.a * self.d - self.b * self.c
        if raw == 0.0:
            raise SingularMatrixError("matrix is singular at working precision")
        adj = np.array([[self.d, -self.b], [-self.c, self.a]]) / raw
        hint = None if self.log_abs_det_hint is None else -self.log_abs_det_hint
        return _renormalized(adj, -self.log_scale, hint)

    def materialize(self) -> "Mat2":
        """Plain-entry copy (``log_scale == 0``); raises if entries overflow."""
        if self.log_scale == 0.0:
            return self
        try:
            f = math.exp(self.log_scale)
        except OverflowError as exc:
            raise MaterializationError(
                f"exp({self.log_scale}) overflows; truncate earlier") from exc
        vals = [self.a * f, self.b * f, self.c * f, self.d * f]
        if not all(math.isfinite(v) for v in vals):
            raise MaterializationError("materialized entries overflow")
        return Mat2(*vals, 0.0, self.log_abs_det_hint)

    def to_json(self) -> dict:
        out = {"m": [[self.a, self.b], [self.c, self.d]]}
        if self.log_scale != 0.0:
            out["log_scale"] = self.log_scale
        if self.log_abs_det_hint is not None:
            out["log_abs_det"] = self.log_abs_det_hint
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Mat2":
        (a, b), (c, d) = obj["m"]
        return cls(a, b, c, d, obj.get("log_scale", 0.0), obj.get("log_abs_det"))


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _renormalized(p: np.ndarray, s: float, hint) -> Mat2:
    big = float(np.max(np.abs(p)))
    if big > 0.0:
        e = math.frexp(big)[1]
        if abs(e) > _RENORM_EXP:
            p = p * 2.0 ** (-e)
            s += e * math.log(2.0)
    return Mat2(p[0, 0], p[0, 1], p[1, 0], p[1, 1], s, hint)


def rotation(t: float) -> Mat2:
    c, s = math.cos(t), math.sin(t)
    return Mat2(c, -s, s, c)


def lower_shear(eps: float) -> Mat2:
    return Mat2(1.0, 0.0, eps, 1.0)


def upper_shear(eps: float) -> Mat2:
    return Mat2(1.0, eps, 0.0, 1.0)


IDENTITY = Mat2(1.0, 0.0, 0.0, 1.0)
#: the quarter turn that swaps the coordinate axes
SWAP = Mat2(0.0, -1.0, 1.0, 0.0)


def is_sl2(m: Mat2, tol: float = SL_DET_TOL) -> bool:
    return abs(m.det() - 1.0) <= tol


def is_gl2(m: Mat2) -> bool:
    return m.log_abs_det() >= math.log(GL_DET_MIN)


# -- norms and metric -------------------------------------------------------

def operator_norm(m: Mat2) -> float:
    """Largest singular value (inf if the scale overflows)."""
    s1, _ = _sigma(m.a, m.b, m.c, m.d)
    if m.log_scale == 0.0:
        return s1
    return _safe_exp(m.log_scale) * s1 if s1 > 0 else 0.0


def log_operator_norm(m: Mat2) -> float:
    s1, _ = _sigma(m.a, m.b, m.c, m.d)
    if s1 == 0.0:
        return -math.inf
    return m.log_scale + math.log(s1)


def singular_values(m: Mat2):
    s1, s2 = _sigma(m.a, m.b, m.c, m.d)
    f = _safe_exp(m.log_scale)
    return s1 * f, s2 * f


def matrix_metric(x: Mat2, y: Mat2) -> float:
    """Operator-norm distance ``||x - y||``.

    Raises MaterializationError when either operand cannot be written with
    finite entries.
    """
    x, y = x.materialize(), y.materialize()
    return _sigma(x.a - y.a, x.b - y.b, x.c - y.c, x.d - y.d)[0]


def log_matrix_metric(x: Mat2, y: Mat2) -> float:
    """``log ||x - y||`` evaluated without materializing either operand."""
    s = max(x.log_scale, y.log_scale)
    fx, fy = math.exp(x.log_scale - s), math.exp(y.log_scale - s)
    n = _sigma(fx * x.a - fy * y.a, fx * x.b - fy * y.b,
               fx * x.c - fy * y.c, fx * x.d - fy * y.d)[0]
    return s + math.log(n) if n > 0 else -math.inf


# -- projective line --------------------------------------------------------

@dataclass(frozen=True)
class ProjPoint:
    """Line through the origin at angle ``theta`` in [0, pi)."""

    theta: float

    def __post_init__(self):
        t = math.fmod(float(self.theta), math.pi)
        if t < 0:
            t += math.pi
        if math.pi - t <= PROJ_SNAP or t <= PROJ_SNAP:
            t = 0.0
        object.__setattr__(self, "theta", t)

    @classmethod
    def from_vector(cls, v) -> "ProjPoint":
        x, y = float(v[0]), float(v[1])
        if x == 0.0 and y == 0.0:
            raise ValueError("zero vector has no projective class")
        return cls(math.atan2(y, x))

    @property
    def vector(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])


_HALF_PI = math.pi / 2
H = ProjPoint(0.0)
V = ProjPoint(_HALF_PI)


def _check_invertible(m: Mat2):
    if m.log_abs_det() == -math.inf:
        raise SingularMatrixError("projective action needs an invertible matrix")


def _image_log_components(m: Mat2, theta: float):
    """Logs of |components| of m*v (scale included) for diagonal m."""
    lx, ly = m.log_diag()
    c = 0.0 if theta == _HALF_PI else math.cos(theta)
    s = math.sin(theta)
    ux = lx + math.log(abs(c)) if c != 0.0 else -math.inf
    uy = ly + math.log(abs(s)) if s != 0.0 else -math.inf
    return ux, uy, c, s


def proj_action(m: Mat2, p: ProjPoint) -> ProjPoint:
    _check_invertible(m)
    if m.is_diagonal():
        ux, uy, c, s = _image_log_components(m, p.theta)
        top = max(ux, uy)
        x = math.copysign(math.exp(ux - top), c * m.a) if ux > -math.inf else 0.0
        y = math.copysign(math.exp(uy - top), s * m.d) if uy > -math.inf else 0.0
        return ProjPoint.from_vector((x, y))
    v = p.vector
    w = m.entries @ v
    return ProjPoint.from_vector(w)


def phi(m: Mat2, p: ProjPoint) -> float:
    """``log(||m v|| / ||v||)`` for any representative v of p."""
    _check_invertible(m)
    if m.is_diagonal():
        ux, uy, _, _ = _image_log_components(m, p.theta)
        top = max(ux, uy)
        return top + 0.5 * math.log(math.exp(2 * (ux - top)) + math.exp(2 * (uy - top)))
    w = m.entries @ p.vector
    return m.log_scale + math.log(math.hypot(w[0], w[1]))


def proj_metric(p: ProjPoint, q: ProjPoint) -> float:
    """Sine of the angle between the two lines."""
    return abs(math.sin(p.theta - q.theta))


def wedge_norm(m: Mat2) -> float:
    return _safe_exp(m.log_abs_det())


def log_wedge_norm(m: Mat2) -> float:
    return m.log_abs_det()
