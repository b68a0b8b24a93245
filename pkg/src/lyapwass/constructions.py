"""Generators for the discontinuity examples, with their expected values.

Every generator returns the measure(s) together with the analytically
expected exponent, a W1 bound where one exists, a provenance tag
(``paper``, ``derived`` or ``trivial``) and the truncation report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .mat2 import IDENTITY, SWAP, Mat2, lower_shear, matrix_metric, rotation, upper_shear
from .measure import DiscreteMeasure, TruncationReport, make_measure, truncate_series

# e^{-sqrt k} is summed explicitly up to here; the remainder is below 1e-80
_SERIES_TERMS = 40_000


@lru_cache(maxsize=1)
def _exp_sqrt_suffix() -> np.ndarray:
    k = np.arange(1, _SERIES_TERMS + 1, dtype=float)
    terms = np.exp(-np.sqrt(k))
    # suffix[j] = sum_{k >= j} e^{-sqrt k}, summed from the small end
    suffix = np.zeros(_SERIES_TERMS + 2)
    suffix[1:-1] = np.cumsum(terms[::-1])[::-1]
    return suffix


def exp_sqrt_tail(m: int) -> float:
    """``sum_{k >= m} exp(-sqrt k)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > _SERIES_TERMS:
        return exp_sqrt_tail_bound(m - 1)
    return float(_exp_sqrt_suffix()[m])


def exp_sqrt_tail_bound(K: int) -> float:
    """Integral bound ``sum_{k > K} e^{-sqrt k} <= 2 (sqrt K + 1) e^{-sqrt K}``."""
    r = math.sqrt(K)
    return 2.0 * (r + 1.0) * math.exp(-r)


def first_moment_tail_bound(K: int) -> float:
    """Bound on ``sum_{k > K} k e^{-sqrt k}`` by ``int_K^inf x e^{-sqrt x} dx``."""
    r = math.sqrt(K)
    return 2.0 * math.exp(-r) * (r ** 3 + 3 * K + 6 * r + 6)


def smallest_admissible_m(start: int = 2, odd: bool = False) -> int:
    """Smallest ``m >= start`` (odd if asked) with ``sum_{k >= m} e^{-sqrt k} < 1``."""
    m = start
    while exp_sqrt_tail(m) >= 1.0 or (odd and m % 2 == 0):
        m += 1
    return m


@dataclass
class Construction:
    name: str
    measure: object
    expected_lambda: float
    provenance: str
    w1_bound: Optional[float] = None
    w1_provenance: Optional[str] = None
    report: Optional[TruncationReport] = None
    extras: dict = field(default_factory=dict)

    def expectations(self) -> dict:
        out = {"expected_lambda": self.expected_lambda, "provenance": self.provenance,
               "w1_bound": self.w1_bound}
        if self.w1_provenance:
            out["w1_provenance"] = self.w1_provenance
        if self.report is not None:
            out["truncation"] = self.report.to_json()
        return out


# -- thm3 family: weak* but not Wasserstein convergence ----------------------------

@dataclass
class Thm3Params:
    r: float = 0.4
    s: float = 0.6
    n: Optional[int] = None
    tail_tol: float = 1e-10
    #: which of the two order-one atoms gives up the mass l^{-n}
    perturbed_atom: int = 1

    def __post_init__(self):
        if not 0.0 < self.r < 0.5 or not 0.5 < self.s < 1.0:
            raise ValueError("need 0 < r < 1/2 < s < 1")
        if self.perturbed_atom not in (1, 2):
            raise ValueError("perturbed_atom must be 1 or 2")

    @property
    def l(self) -> float:
        return self.s / self.r

    @property
    def p1(self) -> float:
        return 0.5 * (1.0 - 2.0 * self.r ** 2 / (1.0 - self.r))

    @property
    def n0(self) -> int:
        n = 2
        while self.p1 <= self.l ** (-n):
            n += 1
        return n

    def log_sigma(self, k: int) -> float:
        """``log sigma_k = l^k``."""
        return self.l ** k


def thm3_atom(params: Thm3Params, j: int) -> Mat2:
    """``diag(sigma_k, 1/sigma_k)`` for ``j = 2k-1`` and its inverse for ``j = 2k``."""
    k = (j + 1) // 2
    ls = params.log_sigma(k)
    return Mat2.from_log_diag(ls, -ls) if j % 2 else Mat2.from_log_diag(-ls, ls)


def _thm3_weight(params: Thm3Params, j: int) -> float:
    k = (j + 1) // 2
    return params.p1 if k == 1 else params.r ** k


def thm3_q(params: Thm3Params = Thm3Params(), min_index: int = 0) -> Construction:
    """The limit measure: ``lambda_+ = 0`` since paired atoms carry equal mass.

    The series is cut after a complete pair once ``2 r^{K+1} / (1 - r)`` is
    below ``tail_tol``; the cut mass goes half to each of the order-one atoms
    so every pair keeps equal weights.  The limit has no first moment, so the
    W1 error of the truncation is infinite.
    """
    r = params.r
    mu, rep = truncate_series(
        lambda j: _thm3_weight(params, j), lambda j: thm3_atom(params, j),
        params.tail_tol, (1, 2),
        tail_bound=lambda J: 2.0 * r ** (J // 2 + 1) / (1.0 - r),
        group=2, min_index=min_index)
    rep.notes.append("limit measure has infinite first moment; W1 bound is infinite")
    return Construction("thm3_q", mu, 0.0, "paper", report=rep,
                        extras={"l": params.l, "p1": params.p1, "n0": params.n0})


def thm3_qn(params: Thm3Params) -> Construction:
    """Perturbed measure: ``l^{-n}`` moved from an order-one atom onto atom ``2n``.

    With the default ``perturbed_atom=1`` the exponent is ``1 + l^{1-n}``.
    Taking the mass from atom 2 instead gives ``1 - l^{1-n}``.  All other
    weights are bit-identical to :func:`thm3_q`.
    """
    n = params.n
    if n is None or n < params.n0:
        raise ValueError(f"need n >= n0 = {params.n0}")
    base = thm3_q(params, min_index=2 * n)
    q = base.measure
    shift = params.l ** (-n)
    w = list(q.weights)
    w[q.index_of_label(params.perturbed_atom)] -= shift
    w[q.index_of_label(2 * n)] += shift
    mu = make_measure(q.atoms, w, labels=q.labels)
    if params.perturbed_atom == 1:
        lam, prov = 1.0 + params.l ** (1 - n), "paper"
    else:
        lam, prov = 1.0 - params.l ** (1 - n), "derived"
    return Construction(f"thm3_qn[n={n}]", mu, lam, prov, report=base.report,
                        extras={"n": n, "perturbed_atom": params.perturbed_atom})


def thm3_sequence(params: Thm3Params = Thm3Params(), count: int = 6):
    """``q_n`` for ``n = n0 .. n0+count-1`` and the matching truncation of ``q``."""
    ns = list(range(params.n0, params.n0 + count))
    qns = [thm3_qn(Thm3Params(params.r, params.s, n, params.tail_tol, params.perturbed_atom))
           for n in ns]
    q = thm3_q(params, min_index=2 * ns[-1])
    return q, qns


def thm3_reference_radius(params: Thm3Params) -> float:
    """``R = d(alpha(1), id) = sigma_1 - 1``, the radius for the excess-tail check."""
    return math.expm1(params.l)


def thm3_log_excess_tail(params: Thm3Params, n: int) -> float:
    """``log(l^{-n} (e^{l^n} - 1))``, the mass-weighted excess moved out to atom 2n."""
    ln = params.l ** n
    return -n * math.log(params.l) + ln + math.log(-math.expm1(-ln))


# -- thm5 family: Wasserstein convergence, exponent drops ---------------------------

@dataclass
class Thm5Params:
    K: int = 400
    n: Optional[int] = None

    @property
    def m(self) -> int:
        return smallest_admissible_m(2)

    @property
    def p1(self) -> float:
        return 1.0 - exp_sqrt_tail(self.m)

    def __post_init__(self):
        if self.K < self.m:
            raise ValueError(f"K must be >= m = {self.m}")
        if self.n is not None and not self.m <= self.n <= self.K:
            raise ValueError(f"need m <= n <= K, got n={self.n}")


def thm5_alpha(k: int) -> Mat2:
    return Mat2.diag(float(k), 1.0 / k)


def _thm5_weight(params: Thm5Params, k: int) -> float:
    if k == 1:
        return params.p1
    return math.exp(-math.sqrt(k)) if k >= params.m else 0.0


def _thm5_truncated(params: Thm5Params, atom_fn):
    K = params.K
    # tail_tol=inf: the cut is fixed at K, the tail mass goes to the identity
    return truncate_series(
        lambda k: _thm5_weight(params, k), atom_fn, math.inf, 1,
        tail_bound=exp_sqrt_tail_bound, min_index=K,
        tail_cost_bound=first_moment_tail_bound)


def thm5_expected_lambda(params: Thm5Params) -> float:
    """Truncated ``sum_{m <= k <= K} e^{-sqrt k} log k`` (identity atom adds 0)."""
    return math.fsum(math.exp(-math.sqrt(k)) * math.log(k) for k in range(params.m, params.K + 1))


def thm5_q(params: Thm5Params = Thm5Params()) -> Construction:
    mu, rep = _thm5_truncated(params, lambda k: IDENTITY if k == 1 else thm5_alpha(k))
    moment = math.fsum(math.exp(-math.sqrt(k)) * (k - 1) for k in range(params.m, params.K + 1))
    return Construction("thm5_q", mu, thm5_expected_lambda(params), "derived", report=rep,
                        extras={"m": params.m, "p1": params.p1, "moment1": moment})


def thm5_w1_bound(n: int) -> float:
    """``p_n d(alpha(n), B)``, the cost of moving the swapped atom back."""
    return math.exp(-math.sqrt(n)) * matrix_metric(thm5_alpha(n), SWAP)


def thm5_qn(params: Thm5Params) -> Construction:
    """``q`` with atom ``alpha(n)`` replaced by the swap ``B``; all weights unchanged."""
    n = params.n
    if n is None:
        raise ValueError("Thm5Params.n is required")

    def atom(k):
        if k == 1:
            return IDENTITY
        return SWAP if k == n else thm5_alpha(k)

    mu, rep = _thm5_truncated(params, atom)
    return Construction(f"thm5_qn[n={n}]", mu, 0.0, "paper", thm5_w1_bound(n), "paper",
                        rep, extras={"n": n})


# -- block examples -------------------------------------------------------------

class BlockMeasure:
    """Law of the product of ``block_len`` i.i.d. draws from ``base``.

    This is the image of the tuple measure ``p_w = p_{w_1} ... p_{w_L}``
    under ``w -> alpha(w_L) ... alpha(w_1)``; tuples are drawn lazily, never
    enumerated.  ``perturbed`` optionally replaces the factors of one tuple
    of base labels with other matrices (the same weight is kept).
    """

    def __init__(self, base: DiscreteMeasure, block_len: int, perturbed=None):
        if base.labels is None:
            raise ValueError("base measure must carry labels")
        self.base = base
        self.block_len = int(block_len)
        self.perturbed = perturbed
        if perturbed is not None:
            labels, factors = perturbed
            if len(labels) != block_len or len(factors) != block_len:
                raise ValueError("perturbed tuple must have block_len entries")
            self._tuple_idx = np.array([base.index_of_label(x) for x in labels])
            self._product = block_product(factors)

    def tuple_weight(self, labels) -> float:
        return math.prod(self.base.weight_of_label(x) for x in labels)

    def sample_arrays(self, rng: np.random.Generator, size: int):
        L = self.block_len
        idx = self.base.sample_indices(rng, size * L).reshape(size, L)
        E, S, LD = self.base._arrays
        P = E[idx[:, 0]]
        scale = S[idx].sum(axis=1)
        for j in range(1, L):
            P = E[idx[:, j]] @ P
        big = np.abs(P).reshape(size, 4).max(axis=1)
        P = P / big[:, None, None]
        scale = scale + np.log(big)
        ld = LD[idx].sum(axis=1)
        if self.perturbed is not None:
            hit = np.all(idx == self._tuple_idx, axis=1)
            if hit.any():
                m = self._product
                P[hit] = m.entries / np.abs(m.entries).max()
                scale[hit] = m.log_scale + math.log(np.abs(m.entries).max())
                ld[hit] = m.log_abs_det()
        return P, scale, ld

    def expected_log_norm(self) -> float:
        # subadditivity: E log||A^L|| <= L E log||alpha||
        return self.block_len * self.base.expected_log_norm()

    def to_json(self) -> dict:
        out = {"block_len": self.block_len, "base": self.base.to_json()}
        if self.perturbed is not None:
            labels, factors = self.perturbed
            out["perturbed"] = {"labels": list(labels), "factors": [f.to_json() for f in factors]}
        return out


def block_product(factors) -> Mat2:
    """Cocycle-order product ``f_L ... f_1`` (the first factor acts first)."""
    out = IDENTITY
    for f in factors:
        out = f @ out
    return out


@dataclass
class BlockParams:
    block_len: int = 5
    n: int = 2
    gamma: float = 0.5
    tail_tol: float = 1e-8

    def __post_init__(self):
        if self.block_len not in (2, 5):
            raise ValueError("block_len must be 5 or 2")
        if self.n < 2:
            raise ValueError("need n >= 2")
        if self.block_len == 2 and not 0.0 < self.gamma < 1.0:
            raise ValueError("need 0 < gamma < 1")

    @property
    def m(self) -> int:
        return smallest_admissible_m(4, odd=True)

    @property
    def p3(self) -> float:
        return 1.0 - exp_sqrt_tail(self.m)

    @property
    def eps(self) -> float:
        n = self.n
        return 1.0 / (n * (n + 1)) if self.block_len == 5 else n ** (self.gamma - 2.0)

    @property
    def delta(self) -> float:
        n = self.n
        return math.atan(self.eps) if self.block_len == 5 else n ** (-(1.0 + self.gamma))


def block_alpha(block_len: int, j: int) -> Mat2:
    """``diag(k, k^-e), diag(k^-e, k)`` for ``j = 2k-1, 2k`` (``e = 1`` or ``2``)."""
    k = (j + 1) // 2
    e = 1 if block_len == 5 else 2
    small = float(k) ** (-e)
    return Mat2.diag(float(k), small) if j % 2 else Mat2.diag(small, float(k))


def _block_pair_weight(m: int, j: int) -> float:
    """Atom weight: both members of the pair ``(2k-1, 2k)`` get the pair's mean mass."""
    if j == 3:
        return 1.0 - exp_sqrt_tail(m)
    lo = j if j % 2 else j - 1
    if lo < m:
        return 0.0
    return 0.5 * (math.exp(-math.sqrt(lo)) + math.exp(-math.sqrt(lo + 1)))


def block_base(params: BlockParams, min_index: int = 0):
    """Truncated base measure ``q~`` on single matrices.

    The base tail is cut at ``tail_tol / block_len`` so that the tuple
    measure loses at most ``tail_tol``; the cut mass is split evenly over
    the last kept pair, which keeps every pair balanced.
    """
    m, L = params.m, params.block_len
    tol = params.tail_tol / L
    J = 2 * math.ceil(m / 2)
    while exp_sqrt_tail_bound(J) >= tol or J < min_index:
        J += 2
    mu, rep = truncate_series(
        lambda j: _block_pair_weight(m, j), lambda j: block_alpha(L, j), math.inf,
        (J - 1, J), tail_bound=exp_sqrt_tail_bound, start=3, group=2, min_index=J,
        tail_cost_bound=lambda K: first_moment_tail_bound(K) + exp_sqrt_tail_bound(K) * (J / 2))
    return mu, rep


def block5_factors(n: int):
    """``(alpha(w_n), beta(w_n))`` for ``w_n = (2n, 2n+2, 2n+1, 2n-1, 2n-1)``."""
    eps = 1.0 / (n * (n + 1))
    delta = math.atan(eps)
    R_eps, R_delta = lower_shear(eps), rotation(delta)
    w = (2 * n, 2 * n + 2, 2 * n + 1, 2 * n - 1, 2 * n - 1)
    a = [block_alpha(5, j) for j in w]
    b = [a[0] @ R_eps, a[1], a[2] @ R_delta, a[3], a[4] @ R_eps]
    return w, a, b


def block5_display(n: int) -> Mat2:
    """``(0, -eps^-2 sin d; eps^2 sin d + eps cos d, 0)`` the antidiagonal target of the perturbed 5-block."""
    eps = 1.0 / (n * (n + 1))
    d = math.atan(eps)
    return Mat2(0.0, -math.sin(d) / eps ** 2, eps ** 2 * math.sin(d) + eps * math.cos(d), 0.0)


def block2_factors(n: int, gamma: float):
    """``(alpha(w_n), beta(w_n))`` for ``w_n = (2n, 2n-1)``.

    ``beta(2n) = U_delta alpha(2n) L_eps`` and ``beta(2n-1) = L_eps alpha(2n-1)``
    with ``delta = n^-(1+gamma)`` and ``eps = n^(gamma-2)``, so ``eps delta = n^-3``.
    """
    delta = n ** (-(1.0 + gamma))
    eps = n ** (gamma - 2.0)
    w = (2 * n, 2 * n - 1)
    a = [block_alpha(2, j) for j in w]
    b = [upper_shear(-delta) @ a[0] @ lower_shear(eps), lower_shear(eps) @ a[1]]
    return w, a, b


def block2_display(n: int, gamma: float) -> Mat2:
    """``(0, -n^2 delta; eps / n, 0)``."""
    delta = n ** (-(1.0 + gamma))
    eps = n ** (gamma - 2.0)
    return Mat2(0.0, -n * n * delta, eps / n, 0.0)


def _d_inf(xs, ys) -> float:
    return max(matrix_metric(x, y) for x, y in zip(xs, ys))


@dataclass
class BlockConstruction:
    name: str
    base: DiscreteMeasure
    q: BlockMeasure
    qn: BlockMeasure
    expected_lambda_q: float
    expected_lambda_base: float
    provenance: str
    w1: float
    w1_bound: float
    perturbed_product: Mat2
    unperturbed_product: Mat2
    display: Mat2
    report: TruncationReport
    extras: dict = field(default_factory=dict)

    def expectations(self) -> dict:
        return {"expected_lambda": self.expected_lambda_q, "provenance": self.provenance,
                "expected_lambda_base": self.expected_lambda_base,
                "w1": self.w1, "w1_bound": self.w1_bound, "w1_provenance": "paper",
                "truncation": self.report.to_json()}


def base_diagonal_exponent(base: DiscreteMeasure) -> float:
    """``max(E log a_11, E log a_22)`` for a diagonal base measure."""
    lx = math.fsum(w * math.log(abs(a.a)) for a, w in zip(base.atoms, base.weights))
    ly = math.fsum(w * math.log(abs(a.d)) for a, w in zip(base.atoms, base.weights))
    return max(lx, ly)


def _block_measures(params: BlockParams, w, a, b, display, bound, name) -> BlockConstruction:
    # the perturbed tuple must survive truncation
    base, rep = block_base(params, min_index=max(w))
    missing = [j for j in w if j not in base.labels]
    if missing:
        raise ValueError(f"tuple w_n has zero-weight entries {missing}; need 2n-1 >= m")
    L = params.block_len
    q = BlockMeasure(base, L)
    qn = BlockMeasure(base, L, perturbed=(w, b))
    p_w = q.tuple_weight(w)
    lam_base = base_diagonal_exponent(base)
    return BlockConstruction(
        name, base, q, qn, L * params.p3 * math.log(2.0), lam_base, "paper",
        p_w * _d_inf(a, b), bound, block_product(b), block_product(a), display, rep,
        extras={"m": params.m, "p3": params.p3, "w_n": list(w), "p_w": p_w,
                "eps": params.eps, "delta": params.delta})


def block5_measures(params: BlockParams) -> BlockConstruction:
    w, a, b = block5_factors(params.n)
    return _block_measures(params, w, a, b, block5_display(params.n), 1.0 / params.n,
                           f"block5[n={params.n}]")


def block2_measures(params: BlockParams) -> BlockConstruction:
    w, a, b = block2_factors(params.n, params.gamma)
    ell = min(params.gamma, 1.0 - params.gamma)
    return _block_measures(params, w, a, b, block2_display(params.n, params.gamma),
                           2.0 * params.n ** (-ell), f"block2[n={params.n}]")
