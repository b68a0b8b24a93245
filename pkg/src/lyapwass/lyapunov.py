"""Lyapunov exponents of i.i.d. products of 2x2 matrices.

Three routes are provided: Monte Carlo products with renormalization, the
exact law of large numbers for commuting diagonal families, and the
Furstenberg formula evaluated on (discretized or exact) stationary measures
of the projective line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .mat2 import (H, V, Mat2, ProjPoint, SingularMatrixError, log_operator_norm,
                   phi, proj_action, proj_metric)
from .measure import DiscreteMeasure

DEFAULT_STEPS = 10_000
DEFAULT_TRIALS = 32
FIXED_POINT_TOL = 1e-12
DIAG_TOL = 1e-12


@dataclass
class ExponentEstimate:
    lambda_plus: float
    lambda_minus: float
    stderr: float
    steps_per_trial: int
    trials: int
    method: str
    seed: Optional[int] = None
    #: E log||alpha||, an upper bound for lambda_plus
    upper_bound: Optional[float] = None
    #: True when lambda_plus is only certified from below
    lower_bound_only: bool = False
    converged: bool = True
    #: per-candidate values for the Furstenberg route
    details: dict = field(default_factory=dict, compare=False)
    trial_values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def csv_row(self):
        return [self.method, repr(self.lambda_plus), repr(self.lambda_minus),
                repr(self.stderr), self.steps_per_trial, self.trials,
                "" if self.seed is None else self.seed]

    def to_json(self) -> dict:
        return {"method": self.method, "lambda_plus": self.lambda_plus,
                "lambda_minus": self.lambda_minus, "stderr": self.stderr,
                "steps": self.steps_per_trial, "trials": self.trials, "seed": self.seed,
                "upper_bound": self.upper_bound, "lower_bound_only": self.lower_bound_only,
                "converged": self.converged}


CSV_HEADER = ["method", "lambda_plus", "lambda_minus", "stderr", "steps", "trials", "seed"]


def _base_atoms(mu):
    return getattr(mu, "base", mu).atoms


def mc_lyapunov(mu, steps: int = DEFAULT_STEPS, trials: int = DEFAULT_TRIALS,
                seed: int = 0, burn_in: Optional[int] = None) -> ExponentEstimate:
    """Monte Carlo estimate of the exponents from ``trials`` independent products.

    Each trial draws its matrices from its own stream spawned from ``seed``,
    starts from a random unit vector and renormalizes after every step,
    accumulating ``log`` growth (log scales included) so no product ever
    overflows.  In 2D the second Gram-Schmidt diagonal follows from the
    determinant, which gives ``lambda_minus``.  Trials are advanced together
    as one vectorized batch and merged by trial index.

    The first ``burn_in`` steps (default ``steps // 10``) only align the
    tracked vector and are not counted; otherwise the start-up term
    ``log|<v0, top direction>| / steps`` biases even deterministic products.

    ``mu`` is anything with ``sample_arrays(rng, size)`` returning stacked
    normalized entries, log scales and log determinants.
    """
    if steps < 100 or trials < 2:
        raise ValueError("need steps >= 100 and trials >= 2")
    if any(a.log_abs_det() == -math.inf for a in _base_atoms(mu)):
        raise SingularMatrixError("measure has a non-invertible atom")
    burn = steps // 10 if burn_in is None else int(burn_in)
    gens = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]
    theta = np.array([g.uniform(0.0, math.pi) for g in gens])
    warm = [mu.sample_arrays(g, burn)[0] for g in gens] if burn else None
    draws = [mu.sample_arrays(g, steps) for g in gens]
    E = np.stack([d[0] for d in draws], axis=1)          # (steps, trials, 2, 2)
    log_scale = np.stack([d[1] for d in draws], axis=1).sum(axis=0)
    log_det = np.stack([d[2] for d in draws], axis=1).sum(axis=0)
    e00, e01, e10, e11 = E[..., 0, 0], E[..., 0, 1], E[..., 1, 0], E[..., 1, 1]
    x, y = np.cos(theta), np.sin(theta)
    tiny = np.finfo(float).tiny
    if burn:
        W = np.stack(warm, axis=1)
        for t in range(burn):
            u = W[t, :, 0, 0] * x + W[t, :, 0, 1] * y
            w = W[t, :, 1, 0] * x + W[t, :, 1, 1] * y
            r = np.maximum(np.hypot(u, w), tiny)
            x, y = u / r, w / r
    acc = np.zeros(trials)
    for t in range(steps):
        u = e00[t] * x + e01[t] * y
        w = e10[t] * x + e11[t] * y
        r = np.maximum(np.hypot(u, w), tiny)
        acc += np.log(r)
        x, y = u / r, w / r
    top = (acc + log_scale) / steps
    bottom = log_det / steps - top
    lp = float(top.mean())
    lm = float(bottom.mean())
    se = float(top.std(ddof=1) / math.sqrt(trials))
    ub = mu.expected_log_norm() if hasattr(mu, "expected_log_norm") else None
    return ExponentEstimate(lp, lm, se, steps, trials, "mc", seed, ub, trial_values=top)


def _check_diagonal(m: Mat2):
    scale = max(abs(m.a), abs(m.b), abs(m.c), abs(m.d))
    if abs(m.b) > DIAG_TOL * scale or abs(m.c) > DIAG_TOL * scale:
        raise ValueError("exact_diagonal_lyapunov needs diagonal atoms; use mc or furstenberg")
    return Mat2(m.a, 0.0, 0.0, m.d, m.log_scale, m.log_abs_det_hint)


def exact_diagonal_lyapunov(mu: DiscreteMeasure) -> ExponentEstimate:
    """Exponents of a commuting family of diagonal matrices.

    The product is ``diag(prod x_i, prod y_i)``, so by the law of large
    numbers the exponents are ``max`` and ``min`` of ``E log|x|`` and
    ``E log|y|``.  For ``diag(a, 1/a)`` atoms this is ``|sum p_k log a_k|``.
    """
    lx, ly = [], []
    for a, w in zip(mu.atoms, mu.weights):
        x, y = _check_diagonal(a).log_diag()
        lx.append(w * x)
        ly.append(w * y)
    ex, ey = math.fsum(lx), math.fsum(ly)
    return ExponentEstimate(max(ex, ey), min(ex, ey), 0.0, 0, 0, "exact_diagonal",
                            upper_bound=mu.expected_log_norm())


# -- projective line ----------------------------------------------------------

@dataclass
class ProjectiveMeasure:
    """Probability on P^1: grid masses on ``[0, pi)`` plus exact point masses.

    Bin ``j`` is centred at ``(j + 1/2) * pi / bin_count``.
    """

    bin_mass: np.ndarray
    atoms: tuple = ()
    converged: bool = True
    iterations: int = 0
    l1_change: float = 0.0
    fixed_points: tuple = ()
    invariant_pairs: tuple = ()

    @property
    def bin_count(self) -> int:
        return len(self.bin_mass)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.bin_count) + 0.5) * math.pi / self.bin_count

    def total_mass(self) -> float:
        return float(self.bin_mass.sum()) + math.fsum(m for _, m in self.atoms)

    @classmethod
    def point_masses(cls, points: Sequence[ProjPoint], masses: Sequence[float]):
        return cls(np.zeros(0), tuple(zip(points, masses)))

    def csv_rows(self):
        rows = [["theta", "mass", "kind"]]
        rows += [[repr(float(t)), repr(float(m)), "bin"] for t, m in zip(self.centers, self.bin_mass)]
        rows += [[repr(p.theta), repr(m), "atom"] for p, m in self.atoms]
        return rows


def _image_angles(m: Mat2, theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    u = m.a * c + m.b * s
    w = m.c * c + m.d * s
    return np.mod(np.arctan2(w, u), math.pi)


def transfer_operator(mu: DiscreteMeasure, bins: int) -> sp.csr_matrix:
    """Column-stochastic matrix pushing bin masses through ``sum_k p_k (alpha_k)_*``.

    Each bin centre is mapped projectively and its mass split linearly
    between the two nearest target centres (with wraparound).
    """
    width = math.pi / bins
    centers = (np.arange(bins) + 0.5) * width
    rows, cols, vals = [], [], []
    src = np.arange(bins)
    for a, p in zip(mu.atoms, mu.weights):
        pos = _image_angles(a, centers) / width - 0.5
        lo = np.floor(pos)
        frac = pos - lo
        j0 = lo.astype(int) % bins
        rows += [j0, (j0 + 1) % bins]
        cols += [src, src]
        vals += [p * (1.0 - frac), p * frac]
    T = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(bins, bins))
    return T.tocsr()


def _candidate_directions(mu: DiscreteMeasure):
    pts = [H, V]
    for a in mu.atoms:
        if a.log_abs_det() == -math.inf:
            continue
        tr, det = a.a + a.d, a.a * a.d - a.b * a.c
        disc = tr * tr / 4.0 - det
        if disc < 0:
            continue
        for ev in (tr / 2.0 + math.sqrt(disc), tr / 2.0 - math.sqrt(disc)):
            # (b, ev - a) or (ev - d, c) spans the eigenline
            v1, v2 = (a.b, ev - a.a) if abs(a.b) + abs(ev - a.a) > abs(ev - a.d) + abs(a.c) \
                else (ev - a.d, a.c)
            if v1 != 0 or v2 != 0:
                pts.append(ProjPoint.from_vector((v1, v2)))
    out = []
    for p in pts:
        if all(proj_metric(p, q) > FIXED_POINT_TOL for q in out):
            out.append(p)
    return out


def _maps_into(mu, p: ProjPoint, targets) -> bool:
    for a in mu.atoms:
        img = proj_action(a, p)
        if min(proj_metric(img, q) for q in targets) > FIXED_POINT_TOL:
            return False
    return True


def common_fixed_points(mu: DiscreteMeasure):
    """Directions fixed by every atom (each gives a stationary point mass)."""
    return tuple(p for p in _candidate_directions(mu) if _maps_into(mu, p, [p]))


def invariant_pairs(mu: DiscreteMeasure):
    """Two-point families permuted by every atom, e.g. {H, V} under a swap."""
    cands = _candidate_directions(mu)
    fixed = common_fixed_points(mu)
    out = []
    for i, p in enumerate(cands):
        for q in cands[i + 1:]:
            if (_maps_into(mu, p, [p, q]) and _maps_into(mu, q, [p, q])
                    and not (p in fixed and q in fixed)):
                out.append((p, q))
    return tuple(out)


def stationary_measure(mu: DiscreteMeasure, bins: int = 1024, tol: float = 1e-10,
                       max_iters: int = 20_000) -> ProjectiveMeasure:
    """Fixed point of the discretized transfer operator, iterated from uniform.

    Exact common fixed directions and invariant two-point families are
    detected separately and attached as ``fixed_points`` / ``invariant_pairs``.
    A run that does not reach ``tol`` returns its last iterate with
    ``converged=False``.
    """
    if bins < 64 or bins & (bins - 1):
        raise ValueError("bins must be a power of two >= 64")
    T = transfer_operator(mu, bins)
    eta = np.full(bins, 1.0 / bins)
    change = math.inf
    it = 0
    while it < max_iters:
        nxt = T @ eta
        nxt /= nxt.sum()
        change = float(np.abs(nxt - eta).sum())
        eta = nxt
        it += 1
        if change < tol:
            break
    return ProjectiveMeasure(eta, (), change < tol, it, change,
                             common_fixed_points(mu), invariant_pairs(mu))


def _phi_grid(a: Mat2, theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    if a.is_diagonal():
        lx, ly = a.log_diag()
        with np.errstate(divide="ignore"):
            return 0.5 * np.logaddexp(2 * (lx + np.log(np.abs(c))), 2 * (ly + np.log(np.abs(s))))
    u = a.a * c + a.b * s
    w = a.c * c + a.d * s
    return a.log_scale + np.log(np.hypot(u, w))


def furstenberg_value(mu: DiscreteMeasure, eta: ProjectiveMeasure) -> float:
    """``int Phi d(mu x eta)`` with ``Phi(alpha, [v]) = log(||alpha v|| / ||v||)``."""
    theta = eta.centers
    terms = []
    for a, p in zip(mu.atoms, mu.weights):
        t = [m * phi(a, pt) for pt, m in eta.atoms]
        if eta.bin_count:
            t.append(float(eta.bin_mass @ _phi_grid(a, theta)))
        terms.append(p * math.fsum(t))
    return math.fsum(terms)


def stationarity_defect(eta: ProjectiveMeasure, mu: DiscreteMeasure) -> float:
    """L1 distance between ``eta`` and its image under ``mu``'s transfer operator."""
    defect = 0.0
    if eta.bin_count:
        T = transfer_operator(mu, eta.bin_count)
        defect += float(np.abs(T @ eta.bin_mass - eta.bin_mass).sum())
    if eta.atoms:
        img = {}
        pts = [p for p, _ in eta.atoms]
        for a, w in zip(mu.atoms, mu.weights):
            for p, m in eta.atoms:
                q = proj_action(a, p)
                key = next((i for i, r in enumerate(pts) if proj_metric(q, r) <= FIXED_POINT_TOL), None)
                if key is None:
                    pts.append(q)
                    key = len(pts) - 1
                img[key] = img.get(key, 0.0) + w * m
        own = {i: m for i, (_, m) in enumerate(eta.atoms)}
        defect += math.fsum(abs(img.get(i, 0.0) - own.get(i, 0.0)) for i in range(len(pts)))
    return defect


def furstenberg_candidates(mu: DiscreteMeasure, eta: ProjectiveMeasure):
    cands = [("grid", eta)]
    for p in eta.fixed_points:
        cands.append((f"point@{p.theta:.6g}", ProjectiveMeasure.point_masses([p], [1.0])))
    for p, q in eta.invariant_pairs:
        cands.append((f"pair@{p.theta:.6g},{q.theta:.6g}",
                      ProjectiveMeasure.point_masses([p, q], [0.5, 0.5])))
    return cands


def furstenberg_lyapunov(mu: DiscreteMeasure, bins: int = 4096, tol: float = 1e-10,
                         max_iters: int = 20_000) -> ExponentEstimate:
    """Largest Furstenberg value over the stationary candidates that were found.

    Candidates are the grid fixed point, point masses at common fixed
    directions and uniform measures on invariant pairs.  For all-diagonal
    families these contain the extreme stationary measures, so the maximum
    is the exponent; otherwise it is reported as a lower bound.

    The grid candidate is stationary only up to discretization: its mass
    sits at bin centres a bin width away from invariant directions, where
    strongly hyperbolic atoms make ``Phi`` large (for ``diag(e^L, e^-L)``
    about ``L + log(bin width)``).  So when exact candidates exist the grid
    value is reported in ``details`` but left out of the maximum.
    """
    eta = stationary_measure(mu, bins, tol, max_iters)
    details = {name: furstenberg_value(mu, c) for name, c in furstenberg_candidates(mu, eta)}
    exact = [v for k, v in details.items() if k != "grid"]
    best = max(exact) if exact else details["grid"]
    diagonal = all(a.is_diagonal() for a in mu.atoms)
    lm = mu.expected_log_det() - best
    return ExponentEstimate(best, lm, 0.0, 0, 0, "furstenberg",
                            upper_bound=mu.expected_log_norm(),
                            lower_bound_only=not diagonal, converged=eta.converged,
                            details=details)


def hv_swap_check(m: Mat2) -> bool:
    """True iff ``m`` is antidiagonal, i.e. exchanges the two coordinate axes."""
    if m.log_abs_det() == -math.inf:
        raise SingularMatrixError("hv_swap_check needs an invertible matrix")
    scale = math.exp(log_operator_norm(m) - m.log_scale)
    return abs(m.a) <= DIAG_TOL * scale and abs(m.d) <= DIAG_TOL * scale


def stationary_closure_probe(seq: Sequence[DiscreteMeasure], limit: DiscreteMeasure,
                             bins: int = 1024, tol: float = 1e-10, max_iters: int = 20_000,
                             return_all: bool = False):
    """Stationarity defect of the measures stationary for ``seq`` under ``limit``.

    Returns the defect of the last element (or all of them with
    ``return_all``); it should decay along a convergent sequence.
    """
    defects = []
    for p in seq:
        eta = stationary_measure(p, bins, tol, max_iters)
        if not eta.converged:
            raise RuntimeError("stationary measure iteration did not converge")
        defects.append(stationarity_defect(eta, limit))
    return defects if return_all else defects[-1]
