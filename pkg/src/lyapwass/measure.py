"""Finitely supported probability measures on 2x2 matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .mat2 import (IDENTITY, MaterializationError, Mat2, log_operator_norm,
                   matrix_metric, sigma_max_arrays)

MERGE_TOL = 1e-12
MASS_TOL = 1e-12


def atom_arrays(atoms: Sequence[Mat2]):
    """Stack atoms into ``(entries (n, 4), log_scales (n,))``."""
    e = np.array([[m.a, m.b, m.c, m.d] for m in atoms], dtype=float).reshape(-1, 4)
    s = np.array([m.log_scale for m in atoms], dtype=float)
    return e, s


def log_distance_matrix(xs: Sequence[Mat2], ys: Sequence[Mat2], chunk: int = 512):
    """``log ||x_i - y_j||`` for all pairs, never materializing large atoms."""
    ex, sx = atom_arrays(xs)
    ey, sy = atom_arrays(ys)
    out = np.empty((len(xs), len(ys)))
    for lo in range(0, len(xs), chunk):
        hi = min(lo + chunk, len(xs))
        s = np.maximum(sx[lo:hi, None], sy[None, :])
        fx = np.exp(sx[lo:hi, None] - s)[..., None]
        fy = np.exp(sy[None, :] - s)[..., None]
        diff = fx * ex[lo:hi, None, :] - fy * ey[None, :, :]
        n = sigma_max_arrays(diff[..., 0], diff[..., 1], diff[..., 2], diff[..., 3])
        with np.errstate(divide="ignore"):
            out[lo:hi] = s + np.log(n)
    return out


def distance_matrix(xs: Sequence[Mat2], ys: Sequence[Mat2]) -> np.ndarray:
    """Plain operator-norm distances; raises when any entry would overflow."""
    with np.errstate(over="ignore"):
        d = np.exp(log_distance_matrix(xs, ys))
    if not np.all(np.isfinite(d)):
        raise MaterializationError("pairwise distance overflows; truncate earlier")
    return d


def _sort_key(m: Mat2):
    return (m.log_scale, m.a, m.b, m.c, m.d)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure ``sum_i weights[i] * delta(atoms[i])``.

    Build instances through :func:`make_measure`, which enforces the
    canonical form (positive weights summing to one, no near-duplicate
    atoms, deterministic ordering).  ``labels`` optionally tags each atom
    with the series index it came from.
    """

    atoms: tuple
    weights: tuple
    labels: Optional[tuple] = None

    def __len__(self):
        return len(self.atoms)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return self.atoms == other.atoms and self.weights == other.weights

    def __hash__(self):
        return hash((self.atoms, self.weights))

    @cached_property
    def w(self) -> np.ndarray:
        arr = np.array(self.weights, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def _cdf(self) -> np.ndarray:
        c = np.cumsum(self.w)
        c[-1] = 1.0
        return c

    @cached_property
    def _arrays(self):
        e, s = atom_arrays(self.atoms)
        ld = np.array([m.log_abs_det() for m in self.atoms])
        return e.reshape(-1, 2, 2), s, ld

    def atom_for_label(self, label) -> Mat2:
        return self.atoms[self.index_of_label(label)]

    def index_of_label(self, label) -> int:
        if self.labels is None:
            raise KeyError("measure carries no labels")
        return self.labels.index(label)

    def weight_of_label(self, label) -> float:
        return self.weights[self.index_of_label(label)]

    # -- sampling -----------------------------------------------------------
    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.searchsorted(self._cdf, rng.random(size), side="right").clip(
            0, len(self.atoms) - 1)

    def sample_arrays(self, rng: np.random.Generator, size: int):
        """Draw ``size`` i.i.d. atoms as ``(entries, log_scales, log_abs_dets)``."""
        idx = self.sample_indices(rng, size)
        e, s, ld = self._arrays
        return e[idx], s[idx], ld[idx]

    def expected_log_norm(self) -> float:
        return math.fsum(w * log_operator_norm(a) for a, w in zip(self.atoms, self.weights))

    def expected_log_det(self) -> float:
        return math.fsum(w * a.log_abs_det() for a, w in zip(self.atoms, self.weights))

    def to_json(self) -> dict:
        out = {"atoms": [a.to_json() for a in self.atoms], "weights": list(self.weights)}
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        return make_measure([Mat2.from_json(a) for a in obj["atoms"]], obj["weights"],
                            labels=obj.get("labels"))


def make_measure(atoms: Sequence[Mat2], weights: Sequence[float], labels=None) -> DiscreteMeasure:
    """Canonical finitely supported probability measure.

    Zero weights are dropped, atoms closer than ``MERGE_TOL`` in the matrix
    metric are merged (the first in canonical order is kept), and weights
    are renormalized to sum to one.  The result does not depend on the
    order of the input.
    """
    atoms = list(atoms)
    weights = [float(w) for w in weights]
    if not atoms or len(atoms) != len(weights):
        raise ValueError("need a non-empty list of atoms with one weight each")
    if labels is not None:
        labels = list(labels)
        if len(labels) != len(atoms):
            raise ValueError("labels must match atoms")
    if any(not math.isfinite(w) or w < 0 for w in weights):
        raise ValueError("weights must be finite and non-negative")
    keep = [i for i, w in enumerate(weights) if w > 0]
    if not keep:
        raise ValueError("all weights are zero")
    order = sorted(keep, key=lambda i: _sort_key(atoms[i]) + (weights[i],))
    sorted_atoms = [atoms[i] for i in order]
    ld = log_distance_matrix(sorted_atoms, sorted_atoms)
    close = ld < math.log(MERGE_TOL)
    group = [-1] * len(order)
    reps = []
    for pos in range(len(order)):
        if group[pos] >= 0:
            continue
        group[pos] = len(reps)
        reps.append(pos)
        for other in np.nonzero(close[pos])[0]:
            if group[other] < 0:
                group[other] = group[pos]
    sums = [[] for _ in reps]
    for pos, g in enumerate(group):
        sums[g].append(weights[order[pos]])
    raw = [math.fsum(s) for s in sums]
    total = math.fsum(raw)
    # leave already-normalized weights bit-identical so that measures built
    # from shared weight lists cancel exactly atom by atom
    out_w = tuple(raw) if abs(total - 1.0) <= 1e-15 else tuple(x / total for x in raw)
    out_atoms = tuple(sorted_atoms[p] for p in reps)
    out_labels = None
    if labels is not None:
        out_labels = tuple(labels[order[p]] for p in reps)
    return DiscreteMeasure(out_atoms, out_w, out_labels)


def dirac(m: Mat2, label=None) -> DiscreteMeasure:
    return make_measure([m], [1.0], None if label is None else [label])


def moment1(mu: DiscreteMeasure, x0: Mat2 = IDENTITY) -> float:
    """``sum_i w_i ||atom_i - x0||``; raises if an atom cannot be materialized."""
    return math.fsum(w * matrix_metric(a, x0) for a, w in zip(mu.atoms, mu.weights))


def sample(mu: DiscreteMeasure, rng: np.random.Generator) -> Mat2:
    return mu.atoms[int(mu.sample_indices(rng, 1)[0])]


def support_bound(mu: DiscreteMeasure) -> float:
    """``max_i ||atom_i - id||``, or ``inf`` if some atom cannot be materialized."""
    try:
        return float(distance_matrix(mu.atoms, [IDENTITY]).max())
    except MaterializationError:
        return math.inf


def log_support_bound(mu: DiscreteMeasure) -> float:
    return float(log_distance_matrix(mu.atoms, [IDENTITY]).max())


@dataclass
class TruncationReport:
    kept_atoms: int
    tail_mass: float
    absorbed_into: tuple
    w1_error_bound: float
    last_index: int = 0
    notes: list = field(default_factory=list)

    @property
    def bound_is_finite(self) -> bool:
        return math.isfinite(self.w1_error_bound)

    def to_json(self) -> dict:
        return {
            "kept_atoms": self.kept_atoms,
            "tail_mass": self.tail_mass,
            "absorbed_into": list(self.absorbed_into),
            "w1_error_bound": self.w1_error_bound if self.bound_is_finite else "inf",
            "last_index": self.last_index,
        }


EXACT = TruncationReport(0, 0.0, (), 0.0)


def truncate_series(
    weight_fn: Callable[[int], float],
    atom_fn: Callable[[int], Mat2],
    tail_tol: float,
    absorb_index: Union[int, Sequence[int]],
    tail_bound: Optional[Callable[[int], float]] = None,
    *,
    start: int = 1,
    group: int = 1,
    min_index: int = 0,
    tail_cost_bound: Optional[Callable[[int], float]] = None,
    max_terms: int = 1_000_000,
):
    """Finite stand-in for the probability series ``sum_k w_k delta(alpha(k))``.

    Indices ``k = start, start+1, ...`` are kept until ``tail_bound(K)``, an
    upper bound on ``sum_{k > K} w_k``, drops below ``tail_tol`` (and
    ``K >= min_index``).  Truncation only happens after a complete group of
    ``group`` consecutive indices.  The residual mass ``1 - sum(kept)`` is
    added to ``absorb_index``; a tuple of indices shares it equally.

    ``tail_cost_bound(K)`` bounds ``sum_{k > K} w_k d(alpha(k), absorb)``;
    without it the W1 error bound is reported as infinite.
    """
    if tail_bound is None:
        raise ValueError("truncate_series needs a tail bound for the weight series")
    absorb = (absorb_index,) if isinstance(absorb_index, (int, np.integer)) else tuple(absorb_index)
    ks, ws = [], []
    k = start
    while True:
        w = float(weight_fn(k))
        if w < 0:
            raise ValueError(f"negative weight at index {k}")
        if w > 0:
            ks.append(k)
            ws.append(w)
        done_group = (k - start + 1) % group == 0
        if done_group and k >= min_index and tail_bound(k) < tail_tol:
            break
        k += 1
        if k - start > max_terms:
            raise RuntimeError("tail bound never dropped below tail_tol")
    last = k
    missing = [a for a in absorb if a not in ks]
    if missing:
        raise ValueError(f"absorb index {missing} not among kept atoms")
    tail = 1.0 - math.fsum(ws)
    if tail < -MASS_TOL:
        raise ValueError("series weights exceed total mass one")
    tail = max(tail, 0.0)
    share = tail / len(absorb)
    total = list(ws)
    for a in absorb:
        total[ks.index(a)] += share
    bound = tail_cost_bound(last) if tail_cost_bound is not None else (0.0 if tail == 0 else math.inf)
    mu = make_measure([atom_fn(i) for i in ks], total, labels=ks)
    report = TruncationReport(len(ks), tail, absorb, bound, last)
    return mu, report
