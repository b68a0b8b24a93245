import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lyapwass.constructions import Thm3Params, exp_sqrt_tail, exp_sqrt_tail_bound, thm3_q, thm5_q, Thm5Params
from lyapwass.mat2 import IDENTITY, Mat2, matrix_metric, rotation
from lyapwass.measure import (DiscreteMeasure, dirac, make_measure, moment1, sample,
                              support_bound, truncate_series)

A = Mat2(1.0, 2.0, 0.0, 1.0)
B = Mat2.diag(2.0, 0.5)


def test_single_atom_is_renormalized():
    mu = make_measure([IDENTITY], [0.5])
    assert mu.weights == (1.0,)


def test_duplicates_merge():
    mu = make_measure([A, A], [0.3, 0.7])
    assert mu.atoms == (A,) and mu.weights == (1.0,)
    near = Mat2(1.0 + 1e-14, 2.0, 0.0, 1.0)
    assert len(make_measure([A, near], [0.5, 0.5])) == 1


def test_weights_kept_exact():
    mu = make_measure([A, B], [0.25, 0.75])
    assert dict(zip(mu.atoms, mu.weights)) == {A: 0.25, B: 0.75}


def test_invalid_inputs():
    with pytest.raises(ValueError):
        make_measure([], [])
    with pytest.raises(ValueError):
        make_measure([A], [-0.1])
    with pytest.raises(ValueError):
        make_measure([A, B], [0.0, 0.0])


def test_zero_weights_dropped():
    mu = make_measure([A, B], [0.0, 1.0])
    assert mu.atoms == (B,)


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.floats(0.01, 1.0)),
                min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_canonical_form_is_order_independent_and_idempotent(items, rnd):
    atoms = [Mat2(float(a), 1.0, 0.0, float(b)) for a, b, _ in items]
    w = [x for _, _, x in items]
    mu = make_measure(atoms, w)
    perm = list(range(len(atoms)))
    rnd.shuffle(perm)
    nu = make_measure([atoms[i] for i in perm], [w[i] for i in perm])
    assert mu.atoms == nu.atoms
    assert mu.weights == pytest.approx(nu.weights, abs=1e-15)
    again = make_measure(mu.atoms, mu.weights)
    assert again.atoms == mu.atoms and again.weights == mu.weights
    assert math.fsum(mu.weights) == pytest.approx(1.0, abs=1e-12)
    assert all(x > 0 for x in mu.weights)


def test_sample_dirac_and_frequencies():
    rng = np.random.default_rng(1)
    assert all(sample(dirac(A), rng) == A for _ in range(20))
    fair = make_measure([A, B], [0.5, 0.5])
    idx = fair.sample_indices(np.random.default_rng(2), 100_000)
    freq = np.mean(idx == 0)
    assert abs(freq - 0.5) <= 4 * math.sqrt(0.25 / 1e5)


def test_sample_chi_square():
    mu = make_measure([A, B, IDENTITY], [0.2, 0.3, 0.5])
    idx = mu.sample_indices(np.random.default_rng(3), 100_000)
    counts = np.bincount(idx, minlength=3)
    res = stats.chisquare(counts, f_exp=np.array(mu.weights) * 1e5)
    assert res.pvalue > 1e-3


def test_sampling_is_deterministic_per_stream():
    mu = make_measure([A, B, IDENTITY], [0.2, 0.3, 0.5])
    a = mu.sample_arrays(np.random.default_rng(7), 50)
    b = mu.sample_arrays(np.random.default_rng(7), 50)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_moment1():
    assert moment1(dirac(IDENTITY), IDENTITY) == 0.0
    q = thm5_q(Thm5Params(K=400))
    want = math.fsum(math.exp(-math.sqrt(k)) * (k - 1) for k in range(4, 401))
    assert moment1(q.measure, IDENTITY) == pytest.approx(want, rel=1e-12)
    # Cauchy in K: the increments go to zero
    m200 = moment1(thm5_q(Thm5Params(K=200)).measure)
    m300 = moment1(thm5_q(Thm5Params(K=300)).measure)
    assert 0 < moment1(q.measure) - m300 < m300 - m200


def test_thm3_moment_grows_without_bound():
    small = thm3_q(Thm3Params(tail_tol=1e-3)).measure
    assert math.isfinite(support_bound(small))
    m_small = moment1(small)
    m_more = moment1(thm3_q(Thm3Params(tail_tol=1e-5)).measure)
    assert m_more > 10 * m_small
    with pytest.raises(OverflowError):
        moment1(thm3_q(Thm3Params(tail_tol=1e-10)).measure)


def test_moment1_triangle_under_change_of_base_point():
    rng = random.Random(5)
    for _ in range(100):
        atoms = [Mat2(*[rng.uniform(-2, 2) for _ in range(4)]) for _ in range(3)]
        mu = make_measure(atoms, [rng.random() + 0.01 for _ in atoms])
        x0 = Mat2(*[rng.uniform(-2, 2) for _ in range(4)])
        y0 = Mat2(*[rng.uniform(-2, 2) for _ in range(4)])
        assert moment1(mu, x0) <= moment1(mu, y0) + matrix_metric(x0, y0) + 1e-9


def test_support_bound():
    assert support_bound(dirac(IDENTITY)) == 0.0
    mu = make_measure([Mat2.diag(2, 0.5), Mat2.diag(3, 1 / 3)], [0.5, 0.5])
    assert support_bound(mu) == pytest.approx(matrix_metric(Mat2.diag(3, 1 / 3), IDENTITY))
    assert support_bound(thm5_q(Thm5Params(K=400)).measure) == pytest.approx(399.0)
    assert support_bound(thm3_q().measure) == math.inf


def test_truncate_thm5_weights():
    m = 4
    w = lambda k: math.exp(-math.sqrt(k)) if k >= m else (1 - exp_sqrt_tail(m) if k == 1 else 0.0)
    mu, rep = truncate_series(w, lambda k: Mat2.diag(k, 1.0 / k), 1e-10, m,
                              tail_bound=exp_sqrt_tail_bound)
    K = rep.last_index
    assert exp_sqrt_tail(K + 1) < 1e-10
    assert exp_sqrt_tail_bound(K - 1) >= 1e-10
    assert math.fsum(mu.weights) == 1.0 or abs(math.fsum(mu.weights) - 1.0) < 1e-15
    assert rep.tail_mass == pytest.approx(exp_sqrt_tail(K + 1), rel=1e-3, abs=1e-16)
    assert not rep.bound_is_finite  # no cost bound supplied


def test_truncate_constant_family_is_identity():
    w = [0.2, 0.3, 0.5]
    atoms = [IDENTITY, rotation(0.5), Mat2.diag(2, 0.5)]
    mu, rep = truncate_series(lambda k: w[k] if k < 3 else 0.0, lambda k: atoms[k], 1e-12, 0,
                              tail_bound=lambda k: 0.0 if k >= 2 else 1.0, start=0, min_index=2)
    assert rep.tail_mass == 0.0 and rep.w1_error_bound == 0.0
    assert dict(zip(mu.atoms, mu.weights)) == dict(zip(atoms, w))


def test_truncate_errors():
    with pytest.raises(ValueError):
        truncate_series(lambda k: 0.5 ** k, lambda k: IDENTITY, 1e-3, 1)
    with pytest.raises(ValueError):
        truncate_series(lambda k: 0.5 ** k, lambda k: Mat2.diag(k, 1 / k), 1e-3, 999,
                        tail_bound=lambda k: 0.5 ** k)


def test_thm3_truncation_keeps_pairs_equal():
    P = Thm3Params()
    q = thm3_q(P)
    mu, rep = q.measure, q.report
    K2 = rep.last_index // 2
    for k in range(1, K2 + 1):
        assert mu.weight_of_label(2 * k - 1) == mu.weight_of_label(2 * k)
    # original weights: kept geometric part matches the partial sum
    kept = math.fsum(2 * P.r ** k for k in range(2, K2 + 1))
    assert kept == pytest.approx(2 * P.r ** 2 * (1 - P.r ** (K2 - 1)) / (1 - P.r), abs=1e-12)
    assert rep.tail_mass + 2 * P.p1 + kept == pytest.approx(1.0, abs=1e-12)
    assert rep.tail_mass < P.tail_tol


def test_json_roundtrip():
    mu = make_measure([A, B], [0.25, 0.75], labels=["a", "b"])
    nu = DiscreteMeasure.from_json(mu.to_json())
    assert nu == mu and nu.labels == mu.labels
