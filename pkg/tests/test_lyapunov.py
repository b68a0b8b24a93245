import math

import numpy as np
import pytest

from lyapwass.constructions import (Thm3Params, Thm5Params, thm3_q, thm3_qn, thm5_q, thm5_qn)
from lyapwass.lyapunov import (ProjectiveMeasure, common_fixed_points, exact_diagonal_lyapunov,
                               furstenberg_lyapunov, furstenberg_value, hv_swap_check,
                               invariant_pairs, mc_lyapunov, stationarity_defect,
                               stationary_closure_probe, stationary_measure, transfer_operator)
from lyapwass.mat2 import H, IDENTITY, SWAP, V, Mat2, SingularMatrixError, rotation
from lyapwass.measure import dirac, make_measure

D2 = dirac(Mat2.diag(2.0, 0.5))


def test_mc_deterministic_product():
    e = mc_lyapunov(D2, steps=2000, trials=4)
    assert abs(e.lambda_plus - math.log(2)) <= 3 * e.stderr + 1e-12
    assert e.lambda_minus == pytest.approx(-math.log(2), abs=1e-12)


def test_mc_matches_matrix_power_oracle():
    # one fixed non-diagonal atom: lambda_+ is log of the spectral radius
    m = Mat2(2.0, 1.0, 1.0, 1.0)
    e = mc_lyapunov(dirac(m), steps=1000, trials=2)
    rho = max(abs(np.linalg.eigvals(m.entries)))
    assert e.lambda_plus == pytest.approx(math.log(rho), abs=1e-10)


def test_mc_rejects_singular_atom():
    with pytest.raises(SingularMatrixError):
        mc_lyapunov(dirac(Mat2(1.0, 2.0, 2.0, 4.0)))
    with pytest.raises(ValueError):
        mc_lyapunov(D2, steps=10)


def test_mc_overflow_free_for_huge_atoms():
    mu = thm3_qn(Thm3Params(n=5)).measure
    e = mc_lyapunov(mu, steps=500, trials=4)
    assert math.isfinite(e.lambda_plus) and math.isfinite(e.stderr)


def test_mc_seed_determinism():
    mu = make_measure([Mat2.diag(3, 1 / 3), rotation(0.4)], [0.5, 0.5])
    a = mc_lyapunov(mu, steps=500, trials=4, seed=9)
    b = mc_lyapunov(mu, steps=500, trials=4, seed=9)
    c = mc_lyapunov(mu, steps=500, trials=4, seed=10)
    assert a == b and np.array_equal(a.trial_values, b.trial_values)
    assert a.lambda_plus != c.lambda_plus


def test_exact_diagonal_examples():
    assert exact_diagonal_lyapunov(D2).lambda_plus == pytest.approx(math.log(2))
    assert exact_diagonal_lyapunov(thm3_q().measure).lambda_plus == 0.0
    P = Thm3Params(n=6)
    assert exact_diagonal_lyapunov(thm3_qn(P).measure).lambda_plus == pytest.approx(
        1 + P.l ** (1 - 6), abs=1e-9)
    with pytest.raises(ValueError):
        exact_diagonal_lyapunov(dirac(rotation(0.1)))


def test_exact_diagonal_gl_takes_largest_diagonal_average():
    mu = make_measure([Mat2.diag(2.0, 0.25), Mat2.diag(0.25, 2.0)], [0.5, 0.5])
    e = exact_diagonal_lyapunov(mu)
    assert e.lambda_plus == pytest.approx(-0.5 * math.log(2))
    assert e.lambda_minus == pytest.approx(-0.5 * math.log(2))


def test_stationary_measure_rotation_uniform():
    mu = make_measure([rotation(0.3), rotation(1.1)], [0.5, 0.5])
    eta = stationary_measure(mu, 256)
    assert eta.converged
    assert np.abs(eta.bin_mass - 1 / 256).max() < 1e-10
    assert furstenberg_lyapunov(mu, 256).lambda_plus == pytest.approx(0.0, abs=1e-10)


def test_stationary_measure_detects_axes():
    eta = stationary_measure(D2, 64)
    assert set(eta.fixed_points) == {H, V}
    q = thm3_q().measure
    eta = stationary_measure(q, 64)
    assert set(eta.fixed_points) == {H, V}
    # delta_H and delta_V are stationary: eta(E) = sum p_k eta(alpha_k^-1 E)
    for p in (H, V):
        point = ProjectiveMeasure.point_masses([p], [1.0])
        assert stationarity_defect(point, q) <= 1e-15


def test_stationary_measure_bins_validated():
    with pytest.raises(ValueError):
        stationary_measure(D2, 100)
    with pytest.raises(ValueError):
        stationary_measure(D2, 32)


def test_stationary_measure_nonconvergence_flagged():
    mu = make_measure([Mat2.diag(1.01, 1 / 1.01)], [1.0])
    eta = stationary_measure(mu, 1024, tol=1e-14, max_iters=3)
    assert not eta.converged and eta.iterations == 3
    assert eta.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_transfer_operator_conserves_mass():
    mu = make_measure([Mat2(1, 2, 0.5, 3), rotation(0.7), Mat2.diag(5, 0.2)], [0.2, 0.3, 0.5])
    T = transfer_operator(mu, 128)
    assert np.allclose(np.asarray(T.sum(axis=0)).ravel(), 1.0, atol=1e-12)
    assert (T.data >= 0).all()


def test_furstenberg_values():
    m = D2.atoms[0]
    assert furstenberg_value(D2, ProjectiveMeasure.point_masses([H], [1.0])) == pytest.approx(math.log(2))
    assert furstenberg_value(D2, ProjectiveMeasure.point_masses([V], [1.0])) == pytest.approx(-math.log(2))
    for n in (4, 7):
        mu = thm3_qn(Thm3Params(n=n)).measure
        best = max(furstenberg_value(mu, ProjectiveMeasure.point_masses([p], [1.0])) for p in (H, V))
        assert best == pytest.approx(exact_diagonal_lyapunov(mu).lambda_plus, abs=1e-9)


def test_furstenberg_thm3_q_is_zero():
    e = furstenberg_lyapunov(thm3_q().measure, bins=256)
    assert e.lambda_plus == pytest.approx(0.0, abs=1e-12)
    assert not e.lower_bound_only


def test_furstenberg_non_diagonal_labelled_lower_bound():
    mu = make_measure([Mat2.diag(3, 1 / 3), SWAP], [0.6, 0.4])
    assert invariant_pairs(mu) == ((H, V),)
    assert common_fixed_points(mu) == ()
    e = furstenberg_lyapunov(mu, 256)
    assert e.lower_bound_only
    # the invariant-pair candidate carries the exact value 0
    assert e.details["pair@0,1.5708"] == pytest.approx(0.0, abs=1e-15)


def test_hv_swap_check():
    assert hv_swap_check(SWAP)
    assert not hv_swap_check(IDENTITY)
    eps = 0.1
    d = math.atan(eps)
    m = Mat2(0.0, -math.sin(d) / eps ** 2, eps ** 2 * math.sin(d) + eps * math.cos(d), 0.0)
    assert hv_swap_check(m)
    with pytest.raises(SingularMatrixError):
        hv_swap_check(Mat2(0.0, 0.0, 1.0, 0.0))


def test_closure_probe_constant_sequence():
    mu = make_measure([Mat2.diag(2, 0.5), Mat2(1, 1, 0, 1)], [0.5, 0.5])
    assert stationary_closure_probe([mu, mu], mu, bins=256) < 1e-9


def test_closure_probe_thm5_decays():
    q = thm5_q(Thm5Params(K=400)).measure
    seq = [thm5_qn(Thm5Params(K=400, n=n)).measure for n in (5, 50, 200)]
    d = stationary_closure_probe(seq, q, bins=512, return_all=True)
    assert d[0] > d[1] > d[2]
    assert d[2] < 1e-4


def test_closure_probe_perturbed_weights():
    a, b = Mat2.diag(2, 0.5), Mat2(1, 0.5, 0, 1)
    p = make_measure([a, b], [0.5, 0.5])
    seq = [make_measure([a, b], [0.5 + 0.4 / k, 0.5 - 0.4 / k]) for k in (1, 4, 16, 64)]
    d = stationary_closure_probe(seq, p, bins=256, return_all=True)
    assert all(x > y for x, y in zip(d, d[1:]))


def test_mc_thm5_q_matches_truncated_series():
    c = thm5_q(Thm5Params(K=400))
    e = mc_lyapunov(c.measure)
    assert abs(e.lambda_plus - c.expected_lambda) <= 3 * e.stderr
    assert e.lambda_plus <= e.upper_bound


def test_furstenberg_thm5_q_within_two_percent():
    c = thm5_q(Thm5Params(K=400))
    e = furstenberg_lyapunov(c.measure, bins=4096)
    assert e.lambda_plus == pytest.approx(c.expected_lambda, rel=0.02)
    assert abs(e.details["grid"] - c.expected_lambda) <= 0.02 * c.expected_lambda
