import math

import numpy as np
import pytest
from scipy.special import gammaln

import latdev as ld
from conftest import random_span1_table


def poisson_logpmf(lam, k):
    return -lam + k * math.log(lam) - float(gammaln(k + 1))


BERNOULLI = ld.LatticeDistribution.from_table([(0, 0.5), (1, 0.5)])
EVEN_COIN = ld.LatticeDistribution.from_table([(0, 0.5), (2, 0.5)])
POIS1 = ld.LatticeDistribution.poisson(1.0)


# -- exact point probabilities -----------------------------------------------

def test_poisson_sum_closed_form():
    got = ld.exact_point_prob(POIS1, 100, 100)
    want = math.exp(poisson_logpmf(100.0, 100))
    assert abs(got - want) < 1e-13
    assert abs(got - 0.0398610) < 1e-7


def test_single_term_is_pmf():
    for d in (POIS1, BERNOULLI, ld.LatticeDistribution.geometric(0.3)):
        for k in (0, 1, 3):
            want = float(np.exp(d.log_pmf(np.asarray([k]))[0]))
            assert abs(ld.exact_point_prob(d, 1, k) - want) < 1e-13


def test_binomial_closed_form():
    got = ld.exact_point_prob(BERNOULLI, 10, 5)
    assert abs(got - 0.24609375) < 1e-13


def test_quadrature_matches_dp(rng):
    for _ in range(5):
        d = random_span1_table(rng, max_k=6)
        n = int(rng.integers(2, 30))
        mean_k = int(round(ld.moments(d).mean * n))
        for k in {max(0, mean_k - 1), mean_k, mean_k + 2}:
            q = ld.exact_point_prob(d, n, k, validate=True)
            dp = ld.dp_point_prob(d, n, k)
            assert abs(q - dp) < 1e-12


def test_point_probs_sum_to_one():
    d = ld.LatticeDistribution.from_table([(0, 0.25), (1, 0.5), (3, 0.25)])
    n = 6
    total = math.fsum(ld.exact_point_prob(d, n, k) for k in range(0, 3 * n + 1))
    assert abs(total - 1.0) < 1e-10


def test_log_far_tail_matches_poisson_closed_form():
    for n, k in ((100, 300), (100, 10), (50, 200)):
        got = ld.log_exact_point_prob(POIS1, n, k)
        assert abs(got - poisson_logpmf(float(n), k)) < 5e-12 * max(1.0, abs(got))


# -- central normalization ----------------------------------------------------

def test_central_values():
    got = ld.central_local_limit(POIS1, 100, 100)
    assert abs(got - 1.0 / math.sqrt(200.0 * math.pi)) < 1e-15
    got2 = ld.central_local_limit(BERNOULLI, 100, 50)
    assert abs(got2 - 2.0 / math.sqrt(200.0 * math.pi)) < 1e-15


def test_central_requires_the_mean():
    with pytest.raises(ld.MeanMismatch):
        ld.central_local_limit(POIS1, 100, 101)


def test_central_requires_span_one():
    with pytest.raises(ld.SpanNotOne):
        ld.central_local_limit(EVEN_COIN, 100, 100)


def test_central_ratio_error_decreases():
    errs = []
    for n in (25, 100, 400):
        ratio = ld.central_local_limit(POIS1, n, n) / ld.exact_point_prob(POIS1, n, n)
        errs.append(abs(ratio - 1.0))
    assert errs[0] > errs[1] > errs[2]
    ratio_100 = ld.central_local_limit(POIS1, 100, 100) / ld.exact_point_prob(POIS1, 100, 100)
    assert 0.9990 <= 1.0 / ratio_100 <= 1.0005  # the 1/(12 n) normalization defect


# -- saddle-point (tilted) approximation ---------------------------------------

def test_tilted_reduces_to_central_at_mean():
    a = ld.tilted_local_limit(POIS1, 64, 64)
    b = ld.central_local_limit(POIS1, 64, 64)
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("k,window", [(150, (0.999, 1.001)), (50, (0.998, 1.002))])
def test_tilted_ratio_windows(k, window):
    exact = ld.exact_point_prob(POIS1, 100, k)
    approx = ld.tilted_local_limit(POIS1, 100, k)
    assert window[0] <= approx / exact <= window[1]


def test_tilted_error_decreases_with_terms():
    # ratios on both sides of the mean; log scale dodges far-tail underflow
    for ratio_target in (0.5, 1.5):
        errs = []
        for n in (25, 100, 400):
            k = int(round(ratio_target * n))
            log_exact = ld.log_exact_point_prob(POIS1, n, k)
            log_approx = ld.log_tilted_local_limit(POIS1, n, k)
            errs.append(abs(math.exp(log_approx - log_exact) - 1.0))
        assert errs[0] > errs[1] > errs[2]


def test_tilt_identity():
    # tilting moves the target to the mean and contributes an exact
    # exponential factor; both sides evaluated by the direct route
    ev = ld.CgfEvaluator(POIS1)
    for k in (50, 150):
        ratio = k / 100.0
        ts = ld.solve_tilt(ev, ratio)
        psi_star = ratio * ts.tau - ev.value(ts.tau)
        lhs = math.exp(ld.log_exact_point_prob(POIS1, 100, k, method="direct"))
        rhs = math.exp(-100.0 * psi_star) * math.exp(
            ld.log_exact_point_prob(ts.tilted, 100, k, method="direct"))
        assert abs(lhs - rhs) < 1e-10


def test_tilted_requires_span_one():
    with pytest.raises(ld.SpanNotOne):
        ld.tilted_local_limit(EVEN_COIN, 100, 100)
    with pytest.raises(ld.TargetOutsideRange):
        ld.tilted_local_limit(BERNOULLI, 10, 11)


# -- span-2 diagnostic ----------------------------------------------------------

def test_span2_ratio_tends_to_two():
    r = ld.span_counterexample_report(EVEN_COIN, 400, 400)
    assert r.parity_ok
    assert abs(r.ratio - 2.0) < 0.05 * 2.0


def test_span2_wrong_parity_is_zero():
    r = ld.span_counterexample_report(EVEN_COIN, 100, 101)
    assert not r.parity_ok
    assert r.exact == 0.0


def test_span2_shifted_lattice():
    odd = ld.LatticeDistribution.from_table([(1, 0.5), (3, 0.5)])
    r = ld.span_counterexample_report(odd, 50, 100)
    assert r.parity_ok
    assert abs(r.ratio - 2.0) < 0.05 * 2.0


def test_span2_report_requires_span_two():
    with pytest.raises(ld.SpanNotOne):
        ld.span_counterexample_report(BERNOULLI, 10, 5)
