import collections
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chi2_contingency

import latdev as ld


def spec_for(n, p=1, q=1, offset=0):
    return ld.ConditioningSpec(p=p, q=q, n=n, offset=offset)


def exact_occupancy_fractions(m, n):
    """Inclusion-exclusion in exact rational arithmetic (independent oracle)."""
    out = []
    for w in range(n + 1):
        acc = Fraction(0)
        for j in range(n - w + 1):
            acc += Fraction((-1) ** j * math.comb(n - w, j) * (n - w - j) ** m)
        out.append(Fraction(math.comb(n, w)) * acc / Fraction(n**m))
    return out


# -- inclusion-exclusion oracle ----------------------------------------------------

def test_occupancy_oracle_edge_cases():
    ws, probs = ld.occupancy_oracle(0, 4)
    assert probs[ws.tolist().index(4)] == pytest.approx(1.0, abs=1e-15)
    ws, probs = ld.occupancy_oracle(1, 2)
    assert probs[ws.tolist().index(1)] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("m,n", [(8, 10), (5, 5), (12, 7)])
def test_occupancy_oracle_vs_exact_rationals(m, n):
    ws, probs = ld.occupancy_oracle(m, n)
    want = exact_occupancy_fractions(m, n)
    assert np.max(np.abs(probs - [float(f) for f in want])) < 1e-14
    assert abs(float(probs.sum()) - 1.0) < 1e-12


# -- exact conditional law ------------------------------------------------------------

def test_trivial_one_term_conditioning(occupancy_unit):
    law = ld.exact_conditional_law(occupancy_unit, spec_for(1))
    # conditioned on the single variable hitting 1, its zero-indicator is 0
    assert law.values.tolist() == [0.0]
    assert law.probs[0] == pytest.approx(1.0, abs=1e-12)


def test_occupancy_conditional_matches_inclusion_exclusion(occupancy_unit):
    # 8 balls in 10 urns: empty-urn count given the lattice sum equals 8
    spec = ld.ConditioningSpec(p=4, q=5, n=2)
    law = ld.exact_conditional_law(occupancy_unit, spec)
    ws, probs = ld.occupancy_oracle(8, 10)
    atoms = {int(round(t)): p for t, p in zip(law.values, law.probs)}
    for w, p in zip(ws, probs):
        assert abs(atoms.get(int(w), 0.0) - p) < 1e-10


def test_occupancy_conditional_free_rate_parameter():
    # the conditional law does not depend on the generating rate
    spec = ld.ConditioningSpec(p=4, q=5, n=2)
    a = ld.exact_conditional_law(ld.JointLaw.occupancy(0.8), spec)
    b = ld.exact_conditional_law(ld.JointLaw.occupancy(2.3), spec)
    pa = {int(round(t)): p for t, p in zip(a.values, a.probs)}
    pb = {int(round(t)): p for t, p in zip(b.values, b.probs)}
    assert set(pa) == set(pb)
    assert all(abs(pa[k] - pb[k]) < 1e-11 for k in pa)


def test_identity_mark_is_point_mass():
    j = ld.JointLaw.with_mark(ld.LatticeDistribution.poisson(1.0), ld.Mark("identity"))
    law = ld.exact_conditional_law(j, spec_for(6))
    assert law.values.tolist() == [6.0]
    assert law.probs[0] == pytest.approx(1.0, abs=1e-12)


def test_event_probability_matches_quadrature(occupancy_unit):
    spec = ld.ConditioningSpec(p=4, q=5, n=2)
    law = ld.exact_conditional_law(occupancy_unit, spec)
    want = ld.log_exact_point_prob(ld.LatticeDistribution.poisson(1.0), 10, 8)
    assert abs(law.log_event_prob - want) < 1e-12


def test_conditional_mean_approaches_concentration_point(occupancy_unit):
    chi = ld.gibbs_point(occupancy_unit, 1.0)
    errs = []
    for n in (25, 50, 100, 200):
        law = ld.exact_conditional_law(occupancy_unit, spec_for(n))
        errs.append(abs(law.mean() / n - chi))
    assert errs[0] > errs[1] > errs[2] > errs[3]


def test_zero_probability_event_raises():
    bern = ld.JointLaw.with_mark(ld.LatticeDistribution.from_table([(0, 0.5), (1, 0.5)]),
                                 ld.Mark("indicator-zero"))
    with pytest.raises(ld.ZeroProbabilityEvent):
        ld.exact_conditional_law(bern, spec_for(3, p=2))


def test_state_budget_guard(occupancy_unit):
    with pytest.raises(ld.StateBudgetExceeded):
        ld.exact_conditional_law(occupancy_unit, spec_for(200), state_budget=1000)


def test_half_integer_marks_rescale():
    rows = [(0, 0.5, 0.4), (1, 0.0, 0.3), (2, 1.5, 0.3)]
    j = ld.JointLaw.from_table(rows)
    law = ld.exact_conditional_law(j, spec_for(4))
    assert law.lcd == 2
    assert abs(float(law.probs.sum()) - 1.0) < 1e-10
    # support values are half-integers
    assert np.all(np.abs(law.values * 2 - np.round(law.values * 2)) < 1e-12)


# -- rejection sampling -----------------------------------------------------------------

def test_sampling_deterministic_across_threads(occupancy_unit):
    cfg = ld.SimConfig(seed=7, replicates=4000)
    r1 = ld.sample_conditioned(occupancy_unit, spec_for(20), cfg, threads=1)
    r8 = ld.sample_conditioned(occupancy_unit, spec_for(20), cfg, threads=8)
    assert np.array_equal(r1.values, r8.values)
    assert r1.attempts == r8.attempts
    assert r1.metadata["rng"] == "philox4x64"


def test_sampling_matches_dp_mean(occupancy_unit):
    cfg = ld.SimConfig(seed=42, replicates=10000)
    res = ld.sample_conditioned(occupancy_unit, spec_for(20), cfg)
    law = ld.exact_conditional_law(occupancy_unit, spec_for(20))
    se = float(np.std(res.values)) / math.sqrt(res.values.size)
    assert abs(float(res.values.mean()) - law.mean()) < 3 * se


def test_tilted_and_plain_proposals_agree(occupancy_unit):
    spec = spec_for(30)
    a = ld.sample_conditioned(occupancy_unit, spec,
                              ld.SimConfig(seed=11, replicates=10000), proposal="plain")
    b = ld.sample_conditioned(occupancy_unit, spec,
                              ld.SimConfig(seed=12, replicates=10000), proposal="tilted")
    ka = collections.Counter(a.values.astype(int))
    kb = collections.Counter(b.values.astype(int))
    keys = sorted(set(ka) | set(kb))
    tbl = np.array([[ka.get(k, 0) for k in keys], [kb.get(k, 0) for k in keys]])
    keep = tbl.sum(axis=0) >= 5
    merged = np.hstack([tbl[:, keep], tbl[:, ~keep].sum(axis=1, keepdims=True)]) \
        if (~keep).any() else tbl[:, keep]
    _, p, _, _ = chi2_contingency(merged)
    assert p > 0.001


def test_tilted_acceptance_rate_prediction(occupancy_unit):
    # acceptance happens at the proposal's center: rate ~ 1/(sigma* sqrt(2 pi nq))
    spec = ld.ConditioningSpec(p=3, q=2, n=50)  # nq = 100, ratio 1.5
    res = ld.sample_conditioned(occupancy_unit, spec,
                                ld.SimConfig(seed=5, replicates=4000))
    assert res.proposal == "tilted"
    pred = 1.0 / math.sqrt(1.5 * 2.0 * math.pi * 100.0)
    assert abs(res.acceptance_rate / pred - 1.0) < 0.10


def test_max_rejections_guard(occupancy_unit):
    spec = ld.ConditioningSpec(p=5, q=1, n=40)  # far tail, plain proposal
    cfg = ld.SimConfig(seed=0, replicates=10, max_rejections=4000)
    with pytest.raises(ld.MaxRejectionsExceeded) as exc:
        ld.sample_conditioned(occupancy_unit, spec, cfg, proposal="plain")
    assert exc.value.acceptance_rate is not None


# -- empirical rates ----------------------------------------------------------------------

def test_empirical_rate_trend(occupancy_unit):
    specs = [spec_for(n) for n in (50, 100, 200)]
    pts = ld.empirical_rate(occupancy_unit, specs, 0.5, side="ge", method="dp")
    errs = [p.error for p in pts]
    assert errs[0] > errs[1] > errs[2]
    assert pts[0].theory == pytest.approx(ld.rate_at(occupancy_unit, 1.0, 0.5), abs=1e-12)


def test_empirical_rate_at_concentration_point(occupancy_unit):
    chi = ld.gibbs_point(occupancy_unit, 1.0)
    pts = ld.empirical_rate(occupancy_unit, [spec_for(n) for n in (50, 100, 200)],
                            chi, side="ge", method="dp")
    assert pts[0].theory == 0.0
    for p in pts:
        assert abs(p.estimate) <= 2.0 / p.nq
    assert abs(pts[-1].estimate) < abs(pts[0].estimate)


def test_empirical_rate_beyond_hull(occupancy_unit):
    pts = ld.empirical_rate(occupancy_unit, [spec_for(20)], 1.5, side="ge", method="dp")
    assert pts[0].estimate == math.inf


def test_empirical_rate_mc(occupancy_unit):
    cfg = ld.SimConfig(seed=9, replicates=20000)
    dp = ld.empirical_rate(occupancy_unit, [spec_for(20)], 0.5, method="dp")[0]
    mc = ld.empirical_rate(occupancy_unit, [spec_for(20)], 0.5, method="mc", cfg=cfg)[0]
    assert mc.reliable
    assert abs(mc.estimate - dp.estimate) < 0.2 * abs(dp.estimate) + 0.02


# -- moderate-scale empirical ----------------------------------------------------------------

def test_mdp_empirical_trend(occupancy_unit):
    specs = [spec_for(n) for n in (60, 120, 240)]
    a = lambda n: n**-0.5
    pts = ld.mdp_empirical(occupancy_unit, specs, a, 1.0)
    errs = [p.error for p in pts]
    assert errs[0] > errs[1] > errs[2]
    alpha2 = ld.mdp_params(occupancy_unit, 1.0).alpha2
    assert pts[0].theory == pytest.approx(-1.0 / (2.0 * alpha2), rel=1e-12)


def test_mdp_empirical_center_estimates_vanish(occupancy_unit):
    specs = [spec_for(n) for n in (60, 120, 240)]
    pts = ld.mdp_empirical(occupancy_unit, specs, lambda n: n**-0.5, 0.0)
    assert abs(pts[-1].estimate) < abs(pts[0].estimate)
    assert abs(pts[-1].estimate) < 0.06


def test_mdp_empirical_refuses_degenerate():
    ident = ld.JointLaw.with_mark(ld.LatticeDistribution.poisson(1.0),
                                  ld.Mark("identity"))
    with pytest.raises(ld.DegenerateResidual):
        ld.mdp_empirical(ident, [spec_for(20)], lambda n: n**-0.5, 1.0)


def test_mdp_empirical_validates_speed(occupancy_unit):
    specs = [spec_for(n) for n in (20, 40, 80)]
    with pytest.raises(ld.InvalidLaw):
        ld.mdp_empirical(occupancy_unit, specs, lambda n: n**-2.0, 1.0)
