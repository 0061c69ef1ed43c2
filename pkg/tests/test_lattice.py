import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import latdev as ld
from conftest import make_rng, random_table

E = math.e


# -- span --------------------------------------------------------------------

def test_span_of_closed_families():
    assert ld.span(ld.LatticeDistribution.poisson(1.0)) == ld.Span(1, 0)
    assert ld.span(ld.LatticeDistribution.geometric(0.3)) == ld.Span(1, 0)
    assert ld.span(ld.LatticeDistribution.borel(0.2)) == ld.Span(1, 0)


@pytest.mark.parametrize("rows,m,b", [
    ([(0, 0.2), (2, 0.5), (4, 0.3)], 2, 0),
    ([(1, 0.5), (3, 0.5)], 2, 1),
    ([(0, 0.5), (1, 0.5)], 1, 0),
    ([(3, 0.25), (9, 0.25), (15, 0.5)], 6, 3),
])
def test_span_tables(rows, m, b):
    sp = ld.span(ld.LatticeDistribution.from_table(rows))
    assert (sp.m, sp.b) == (m, b)


def test_span_one_point_raises():
    one = ld.LatticeDistribution.from_table([(4, 1.0)])
    with pytest.raises(ld.DegenerateDistribution):
        ld.span(one)
    assert ld.span(one, degenerate_ok=True) == ld.Span(0, 4)


def test_span_invariant_under_zero_atom_removal(rng):
    for _ in range(20):
        d = random_table(rng)
        rows = list(zip(d.ks.tolist(), d.ps.tolist()))
        # splice a zero-probability atom between existing support points
        k_new = int(d.ks[-1]) + int(d.ks[1] - d.ks[0])
        with_zero = ld.LatticeDistribution.from_table(rows + [(k_new + 1000, 0.0)],
                                                      check_mass=False)
        assert ld.span(with_zero) == ld.span(d)


# -- moments -----------------------------------------------------------------

def test_poisson_moments():
    m = ld.moments(ld.LatticeDistribution.poisson(1.0))
    assert m.mean == 1.0 and m.variance == 1.0


def test_two_point_moments():
    m = ld.moments(ld.LatticeDistribution.from_table([(0, 0.5), (2, 0.5)]))
    assert abs(m.mean - 1.0) < 1e-15
    assert abs(m.variance - 1.0) < 1e-15


@pytest.mark.parametrize("rho", [0.2, 0.5, 0.8])
def test_geometric_mean_closed_form_vs_summation(rho):
    d = ld.LatticeDistribution.geometric(rho)
    m = ld.moments(d)
    assert abs(m.mean - rho / (1 - rho)) < 1e-12
    t = ld.materialize(d, 1e-14)
    direct = math.fsum(float(k) * float(p) for k, p in zip(t.ks, t.ps))
    assert abs(direct - m.mean) < 1e-11


def test_borel_mean_closed_form_vs_summation():
    d = ld.LatticeDistribution.borel(0.2)
    m = ld.moments(d)
    mu = ld.tree_fn(0.2)
    assert abs(m.mean - 1.0 / (1.0 - mu)) < 1e-12
    t = ld.materialize(d, 1e-14)
    direct = math.fsum(float(k) * float(p) for k, p in zip(t.ks, t.ps))
    assert abs(direct - m.mean) < 1e-10


# -- characteristic values ---------------------------------------------------

def test_charfn_at_zero_is_one():
    for d in (ld.LatticeDistribution.poisson(2.0),
              ld.LatticeDistribution.geometric(0.4),
              ld.LatticeDistribution.borel(0.25),
              ld.LatticeDistribution.from_table([(0, 0.3), (5, 0.7)])):
        assert abs(ld.charfn(d, 0.0) - 1.0) < 1e-15


@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_poisson_charfn_formula_vs_sum(lam):
    d = ld.LatticeDistribution.poisson(lam)
    t = ld.materialize(d, 1e-16)
    for tt in (0.3, 1.0, 2.5):
        closed = ld.charfn(d, tt)
        direct = ld.charfn(t, tt)
        assert abs(closed - direct) < 1e-12
        assert abs(closed - np.exp(lam * (np.exp(1j * tt) - 1))) < 1e-14


def test_borel_charfn_vs_sum():
    d = ld.LatticeDistribution.borel(0.2)
    t = ld.materialize(d, 1e-15)
    for tt in (0.5, 1.7):
        assert abs(ld.charfn(d, tt) - ld.charfn(t, tt)) < 1e-11


def test_bernoulli_charfn_at_pi_vanishes():
    d = ld.LatticeDistribution.from_table([(0, 0.5), (1, 0.5)])
    assert abs(ld.charfn(d, math.pi)) < 1e-15


def test_charfn_lattice_periodicity(rng):
    d = random_table(rng)
    ts = rng.uniform(-10, 10, size=100)
    a = ld.charfn(d, ts)
    b = ld.charfn(d, ts + 2 * math.pi)
    assert np.max(np.abs(a - b)) < 1e-12
    assert np.max(np.abs(a)) <= 1.0 + 1e-12


def test_unit_modulus_iff_span_above_one(rng):
    grid = np.linspace(0.05, 2 * math.pi - 0.05, 4001)
    for _ in range(10):
        d = random_table(rng)
        peak = np.max(np.abs(ld.charfn(d, grid)))
        if ld.span(d).m > 1:
            assert peak > 1 - 1e-9
        else:
            assert peak < 1 - 1e-9


# -- materialization ---------------------------------------------------------

def test_materialize_mass_window():
    for d, eps in ((ld.LatticeDistribution.poisson(1.0), 1e-12),
                   (ld.LatticeDistribution.geometric(0.5), 1e-10),
                   (ld.LatticeDistribution.borel(0.2), 1e-12)):
        t = ld.materialize(d, eps)
        total = float(t.ps.sum())
        assert 1 - eps <= total <= 1 + 1e-12
        assert t.truncated_mass <= eps


def test_geometric_row_count_matches_tail_formula():
    t = ld.materialize(ld.LatticeDistribution.geometric(0.5), 1e-10)
    assert t.ks.size == math.ceil(math.log2(1e10)) + 1


def test_materialize_identity_on_tables():
    d = ld.LatticeDistribution.from_table([(0, 0.5), (3, 0.5)])
    assert ld.materialize(d, 1e-12) is d


def test_borel_at_domain_corner_refuses_tight_truncation():
    with pytest.raises(ld.TruncationInfeasible):
        ld.materialize(ld.LatticeDistribution.borel(math.exp(-1)), 1e-12)


def test_joint_materialize_occupancy():
    j = ld.JointLaw.occupancy(1.0)
    t = ld.materialize_joint(j, 1e-12)
    atoms = {(int(k), float(y)): float(p)
             for k, y, p in zip(t.xs, t.ys, t.ps)}
    assert abs(atoms[(0, 1.0)] - math.exp(-1)) < 1e-15
    assert abs(atoms[(1, 0.0)] - math.exp(-1)) < 1e-15
    assert all(y in (0.0, 1.0) for _, y in atoms)


def test_joint_x_marginal_reconstructs():
    rows = [(0, 1.0, 0.3), (1, 0.0, 0.2), (1, 2.0, 0.1), (4, -1.0, 0.4)]
    j = ld.JointLaw.from_table(rows)
    xm = j.x_marginal()
    assert xm.ks.tolist() == [0, 1, 4]
    assert np.allclose(xm.ps, [0.3, 0.3, 0.4], atol=1e-15)


# -- construction validation -------------------------------------------------

def test_invalid_laws_raise():
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.from_table([(0, 0.5), (1, 0.6)])
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.from_table([(1, 0.5), (1, 0.5)])
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.from_table([(0, -0.1), (1, 1.1)])
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.from_table([(-1, 0.5), (1, 0.5)])
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.poisson(0.0)
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.geometric(1.0)
    with pytest.raises(ld.InvalidLaw):
        ld.LatticeDistribution.borel(0.5)
    with pytest.raises(ld.InvalidLaw):
        ld.JointLaw.from_table([(0, 1.0, 0.5), (0, 1.0, 0.5)])


def test_conditioning_spec_validation():
    spec = ld.ConditioningSpec(p=4, q=5, n=2)
    assert spec.ratio == 0.8 and spec.num_terms == 10 and spec.target_sum == 8
    off = ld.ConditioningSpec(p=1, q=1, n=10, offset=1)
    assert off.target_sum == 9
    with pytest.raises(ld.InvalidLaw):
        ld.ConditioningSpec(p=0, q=1, n=1)
    with pytest.raises(ld.InvalidLaw):
        ld.ConditioningSpec(p=1, q=1, n=1, offset=2)


# -- JSON schema -------------------------------------------------------------

@pytest.mark.parametrize("law", [
    ld.LatticeDistribution.poisson(1.5),
    ld.LatticeDistribution.geometric(0.25),
    ld.LatticeDistribution.borel(0.3),
    ld.LatticeDistribution.from_table([(0, 0.25), (2, 0.75)]),
])
def test_law_json_round_trip(law):
    obj = json.loads(json.dumps(ld.law_to_obj(law)))
    back = ld.law_from_obj(obj)
    assert back.kind == law.kind
    if law.is_table:
        assert np.array_equal(back.ks, law.ks)
        assert np.allclose(back.ps, law.ps, rtol=0, atol=1e-15)


def test_joint_json_round_trip():
    for j in (ld.JointLaw.occupancy(0.7),
              ld.JointLaw.with_mark(ld.LatticeDistribution.poisson(1.0),
                                    ld.Mark("indicator-eq", at=3)),
              ld.JointLaw.from_table([(0, 1.5, 0.5), (2, -1.0, 0.5)])):
        back = ld.joint_from_obj(json.loads(json.dumps(ld.joint_to_obj(j))))
        assert back.kind == j.kind
        ta, tb = ld.materialize_joint(j, 1e-12), ld.materialize_joint(back, 1e-12)
        assert np.array_equal(ta.xs, tb.xs)
        assert np.allclose(ta.ys, tb.ys, atol=0)
        assert np.allclose(ta.ps, tb.ps, atol=1e-15)


def test_unknown_kind_rejected():
    with pytest.raises(ld.InvalidLaw):
        ld.law_from_obj({"kind": "zeta", "s": 2})
    with pytest.raises(ld.InvalidLaw):
        ld.joint_from_obj({"kind": "mystery"})


# -- rational mark rescaling --------------------------------------------------

def test_rational_mark_grid():
    ints, lcd = ld.lattice.rational_mark_grid([0.0, 0.5, 1.0])
    assert lcd == 2 and ints.tolist() == [0, 1, 2]
    ints, lcd = ld.lattice.rational_mark_grid([1.0, 2.0])
    assert lcd == 1
    with pytest.raises(ld.InvalidLaw):
        ld.lattice.rational_mark_grid([0.0, math.pi])


# -- property: random tables stay normalized through reweighting --------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_table_mass(seed):
    d = random_table(make_rng(seed))
    assert abs(float(d.ps.sum()) - 1.0) < 1e-12
    assert np.all(np.diff(d.ks) > 0)
