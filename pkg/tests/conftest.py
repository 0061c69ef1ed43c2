"""Shared helpers: random laws, finite differences, brute-force conjugate."""
import math

import numpy as np
import pytest

import latdev as ld


def make_rng(seed=0):
    return np.random.default_rng(seed)


def random_table(rng, max_k=12, min_atoms=2, max_atoms=8):
    """Random finite lattice law with distinct support points."""
    max_atoms = min(max_atoms, max_k + 1)
    n = int(rng.integers(min_atoms, max_atoms + 1))
    ks = np.sort(rng.choice(max_k + 1, size=n, replace=False))
    w = rng.uniform(0.05, 1.0, size=n)
    w = w / w.sum()
    return ld.LatticeDistribution.from_table(list(zip(ks.tolist(), w.tolist())))


def random_span1_table(rng, **kw):
    for _ in range(100):
        d = random_table(rng, **kw)
        if ld.span(d).m == 1:
            return d
    raise AssertionError("could not draw a span-1 table")


def random_joint(rng, max_k=8):
    """Random joint table: random lattice support with 1-2 mark values per k."""
    d = random_table(rng, max_k=max_k, min_atoms=3, max_atoms=6)
    rows = []
    for k, p in zip(d.ks, d.ps):
        if rng.random() < 0.5:
            rows.append((int(k), float(rng.normal()), float(p)))
        else:
            split = rng.uniform(0.2, 0.8)
            y1, y2 = rng.normal(size=2)
            while abs(y1 - y2) < 1e-6:
                y2 = rng.normal()
            rows.append((int(k), float(y1), float(p * split)))
            rows.append((int(k), float(y2), float(p * (1 - split))))
    return ld.JointLaw.from_table(rows)


def fd1(f, x, h=1e-5):
    """Richardson-extrapolated central first difference."""
    def d(hh):
        return (f(x + hh) - f(x - hh)) / (2 * hh)
    return (4.0 * d(h / 2) - d(h)) / 3.0


def brute_conjugate2(joint, x, y, box=6.0, eps=1e-16):
    """Grid search + local refinement for the bivariate conjugate.

    Independent of the solver path: evaluates the transform by direct
    log-sum-exp over the materialized table.
    """
    t = ld.materialize_joint(joint, eps)
    k = t.xs.astype(float)
    yv = t.ys
    lp = t.log_ps

    def value_grid(xis, us):
        e = (xis[:, None, None] * k[None, None, :]
             + us[None, :, None] * yv[None, None, :]
             + lp[None, None, :])
        m = e.max(axis=-1)
        psi = m + np.log(np.exp(e - m[..., None]).sum(axis=-1))
        return x * xis[:, None] + y * us[None, :] - psi

    xis = np.linspace(-box, box, 241)
    us = np.linspace(-box, box, 241)
    for _ in range(3):
        v = value_grid(xis, us)
        i, j = np.unravel_index(np.argmax(v), v.shape)
        best = (xis[i], us[j], v[i, j])
        wx = (xis[-1] - xis[0]) / 20.0
        wu = (us[-1] - us[0]) / 20.0
        xis = np.linspace(best[0] - wx, best[0] + wx, 201)
        us = np.linspace(best[1] - wu, best[1] + wu, 201)
    return best[2]


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def occupancy_unit():
    return ld.JointLaw.occupancy(1.0)


@pytest.fixture
def bose_einstein_half():
    return ld.JointLaw.with_mark(ld.LatticeDistribution.geometric(0.5),
                                 ld.Mark("indicator-zero"))
