"""Exact and asymptotic point probabilities for sums of i.i.d. lattice laws.

The exact value comes from inverting the characteristic function over one
period with the uniform trapezoid rule, which is spectrally accurate here
because the integrand is analytic and periodic.  The asymptotic values are
the central normalization 1/(sigma sqrt(2 pi n)) and its exponentially
tilted (saddle-point) generalization.  A span-2 diagnostic demonstrates why
the central formula needs span 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._policy import POLICY
from .cgf import CgfEvaluator, _solve_tilt_root, solve_tilt
from .errors import (
    MeanMismatch,
    QuadratureUnresolved,
    SpanNotOne,
    TargetOutsideRange,
)
from .lattice import LatticeDistribution, charfn, materialize, moments, span

__all__ = [
    "PointProbability",
    "SpanCounterexampleReport",
    "exact_point_prob",
    "log_exact_point_prob",
    "dp_point_prob",
    "central_local_limit",
    "tilted_local_limit",
    "log_tilted_local_limit",
    "span_counterexample_report",
]

_BASE_NODES = 4096
_MAX_NODES = 1 << 21


@dataclass(frozen=True)
class PointProbability:
    """Exact vs approximate P(sum of n_terms copies = k), with method tags."""

    n_terms: int
    k: int
    exact: float
    approx: float
    exact_method: str
    approx_method: str

    @property
    def ratio(self) -> float:
        return self.approx / self.exact if self.exact > 0 else math.inf


def _fourier_nodes(m: int) -> np.ndarray:
    # one full period, endpoint omitted: the trapezoid rule is then a plain mean
    return -math.pi + 2.0 * math.pi * np.arange(m) / m


def _point_prob_once(dist, n_terms, k, m):
    t = _fourier_nodes(m)
    phi = charfn(dist, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        logphi = np.log(phi.astype(complex))
    w = n_terms * logphi - 1j * k * t
    w[~np.isfinite(w.real)] = -np.inf  # phi == 0 nodes contribute nothing
    shift = float(np.max(w.real))
    val = np.exp(w - shift).mean()
    return shift, val


def _log_point_prob_direct(dist: LatticeDistribution, n_terms: int, k: int) -> float:
    m = max(_BASE_NODES, 16 * n_terms)
    shift, val = _point_prob_once(dist, n_terms, k, m)
    while m <= _MAX_NODES:
        m *= 2
        shift2, val2 = _point_prob_once(dist, n_terms, k, m)
        a = math.exp(shift) * val.real
        b = math.exp(shift2) * val2.real
        shift, val = shift2, val2
        if abs(a - b) <= max(1e-12 * abs(b), 1e-15):
            break
    else:
        raise QuadratureUnresolved(
            f"point probability quadrature did not settle for n={n_terms}, k={k}")
    # the t=0 node pins the max-shift at zero, so val.real is the probability
    # itself; oscillatory cancellation limits direct resolution to ~1e-14
    # absolute, and anything below that counts as unresolved (zero) here
    if abs(val.imag) > 1e-9:
        raise QuadratureUnresolved(
            f"imaginary residue {val.imag:.3g} too large for n={n_terms}, k={k}")
    return -math.inf if val.real <= 1e-13 else shift + math.log(val.real)


def log_exact_point_prob(dist: LatticeDistribution, n_terms: int, k: int,
                         validate: bool = False, method: str = "auto") -> float:
    """log P(Z_1 + ... + Z_{n_terms} = k) by Fourier inversion.

    "direct" inverts the characteristic function as-is; its absolute
    resolution bottoms out near 1e-14, below which it reports -inf.
    "tilted" shifts the law so k sits at the mean, inverts there (an O(1)
    computation), and adds back the exact tilting exponent; that resolves
    exponentially small values at full relative accuracy.  "auto" uses the
    direct route when it can and the tilted route below its floor.
    """
    if n_terms < 1 or k < 0:
        raise ValueError("n_terms must be >= 1 and k >= 0")
    if method not in ("auto", "direct", "tilted"):
        raise ValueError(f"method must be auto/direct/tilted, got {method!r}")
    if method in ("auto", "direct"):
        out = _log_point_prob_direct(dist, n_terms, k)
        if method == "direct" or out > math.log(1e-10):
            if validate and n_terms <= 64 and dist.is_table:
                ref = dp_point_prob(dist, n_terms, k)
                if abs(math.exp(out) - ref) > 1e-10:
                    raise QuadratureUnresolved(
                        f"quadrature {math.exp(out)} and DP {ref} disagree beyond 1e-10")
            return out
    ratio = k / n_terms
    ev = CgfEvaluator(dist)
    lo, hi = ev.range_interval()
    if not (lo < ratio < hi):
        # only the hull corners carry mass outside the open tilt range:
        # every term must sit exactly on the corner atom
        k_lo, k_hi = dist.support_bounds()
        for corner in (k_lo, k_hi):
            if math.isfinite(corner) and k == n_terms * int(corner):
                return n_terms * float(dist.log_pmf(np.asarray([int(corner)]))[0])
        return -math.inf
    ts = solve_tilt(ev, ratio)
    psi_star = ratio * ts.tau - ev.value(ts.tau)
    inner = _log_point_prob_direct(ts.tilted, n_terms, k)
    return -n_terms * psi_star + inner


def exact_point_prob(dist: LatticeDistribution, n_terms: int, k: int,
                     validate: bool = False) -> float:
    """P(sum = k), linear scale. Exponentially small values underflow to 0;
    use :func:`log_exact_point_prob` in that regime."""
    return math.exp(log_exact_point_prob(dist, n_terms, k, validate=validate))


def dp_point_prob(dist: LatticeDistribution, n_terms: int, k: int) -> float:
    """Iterated log-space convolution; the independent cross-check path."""
    t = materialize(dist, POLICY.eps_evaluator)
    ks = t.ks
    lp = t.log_ps
    width = int(ks[-1]) * n_terms + 1
    cur = np.full(width, -np.inf)
    cur[0] = 0.0
    for _ in range(n_terms):
        nxt = np.full(width, -np.inf)
        for kj, lpj in zip(ks, lp):
            kj = int(kj)
            if kj == 0:
                nxt = np.logaddexp(nxt, cur + lpj)
            else:
                nxt[kj:] = np.logaddexp(nxt[kj:], cur[:-kj] + lpj)
        cur = nxt
    if k >= width:
        return 0.0
    return float(np.exp(cur[k]))


def central_local_limit(dist: LatticeDistribution, n_terms: int, k: int) -> float:
    """1 / (sigma sqrt(2 pi n_terms)): the point-mass normalization at the mean.

    Valid only for span-1 laws and k/n_terms equal to the mean.
    """
    sp = span(dist)
    if sp.m != 1:
        raise SpanNotOne(f"central formula needs span 1, got span {sp.m}")
    mom = moments(dist)
    if abs(k / n_terms - mom.mean) > 1e-12 * max(1.0, abs(mom.mean)):
        raise MeanMismatch(
            f"k/n = {k / n_terms} is not the mean {mom.mean}; "
            "use the tilted formula away from the mean")
    return 1.0 / (math.sqrt(mom.variance) * math.sqrt(2.0 * math.pi * n_terms))


def log_tilted_local_limit(dist: LatticeDistribution, n_terms: int, k: int) -> float:
    """log of the saddle-point approximation e^(-n psi*(k/n)) / (sigma* sqrt(2 pi n))."""
    sp = span(dist)
    if sp.m != 1:
        raise SpanNotOne(f"tilted formula needs span 1, got span {sp.m}")
    ratio = k / n_terms
    ev = CgfEvaluator(dist)
    lo, hi = ev.range_interval()
    if not (lo < ratio < hi):
        raise TargetOutsideRange(f"k/n = {ratio} outside the tilt range ({lo}, {hi})")
    tau, _, _ = _solve_tilt_root(ev, ratio)
    psi_star = ratio * tau - ev.value(tau)
    var_tilted = ev.derivatives(tau)[1]
    return (-n_terms * psi_star
            - 0.5 * math.log(var_tilted)
            - 0.5 * math.log(2.0 * math.pi * n_terms))


def tilted_local_limit(dist: LatticeDistribution, n_terms: int, k: int) -> float:
    return math.exp(log_tilted_local_limit(dist, n_terms, k))


@dataclass(frozen=True)
class SpanCounterexampleReport:
    """Exact probability against the span-blind central formula for a span-2 law.

    On the correct parity the ratio tends to 2, on the wrong parity the
    exact probability is identically zero: the central formula double- or
    zero-counts depending on the residue class of k.
    """

    n_terms: int
    k: int
    exact: float
    formula: float
    ratio: float
    parity_ok: bool

    def to_record(self) -> dict:
        return {"n_terms": self.n_terms, "k": self.k, "exact": self.exact,
                "formula": self.formula, "ratio": self.ratio,
                "parity_ok": self.parity_ok}


def span_counterexample_report(dist: LatticeDistribution, n_terms: int,
                               k: int) -> SpanCounterexampleReport:
    sp = span(dist)
    if sp.m != 2:
        raise SpanNotOne(f"diagnostic expects a span-2 law, got span {sp.m}")
    mom = moments(dist)
    formula = 1.0 / (math.sqrt(mom.variance) * math.sqrt(2.0 * math.pi * n_terms))
    parity_ok = (k - n_terms * sp.b) % 2 == 0
    exact = math.exp(log_exact_point_prob(dist, n_terms, k))
    if not parity_ok and exact < 1e-13:
        exact = 0.0  # quadrature noise on an impossible atom
    ratio = exact / formula
    return SpanCounterexampleReport(n_terms=n_terms, k=k, exact=exact,
                                    formula=formula, ratio=ratio,
                                    parity_ok=parity_ok)
