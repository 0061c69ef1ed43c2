"""Cumulant generating functions, their derivatives and convex conjugates.

Univariate: psi(tau) = log E exp(tau Z) for a lattice law Z, with
derivatives up to order three (tilted mean / variance / third central
moment).  Bivariate: psi(xi, u) = log E exp(xi X + u Y) for a marked pair.

Every named family carries a closed-form fast path; the materialized-table
path is always available and the two are cross-checked in the test suite.
Conjugates are computed by safeguarded Newton solves on the strictly
increasing derivative, never by generic black-box optimization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from ._policy import POLICY, NumericPolicy
from .errors import (
    DegenerateDistribution,
    DomainViolation,
    NonConvergence,
    TargetOutsideRange,
)
from .lattice import (
    JointLaw,
    LatticeDistribution,
    Mark,
    materialize,
    materialize_joint,
    tree_fn,
)

__all__ = [
    "CgfEvaluator",
    "JointCgfEvaluator",
    "TiltSolution",
    "ConjugateResult",
    "DomainReport",
    "solve_tilt",
    "conjugate",
    "conjugate2",
    "domain_probe",
]


def _log_expm1(x: float) -> float:
    """log(e^x - 1) without overflow or cancellation, x > 0."""
    if x > 36.0:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


def _family_domain(dist: LatticeDistribution) -> tuple[float, float]:
    if dist.kind == "geometric":
        return -math.inf, -math.log(dist.rho)
    if dist.kind == "borel":
        return -math.inf, -1.0 - math.log(dist.lam)
    return -math.inf, math.inf


def _table_for_eval(dist: LatticeDistribution, eps: float,
                    tau_cover: float) -> LatticeDistribution:
    """Finite table certified for CGF evaluation on tau <= tau_cover.

    A plain tail bound only certifies the law's own mass; evaluating
    log E e^{tau Z} reweights the tail by e^{tau k}, so the cutoff must be
    the one the *tilted* law needs.  The tilted family stays in family, so
    its own materialization supplies that cutoff.
    """
    if dist.is_table:
        return dist
    base = materialize(dist, eps)
    _, hi_d = _family_domain(dist)
    cover = tau_cover if math.isinf(hi_d) else min(tau_cover, hi_d - 0.1)
    if cover <= 0:
        return base
    f = math.exp(cover)
    if dist.kind == "poisson":
        tilted = LatticeDistribution.poisson(dist.lam * f)
    elif dist.kind == "geometric":
        tilted = LatticeDistribution.geometric(dist.rho * f)
    else:
        tilted = LatticeDistribution.borel(dist.lam * f)
    k_top = int(materialize(tilted, eps).ks[-1])
    if k_top <= int(base.ks[-1]):
        return base
    ks = np.arange(int(base.ks[0]), k_top + 1)
    log_ps = dist.log_pmf(ks)
    keep = log_ps >= math.log(POLICY.prob_floor)
    ks, log_ps = ks[keep], log_ps[keep]
    tail = max(0.0, -math.expm1(float(logsumexp(log_ps))))
    return LatticeDistribution("finite-table", ks=ks, log_ps=log_ps,
                               truncated_mass=tail, renormalized=False)


def _joint_table_for_eval(joint: JointLaw, eps: float,
                          xi_cover: float) -> JointLaw:
    """Joint (k, y, p) table with the lattice component covered up to xi_cover."""
    if joint.is_table:
        return joint
    if joint.kind == "occupancy":
        joint = JointLaw.with_mark(LatticeDistribution.poisson(joint.lam),
                                   Mark("indicator-zero"))
    xt = _table_for_eval(joint.x_dist, eps, xi_cover)
    ys = joint.mark.apply(xt.ks)
    return JointLaw("table", xs=xt.ks.copy(), ys=ys, log_ps=xt.log_ps.copy(),
                    truncated_mass=xt.truncated_mass)


# ---------------------------------------------------------------------------
# Univariate evaluator
# ---------------------------------------------------------------------------

class CgfEvaluator:
    """psi and its first three derivatives on a certified domain.

    ``method`` selects "auto" (closed form when the law is a named family),
    "closed-form" (refuse otherwise) or "table" (force the materialized
    path; used by two-path agreement tests).
    """

    def __init__(self, dist: LatticeDistribution, method: str = "auto",
                 eps: float | None = None, tau_cover: float = 2.0):
        self.dist = dist
        eps = POLICY.eps_evaluator if eps is None else eps
        if method == "closed-form" and dist.is_table:
            raise DomainViolation("no closed form for an explicit table")
        self._closed = dist.kind != "finite-table" and method != "table"
        self._table = None if self._closed else _table_for_eval(dist, eps, tau_cover)
        if self._closed:
            if dist.kind == "poisson":
                self.domain = (-math.inf, math.inf)
            elif dist.kind == "geometric":
                self.domain = (-math.inf, -math.log(dist.rho))
            else:  # borel: lam * e^tau <= 1/e
                self.domain = (-math.inf, -1.0 - math.log(dist.lam))
        else:
            self.domain = (-math.inf, math.inf)
            if self._table.ks.size == 1:
                raise DegenerateDistribution(
                    "CGF of a one-point law is linear; transforms are degenerate")

    # -- domain helpers -------------------------------------------------

    def _check(self, tau: float, interior: bool = False):
        lo, hi = self.domain
        ok = lo < tau < hi or (not interior and tau == hi and self.dist.kind == "borel")
        if not ok:
            raise DomainViolation(
                f"tau={tau} outside certified domain ({lo}, {hi}) for {self.dist!r}")

    def support_hull(self) -> tuple[float, float]:
        lo, hi = self.dist.support_bounds()
        return float(lo), float(hi)

    def range_interval(self) -> tuple[float, float]:
        """Interior of the range of psi' (the attainable tilt targets)."""
        if self._closed:
            if self.dist.kind == "poisson":
                return 0.0, math.inf
            if self.dist.kind == "geometric":
                return 0.0, math.inf
            return 1.0, math.inf  # borel: psi' = 1/(1-T) > 1
        ks = self._table.ks
        return float(ks[0]), float(ks[-1])

    # -- evaluation -----------------------------------------------------

    def value(self, tau: float) -> float:
        """psi(tau); exact 0 at tau = 0."""
        self._check(tau)
        if tau == 0.0:
            return 0.0
        if self._closed:
            d = self.dist
            if d.kind == "poisson":
                return d.lam * math.expm1(tau)
            if d.kind == "geometric":
                return math.log1p(-d.rho) - math.log1p(-d.rho * math.exp(tau))
            z = d.lam * math.exp(tau)
            return math.log(tree_fn(z)) - math.log(tree_fn(d.lam))
        t = self._table
        return float(logsumexp(tau * t.ks + t.log_ps))

    def derivatives(self, tau: float) -> tuple[float, float, float]:
        """(psi', psi'', psi''') = tilted mean, variance, third central moment."""
        self._check(tau, interior=True)
        if self._closed:
            d = self.dist
            if d.kind == "poisson":
                v = d.lam * math.exp(tau)
                return v, v, v
            if d.kind == "geometric":
                s = d.rho * math.exp(tau)
                om = 1.0 - s
                return s / om, s / om**2, s * (1.0 + s) / om**3
            z = d.lam * math.exp(tau)
            T = float(tree_fn(z))
            om = 1.0 - T
            return 1.0 / om, T / om**3, T * (1.0 + 2.0 * T) / om**5
        t = self._table
        logw = tau * t.ks + t.log_ps
        logw -= logsumexp(logw)
        w = np.exp(logw)
        ks = t.ks.astype(float)
        m = float(w @ ks)
        c = ks - m
        return m, float(w @ c**2), float(w @ c**3)

    def d1(self, tau: float) -> float:
        return self.derivatives(tau)[0]

    def mean(self) -> float:
        return self.d1(0.0)


# ---------------------------------------------------------------------------
# Tilt solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiltSolution:
    """Solved tilt parameter and the reweighted law it induces."""

    tau: float
    target: float
    achieved: float
    iterations: int
    converged: bool
    source: LatticeDistribution
    tilted: LatticeDistribution


def _solve_tilt_root(ev: CgfEvaluator, target: float,
                     policy: NumericPolicy = POLICY) -> tuple[float, float, int]:
    """Newton with a bisection safeguard on psi'(tau) = target.

    Returns (tau, achieved, iterations).  The bracket where psi' - target
    changes sign is grown geometrically from 0 toward the domain ends;
    hitting an end without a sign change means the target is outside the
    range of psi'.
    """
    lo_d, hi_d = ev.domain
    tol = policy.newton_rtol * max(1.0, abs(target))

    t0 = 0.0 if 0.0 < hi_d else hi_d - 1.0

    def deriv(t):
        try:
            return ev.d1(t)
        except (OverflowError, FloatingPointError):
            return math.inf

    f0 = deriv(t0) - target
    if abs(f0) <= tol:
        return t0, f0 + target, 0
    if f0 < 0:
        # grow upward toward hi_d
        lo, flo = t0, f0
        hi = t0
        step = 1.0
        for _ in range(200):
            hi = hi + step if math.isinf(hi_d) else hi_d - 0.5 * (hi_d - hi)
            step *= 2.0
            fhi = deriv(hi) - target
            if fhi >= 0 or math.isnan(fhi):
                break
            lo, flo = hi, fhi
            if not math.isinf(hi_d) and hi_d - hi < 1e-14 * max(1.0, abs(hi_d)):
                raise TargetOutsideRange(
                    f"target {target} not attained: psi' reaches only {fhi + target} "
                    f"near the domain boundary {hi_d}")
        else:
            raise TargetOutsideRange(f"target {target} beyond the range of psi'")
        if math.isnan(fhi):
            raise TargetOutsideRange(f"target {target} beyond the range of psi'")
    else:
        hi = t0
        lo = t0
        step = 1.0
        for _ in range(200):
            lo = lo - step
            step *= 2.0
            flo = deriv(lo) - target
            if flo <= 0:
                break
        else:
            raise TargetOutsideRange(f"target {target} below the range of psi'")

    # safeguarded Newton inside [lo, hi]
    tau = 0.5 * (lo + hi)
    for it in range(1, policy.max_iterations + 1):
        d1, d2, _ = ev.derivatives(tau)
        r = d1 - target
        if abs(r) <= tol:
            return tau, d1, it
        if r > 0:
            hi = tau
        else:
            lo = tau
        step_ok = d2 > 0 and math.isfinite(d2) and math.isfinite(r)
        nxt = tau - r / d2 if step_ok else math.nan
        tau = nxt if (math.isfinite(nxt) and lo < nxt < hi) else 0.5 * (lo + hi)
    d1 = ev.d1(tau)
    if abs(d1 - target) <= 100 * tol:
        return tau, d1, policy.max_iterations
    raise NonConvergence(f"tilt solve stalled at residual {d1 - target}",
                         residual=d1 - target, iterate=tau)


def _tilted_law(dist: LatticeDistribution, tau: float, psi_tau: float,
                eps: float) -> LatticeDistribution:
    """Reweight by exp(k tau - psi(tau)); named families map within family."""
    if dist.kind == "poisson":
        return materialize(LatticeDistribution.poisson(dist.lam * math.exp(tau)), eps)
    if dist.kind == "geometric":
        return materialize(LatticeDistribution.geometric(dist.rho * math.exp(tau)), eps)
    if dist.kind == "borel":
        return materialize(LatticeDistribution.borel(dist.lam * math.exp(tau)), eps)
    logq = dist.log_ps + tau * dist.ks - psi_tau
    s = float(logsumexp(logq))
    deficit = max(0.0, -math.expm1(s))
    return LatticeDistribution("finite-table", ks=dist.ks.copy(), log_ps=logq - s,
                               truncated_mass=deficit, renormalized=deficit > 0.0)


def solve_tilt(ev: CgfEvaluator, target: float,
               policy: NumericPolicy = POLICY) -> TiltSolution:
    """Unique tau with psi'(tau) = target, plus the tilted law it induces."""
    lo_r, hi_r = ev.range_interval()
    if not (lo_r < target < hi_r):
        raise TargetOutsideRange(
            f"target {target} outside the open range ({lo_r}, {hi_r}) of psi'")
    tau, achieved, its = _solve_tilt_root(ev, target, policy)
    source = ev.dist if ev._closed else ev._table
    tilted = _tilted_law(source, tau, ev.value(tau), POLICY.eps_evaluator)
    return TiltSolution(tau=tau, target=target, achieved=achieved, iterations=its,
                        converged=True, source=source, tilted=tilted)


# ---------------------------------------------------------------------------
# Conjugates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConjugateResult:
    """Value of the convex conjugate at a point, with the maximizing tilt."""

    x: tuple
    value: float
    tau: tuple | None
    converged: bool
    iterations: int

    def to_record(self) -> dict:
        return {"x": list(self.x), "value": self.value,
                "tau": None if self.tau is None else list(self.tau),
                "converged": self.converged, "iterations": self.iterations}


def _boundary_limit(ev: CgfEvaluator, x: float, upward: bool,
                    policy: NumericPolicy = POLICY) -> float:
    """sup of x*tau - psi(tau) chased geometrically toward a domain end.

    Capped: values past the policy cap are declared +inf.
    """
    lo_d, hi_d = ev.domain
    t = 0.0 if lo_d < 0.0 < hi_d else hi_d - 1.0
    g_prev = x * t - ev.value(t)
    for j in range(1, 200):
        if upward:
            t = (hi_d - (hi_d - t) * 0.5) if math.isfinite(hi_d) else max(1.0, 2.0 * t)
        else:
            t = min(-1.0, 2.0 * t)
        try:
            g = x * t - ev.value(t)
        except (DomainViolation, OverflowError):
            break
        if g > policy.conjugate_cap:
            return math.inf
        if abs(g - g_prev) <= 1e-12 * max(1.0, abs(g)):
            return g
        g_prev = g
    return g_prev


def conjugate(ev: CgfEvaluator, x: float,
              policy: NumericPolicy = POLICY) -> ConjugateResult:
    """Fenchel-Legendre transform of psi at x; +inf outside the support hull."""
    k_lo, k_hi = ev.support_hull()
    if x < k_lo or x > k_hi:
        return ConjugateResult((x,), math.inf, None, True, 0)
    lo_r, hi_r = ev.range_interval()
    if lo_r < x < hi_r:
        try:
            tau, achieved, its = _solve_tilt_root(ev, x, policy)
        except TargetOutsideRange:
            pass
        else:
            return ConjugateResult((x,), x * tau - ev.value(tau), (tau,), True, its)
    # hull boundary, or (defensively) a saturating non-steep direction
    val = _boundary_limit(ev, x, upward=x > ev.mean(), policy=policy)
    return ConjugateResult((x,), val, None, True, 0)


# ---------------------------------------------------------------------------
# Bivariate evaluator
# ---------------------------------------------------------------------------

class JointCgfEvaluator:
    """psi(xi, u) = log E exp(xi X + u Y) with gradient, Hessian, third tensor."""

    def __init__(self, joint: JointLaw, method: str = "auto",
                 eps: float | None = None, xi_cover: float = 2.0):
        self.joint = joint
        eps = POLICY.eps_evaluator if eps is None else eps
        self._occ = joint.kind == "occupancy" and method != "table"
        if method == "closed-form" and not self._occ:
            raise DomainViolation("closed form only available for the occupancy family")
        if self._occ:
            self.lam = joint.lam
            self._t = None
            self._xi_domain = (-math.inf, math.inf)
            self._coupled = False
        else:
            self._t = _joint_table_for_eval(joint, eps, xi_cover)
            self._xk = self._t.xs.astype(float)
            self._yv = self._t.ys
            self._lp = self._t.log_ps
            # the certified domain comes from the pre-truncation law
            if joint.kind == "mark":
                src = CgfEvaluator(joint.x_dist, eps=eps) if not joint.x_dist.is_table \
                    else None
                self._xi_domain = src.domain if src else (-math.inf, math.inf)
                self._coupled = joint.mark.name == "identity" and src is not None
            else:
                self._xi_domain = (-math.inf, math.inf)
                self._coupled = False

    def domain_contains(self, xi: float, u: float) -> bool:
        lo, hi = self._xi_domain
        if not (lo < xi < hi):
            return False
        if self._coupled and not (lo < xi + u < hi):
            return False
        return True

    def _check(self, xi, u):
        if not self.domain_contains(xi, u):
            raise DomainViolation(f"(xi, u)=({xi}, {u}) outside the certified domain")

    def mark_bounds(self) -> tuple[float, float]:
        if self._occ:
            return 0.0, 1.0
        return float(self._yv.min()), float(self._yv.max())

    def x_hull(self) -> tuple[float, float]:
        if self._occ:
            return 0.0, math.inf
        return float(self._xk.min()), float(self._xk.max())

    # -- occupancy closed form -------------------------------------------
    # psi = -lam + log G with G = e^(lam e^xi) - 1 + e^u; everything below
    # is expressed through the two mass ratios rA = a A / G and rB = e^u / G
    # (a = lam e^xi, A = e^a), evaluated in log space so xi can be large.

    def _occ_ratios(self, xi: float, u: float):
        a = self.lam * math.exp(xi)
        log_a = math.log(self.lam) + xi
        logG = np.logaddexp(_log_expm1(a) if a > 0 else -math.inf, u)
        rA = math.exp(log_a + a - logG)
        rB = math.exp(u - logG)
        return a, float(logG), rA, rB

    def value(self, xi: float, u: float) -> float:
        self._check(xi, u)
        if self._occ:
            if xi == 0.0 and u == 0.0:
                return 0.0
            a, logG, _, _ = self._occ_ratios(xi, u)
            return -self.lam + logG
        return float(logsumexp(xi * self._xk + u * self._yv + self._lp))

    def gradient(self, xi: float, u: float) -> np.ndarray:
        self._check(xi, u)
        if self._occ:
            _, _, rA, rB = self._occ_ratios(xi, u)
            return np.array([rA, rB])
        w, x, y = self._tilted(xi, u)
        return np.array([float(w @ x), float(w @ y)])

    def hessian(self, xi: float, u: float) -> np.ndarray:
        self._check(xi, u)
        if self._occ:
            a, _, rA, rB = self._occ_ratios(xi, u)
            h_xx = rA * (1.0 + a) - rA * rA
            h_uu = rB - rB * rB
            h_xu = -rA * rB
            return np.array([[h_xx, h_xu], [h_xu, h_uu]])
        w, x, y = self._tilted(xi, u)
        cx = x - float(w @ x)
        cy = y - float(w @ y)
        h_xx = float(w @ cx**2)
        h_uu = float(w @ cy**2)
        h_xu = float(w @ (cx * cy))
        return np.array([[h_xx, h_xu], [h_xu, h_uu]])

    def third_tensor(self, xi: float, u: float) -> np.ndarray:
        """Symmetric (2,2,2) array of third partial derivatives."""
        self._check(xi, u)
        if self._occ:
            a, _, rA, rB = self._occ_ratios(xi, u)
            t_xxx = rA * (1.0 + 3.0 * a + a * a) - 3.0 * rA * rA * (1.0 + a) + 2.0 * rA**3
            t_xxu = -rA * (1.0 + a) * rB + 2.0 * rA * rA * rB
            t_xuu = rA * rB * (2.0 * rB - 1.0)
            t_uuu = rB - 3.0 * rB * rB + 2.0 * rB**3
        else:
            w, x, y = self._tilted(xi, u)
            cx = x - float(w @ x)
            cy = y - float(w @ y)
            t_xxx = float(w @ cx**3)
            t_xxu = float(w @ (cx * cx * cy))
            t_xuu = float(w @ (cx * cy * cy))
            t_uuu = float(w @ cy**3)
        out = np.empty((2, 2, 2))
        out[0, 0, 0] = t_xxx
        out[0, 0, 1] = out[0, 1, 0] = out[1, 0, 0] = t_xxu
        out[0, 1, 1] = out[1, 0, 1] = out[1, 1, 0] = t_xuu
        out[1, 1, 1] = t_uuu
        return out

    def _tilted(self, xi: float, u: float):
        logw = xi * self._xk + u * self._yv + self._lp
        logw -= logsumexp(logw)
        return np.exp(logw), self._xk, self._yv

    def suggest_start(self, x: float, y: float):
        """Stationary point computed by scalar reduction where the mark allows.

        For a two-valued mark the gradient system decouples: the mark
        coordinate only moves mass between the two level sets, so the
        stationary tilt solves one monotone scalar equation in xi, and u
        follows in closed form.  Returns (xi, u), the string "infeasible"
        when the reduction certifies (x, y) outside the support hull, or
        None when no reduction applies.
        """
        if self._occ:
            return self._occ_start(x, y)
        return self._two_level_start(x, y)

    def _occ_start(self, x: float, y: float):
        # all the y-mass sits on the lattice atom 0, so stationarity
        # collapses to a / (1 - e^-a) = x / (1 - y) with a = lam e^xi;
        # a right-hand side <= 1 certifies (x, y) outside the hull
        # (the model forces y >= 1 - x)
        if not (0.0 < y < 1.0) or x <= 0.0:
            return None
        c = x / (1.0 - y)
        if c <= 1.0 + 1e-15:
            return "infeasible"
        a = c  # a/(1-e^-a) ~ a for large a
        for _ in range(80):
            ema = math.exp(-a)
            g = a / (1.0 - ema) - c
            if abs(g) <= 1e-12 * c:
                break
            gp = ((1.0 - ema) - a * ema) / (1.0 - ema) ** 2
            step = g / gp
            a = a - step if a - step > 0 else 0.5 * a
        xi = math.log(a / self.lam)
        u = _log_expm1(a) + math.log(y / (1.0 - y))
        return (xi, u)

    def _two_level_start(self, x: float, y: float):
        vals = np.unique(self._yv)
        if vals.size != 2:
            return None
        v0, v1 = float(vals[0]), float(vals[1])
        m1 = (y - v0) / (v1 - v0)
        if not (0.0 < m1 < 1.0):
            return "infeasible" if m1 <= 0.0 or m1 >= 1.0 else None
        in1 = self._yv == v1
        k1, lp1 = self._xk[in1], self._lp[in1]
        k0, lp0 = self._xk[~in1], self._lp[~in1]

        def mixed_mean_var(xi):
            stats = []
            for kk, lp in ((k1, lp1), (k0, lp0)):
                lw = lp + xi * kk
                lw = lw - logsumexp(lw)
                w = np.exp(lw)
                mm = float(w @ kk)
                stats.append((mm, float(w @ (kk - mm) ** 2)))
            (m_a, v_a), (m_b, v_b) = stats
            return (m1 * m_a + (1.0 - m1) * m_b,
                    m1 * v_a + (1.0 - m1) * v_b)

        feas_lo = m1 * float(k1.min()) + (1.0 - m1) * float(k0.min())
        feas_hi = m1 * float(k1.max()) + (1.0 - m1) * float(k0.max())
        if not (feas_lo < x < feas_hi):
            return "infeasible"
        lo_d, hi_d = self._xi_domain
        xi, lo, hi = 0.0, -math.inf, math.inf
        if not (lo_d < xi < hi_d):
            xi = hi_d - 1.0
        for _ in range(120):
            mm, vv = mixed_mean_var(xi)
            g = mm - x
            if abs(g) <= 1e-11 * max(1.0, abs(x)):
                break
            if g > 0:
                hi = xi
            else:
                lo = xi
            nxt = xi - g / vv if vv > 0 else math.nan
            if not (math.isfinite(nxt) and lo < nxt < hi and lo_d < nxt < hi_d):
                if math.isinf(lo):
                    nxt = xi - max(1.0, 2.0 * abs(xi))
                elif math.isinf(hi):
                    nxt = (xi + max(1.0, 2.0 * abs(xi))) if math.isinf(hi_d) \
                        else hi_d - 0.5 * (hi_d - xi)
                else:
                    nxt = 0.5 * (lo + hi)
            xi = nxt
        log_z1 = float(logsumexp(lp1 + xi * k1))
        log_z0 = float(logsumexp(lp0 + xi * k0))
        u = (math.log(m1 / (1.0 - m1)) - log_z1 + log_z0) / (v1 - v0)
        return (xi, u)


def conjugate2(ev2: JointCgfEvaluator, x: float, y: float,
               init: tuple[float, float] | None = None,
               policy: NumericPolicy = POLICY) -> ConjugateResult:
    """Bivariate conjugate sup [xi x + u y - psi(xi, u)].

    Damped Newton on the gradient equation, warm-started at the marginal
    tilt of X (u = 0), with a monotone coordinate-ascent fallback.  Points
    outside the closure of the joint support hull give +inf; divergence is
    detected through the objective passing the policy cap.
    """
    y_lo, y_hi = ev2.mark_bounds()
    x_lo, x_hi = ev2.x_hull()
    # hull-boundary values are attainable only along a diverging tilt and are
    # reported as +inf sentinels together with genuinely exterior points
    if y <= y_lo or y >= y_hi or x <= x_lo or x >= x_hi:
        return ConjugateResult((x, y), math.inf, None, True, 0)

    suggestion = ev2.suggest_start(x, y)
    if suggestion == "infeasible":
        return ConjugateResult((x, y), math.inf, None, True, 0)
    if suggestion is not None:
        # the reduction is exact where it applies; prefer it over warm starts
        z = np.array(suggestion, dtype=float)
    elif init is None:
        xev = CgfEvaluator(ev2.joint.x_marginal())
        try:
            xi0, _, _ = _solve_tilt_root(xev, x, policy)
        except TargetOutsideRange:
            return ConjugateResult((x, y), math.inf, None, True, 0)
        z = np.array([xi0, 0.0])
    else:
        z = np.array(init, dtype=float)
        if not ev2.domain_contains(*z):
            raise DomainViolation(f"init {tuple(z)} outside the certified domain")

    target = np.array([x, y])
    tol = 1e-10 * max(1.0, abs(x), abs(y))

    def residual(zz):
        return ev2.gradient(*zz) - target

    def objective(zz):
        return x * zz[0] + y * zz[1] - ev2.value(*zz)

    r = residual(z)
    it = 0
    newton_budget = policy.max_iterations // 2
    stalled = False
    while it < newton_budget and not stalled:
        it += 1
        nr = float(np.hypot(*r))
        if nr <= tol:
            return ConjugateResult((x, y), float(objective(z)), tuple(z), True, it)
        H = ev2.hessian(*z)
        if not np.all(np.isfinite(H)):
            break
        # Levenberg damping: grow mu until a residual-reducing step appears
        mu = 0.0
        trace = H[0, 0] + H[1, 1]
        moved = False
        for _ in range(20):
            h00, h11 = H[0, 0] + mu, H[1, 1] + mu
            det = h00 * h11 - H[0, 1] ** 2
            if det > 1e-300:
                step = np.array([h11 * r[0] - H[0, 1] * r[1],
                                 h00 * r[1] - H[0, 1] * r[0]]) / det
                s = 1.0
                while s > 1e-8:
                    zn = z - s * step
                    if ev2.domain_contains(*zn):
                        rn = residual(zn)
                        if float(np.hypot(*rn)) < nr:
                            z, r = zn, rn
                            moved = True
                            break
                    s *= 0.5
                if moved:
                    break
            mu = max(1e-10 * trace, 10.0 * mu)
        stalled = not moved
        if objective(z) > policy.conjugate_cap:
            return ConjugateResult((x, y), math.inf, tuple(z), True, it)

    # monotone coordinate ascent on the concave inner objective
    while it < policy.max_iterations:
        it += 1
        z = _coordinate_sweep(ev2, z, target, policy)
        r = residual(z)
        if float(np.hypot(*r)) <= tol:
            return ConjugateResult((x, y), float(objective(z)), tuple(z), True, it)
        if objective(z) > policy.conjugate_cap or not np.all(np.isfinite(z)):
            return ConjugateResult((x, y), math.inf, tuple(z), True, it)
    raise NonConvergence(
        f"bivariate conjugate did not converge at (x, y)=({x}, {y})",
        residual=float(np.hypot(*residual(z))), iterate=tuple(z))


def _coordinate_sweep(ev2, z, target, policy):
    """One xi-then-u sweep of scalar safeguarded Newton solves."""
    z = z.copy()
    for axis in (0, 1):
        lo, hi = -math.inf, math.inf
        t = z[axis]
        for _ in range(60):
            g = ev2.gradient(*z)[axis] - target[axis]
            if abs(g) <= 1e-12 * max(1.0, abs(target[axis])):
                break
            if g > 0:
                hi = t
            else:
                lo = t
            h = ev2.hessian(*z)[axis, axis]
            nxt = t - g / h if h > 0 else math.nan
            if not (math.isfinite(nxt) and lo < nxt < hi):
                if math.isinf(lo):
                    nxt = t - max(1.0, 2.0 * abs(t))
                elif math.isinf(hi):
                    nxt = t + max(1.0, 2.0 * abs(t))
                else:
                    nxt = 0.5 * (lo + hi)
            cand = z.copy()
            cand[axis] = nxt
            if not ev2.domain_contains(*cand):
                nxt = 0.5 * (t + nxt)  # pull back toward the previous iterate
                cand[axis] = nxt
                if not ev2.domain_contains(*cand):
                    break
            t = nxt
            z[axis] = t
    return z


# ---------------------------------------------------------------------------
# Domain probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainReport:
    domain: tuple[float, float]
    steep: bool | None
    detail: str


def domain_probe(ev: CgfEvaluator) -> DomainReport:
    """Report the certified domain and whether psi' blows up at its ends.

    Finite tables (and any law with a full-line domain) are steep
    vacuously.  A finite end is probed along a geometric approach; the
    report is inconclusive when the gradient grows monotonically but has
    not passed 1e6 by the last probe point.
    """
    lo, hi = ev.domain
    if math.isinf(hi) and math.isinf(lo):
        return DomainReport((lo, hi), True, "no finite boundary; steep vacuously")
    # dom psi always contains the negative half-line, so only hi can be finite
    t0 = min(0.0, hi - 1.0)
    vals = []
    for j in range(1, 49):
        t = hi - (hi - t0) * 2.0**-j
        try:
            vals.append(ev.d1(t))
        except (DomainViolation, OverflowError):
            break
    if len(vals) < 4:
        return DomainReport((lo, hi), None, "could not sample near the boundary")
    diffs = np.diff(vals)
    if np.all(diffs > 0) and vals[-1] > 1e6:
        return DomainReport((lo, hi), True,
                            f"gradient grows monotonically to {vals[-1]:.3g}")
    if np.all(diffs > 0):
        return DomainReport((lo, hi), None,
                            f"monotone growth but only reached {vals[-1]:.3g}; inconclusive")
    return DomainReport((lo, hi), False, "gradient not monotone toward the boundary")
