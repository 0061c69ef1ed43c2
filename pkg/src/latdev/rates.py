"""Deviation rate functions for conditioned sums of marked lattice pairs.

The conditional mean of the mark, given that the lattice sum sits at ratio
p/q per term, concentrates at a point chi; deviations away from chi decay
exponentially at speed 1/(nq) with rate

    I(y) = psi2*(p/q, y) - psi1*(p/q),

the difference of the bivariate and marginal conjugates.  At moderate
scale the rate is quadratic, y^2 / (2 alpha^2), with alpha^2 the residual
variance of the tilted mark regressed on the tilted lattice variable.  The
two regimes are linked by I''(chi) * alpha^2 = 1, which this module checks
numerically rather than assumes.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._policy import POLICY
from .cgf import (
    CgfEvaluator,
    JointCgfEvaluator,
    _solve_tilt_root,
    conjugate2,
)
from .errors import (
    DegenerateResidual,
    MarkDomainViolation,
    NonConvergence,
    QuadratureUnresolved,
    SpanNotOne,
    ZeroProbabilityEvent,
)
from .lattice import (
    ConditioningSpec,
    JointLaw,
    materialize_joint,
    span,
)
from .locallimit import log_exact_point_prob
from .tilting import CheckedPair, check_pair

__all__ = [
    "RateCurve",
    "MdpResult",
    "ConditionalLaplace",
    "ConsistencyReport",
    "ldp_rate",
    "gibbs_point",
    "mdp_params",
    "bartlett_laplace",
    "mdp_consistency_check",
    "write_rate_csv",
]

_AFFINE_TOL = 1e-14


@dataclass(frozen=True)
class RateCurve:
    """Grid of (y, I(y)) with the concentration point and curvature there."""

    ratio: float
    ys: np.ndarray
    rates: np.ndarray
    gibbs_point: float
    curvature_at_min: float
    mdp_variance: float
    speed: str = "1/(nq)"

    def to_records(self):
        return [(float(y), float(r)) for y, r in zip(self.ys, self.rates)]


@dataclass(frozen=True)
class MdpResult:
    """Quadratic-rate parameters at moderate scale.

    The rate is y^2 / (2 alpha2); admissible speed sequences a_n must keep
    n * a_n * q diverging.  ``centering`` gives the additive factor nq * chi_n,
    re-solving the tilt per n when a per-n law family is supplied.
    """

    ratio: float
    tau: float
    alpha2: float
    chi: float
    speed_constraint: str = "n*a_n*q -> infinity"

    def rate(self, y: float) -> float:
        return y * y / (2.0 * self.alpha2)

    def centering(self, spec: ConditioningSpec,
                  law_for_n: Callable[[int], JointLaw] | None = None) -> float:
        if law_for_n is None:
            return spec.num_terms * self.chi
        joint_n = law_for_n(spec.n)
        xev = CgfEvaluator(joint_n.x_marginal())
        tau_n, _, _ = _solve_tilt_root(xev, self.ratio)
        return spec.num_terms * check_pair(joint_n, tau_n).mean_y

    def to_record(self) -> dict:
        return {"ratio": self.ratio, "tau": self.tau, "alpha2": self.alpha2,
                "chi": self.chi, "speed_constraint": self.speed_constraint}


@dataclass(frozen=True)
class ConditionalLaplace:
    """Scaled conditional log-Laplace values f_n(u) on a u-grid."""

    n: int
    p: int
    q: int
    us: np.ndarray
    values: np.ndarray
    method: str  # "fourier-ratio" or "dp-oracle"


@dataclass(frozen=True)
class ConsistencyReport:
    curvature_at_min: float
    alpha2: float
    product: float
    passed: bool
    skipped: bool = False
    detail: str = ""


def _validated_pair(joint: JointLaw):
    """Span-1 lattice marginal and a full-line mark Laplace domain."""
    xm = joint.x_marginal()
    sp = span(xm)
    if sp.m != 1:
        raise SpanNotOne(
            f"conditioning requires lattice span 1, got span {sp.m}; "
            "the point-probability normalization breaks otherwise")
    if joint.kind == "mark" and not joint.mark.is_bounded:
        xev = CgfEvaluator(xm)
        if math.isfinite(xev.domain[1]):
            raise MarkDomainViolation(
                "identity mark on a law with a half-line Laplace domain: "
                "dom psi_Y must be the whole line")
    return xm


def _affine_fit(cp: CheckedPair):
    slope = cp.cov / cp.var_x if cp.var_x > 0 else 0.0
    intercept = cp.mean_y - slope * cp.mean_x
    return slope, intercept


def default_y_grid(joint: JointLaw, points: int = 201) -> np.ndarray:
    """201 points shrunk 1e-3 * range inside the mark hull (the conjugate
    diverges at the hull boundary)."""
    ev2 = JointCgfEvaluator(joint)
    y_lo, y_hi = ev2.mark_bounds()
    if not math.isfinite(y_hi):
        t = materialize_joint(joint, POLICY.eps_trunc)
        y_hi = float(t.ys.max())
    delta = 1e-3 * (y_hi - y_lo)
    return np.linspace(y_lo + delta, y_hi - delta, points)


def ldp_rate(joint: JointLaw, ratio: float, ys: Sequence[float] | None = None,
             method: str = "auto") -> RateCurve:
    """Rate curve I(y) for the conditioned mark mean at lattice ratio p/q."""
    _validated_pair(joint)
    xev = CgfEvaluator(joint.x_marginal())
    tau, _, _ = _solve_tilt_root(xev, ratio)  # TargetOutsideRange if infeasible
    psi1_star = ratio * tau - xev.value(tau)
    cp = check_pair(joint, tau)
    chi = cp.mean_y

    if ys is None:
        ys = default_y_grid(joint)
    ys = np.asarray(ys, dtype=float)

    if cp.alpha2 <= _AFFINE_TOL:
        # mark affine in the lattice variable: conditioning pins the mean
        slope, intercept = _affine_fit(cp)
        pinned = slope * ratio + intercept
        rates = np.where(np.isclose(ys, pinned, rtol=0, atol=1e-12), 0.0, math.inf)
        return RateCurve(ratio=ratio, ys=ys, rates=rates, gibbs_point=pinned,
                         curvature_at_min=math.inf, mdp_variance=0.0)

    ev2 = JointCgfEvaluator(joint, method=method)
    rates = np.empty(ys.size)
    prev = (tau, 0.0)
    for i, y in enumerate(ys):
        try:
            res = conjugate2(ev2, ratio, float(y), init=prev)
        except NonConvergence as exc:
            raise NonConvergence(
                f"rate evaluation failed at y={float(y)}: {exc}",
                residual=exc.residual, iterate=exc.iterate) from exc
        val = res.value - psi1_star
        if math.isfinite(res.value):
            prev = res.tau
            rates[i] = val if val > 0.0 else (0.0 if val > -1e-9 else val)
        else:
            rates[i] = math.inf
            prev = (tau, 0.0)

    curvature = _curvature_at_min(ev2, ratio, chi, psi1_star,
                                  y_span=float(ys[-1] - ys[0]), warm=(tau, 0.0))
    return RateCurve(ratio=ratio, ys=ys, rates=rates, gibbs_point=chi,
                     curvature_at_min=curvature, mdp_variance=cp.alpha2)


def _curvature_at_min(ev2, ratio, chi, psi1_star, y_span, warm):
    """Five-point central second difference of the rate at its minimum."""
    h = 1e-3 * y_span
    vals = []
    prev = warm
    for dy in (-2.0, -1.0, 0.0, 1.0, 2.0):
        res = conjugate2(ev2, ratio, chi + dy * h, init=prev)
        prev = res.tau if res.tau is not None else warm
        vals.append(res.value - psi1_star)
    v = vals
    return (-v[0] + 16.0 * v[1] - 30.0 * v[2] + 16.0 * v[3] - v[4]) / (12.0 * h * h)


def rate_at(joint: JointLaw, ratio: float, y: float, method: str = "auto") -> float:
    """Single-point rate I(y) without building a whole curve."""
    _validated_pair(joint)
    xev = CgfEvaluator(joint.x_marginal())
    tau, _, _ = _solve_tilt_root(xev, ratio)
    psi1_star = ratio * tau - xev.value(tau)
    cp = check_pair(joint, tau)
    if cp.alpha2 <= _AFFINE_TOL:
        slope, intercept = _affine_fit(cp)
        pinned = slope * ratio + intercept
        return 0.0 if abs(y - pinned) <= 1e-12 else math.inf
    ev2 = JointCgfEvaluator(joint, method=method)
    res = conjugate2(ev2, ratio, y, init=(tau, 0.0))
    val = res.value - psi1_star
    return val if val > 0.0 else (0.0 if val > -1e-9 else val)


def gibbs_point(joint: JointLaw, ratio: float) -> float:
    """Concentration point of the conditioned mark mean: the tilted-mark mean."""
    _validated_pair(joint)
    xev = CgfEvaluator(joint.x_marginal())
    tau, _, _ = _solve_tilt_root(xev, ratio)
    return check_pair(joint, tau).mean_y


def mdp_params(joint: JointLaw, ratio: float) -> MdpResult:
    """Moderate-scale rate parameters: tilt, residual variance, centering point."""
    _validated_pair(joint)
    xev = CgfEvaluator(joint.x_marginal())
    tau, _, _ = _solve_tilt_root(xev, ratio)
    cp = check_pair(joint, tau)
    if cp.alpha2 <= _AFFINE_TOL:
        raise DegenerateResidual(
            "mark is affine in the lattice variable; the moderate-scale "
            "variance vanishes and the quadratic rate is degenerate")
    return MdpResult(ratio=ratio, tau=tau, alpha2=cp.alpha2, chi=cp.mean_y)


def mdp_consistency_check(joint: JointLaw, ratio: float,
                          rel_tol: float = 1e-4) -> ConsistencyReport:
    """Check I''(chi) * alpha^2 = 1: curvature at the rate minimum against
    the inverse moderate-scale variance."""
    try:
        mdp = mdp_params(joint, ratio)
    except DegenerateResidual as exc:
        return ConsistencyReport(math.nan, 0.0, math.nan, passed=False,
                                 skipped=True, detail=str(exc))
    xev = CgfEvaluator(joint.x_marginal())
    tau, _, _ = _solve_tilt_root(xev, ratio)
    psi1_star = ratio * tau - xev.value(tau)
    ev2 = JointCgfEvaluator(joint)
    y_lo, y_hi = ev2.mark_bounds()
    if not math.isfinite(y_hi):
        t = materialize_joint(joint, POLICY.eps_trunc)
        y_hi = float(t.ys.max())
    curv = _curvature_at_min(ev2, ratio, mdp.chi, psi1_star,
                             y_span=y_hi - y_lo, warm=(tau, 0.0))
    product = curv * mdp.alpha2
    return ConsistencyReport(curvature_at_min=curv, alpha2=mdp.alpha2,
                             product=product,
                             passed=abs(product - 1.0) <= rel_tol)


# ---------------------------------------------------------------------------
# Conditional Laplace transform via the Fourier ratio
# ---------------------------------------------------------------------------

_BART_BASE_NODES = 4096
_BART_MAX_NODES = 1 << 20


def _log_ratio_integrals(t_joint, nq, target, us, m):
    """Complex trapezoid values of int e^{-i target t} Phi(t, u)^nq dt / 2pi."""
    ts = -math.pi + 2.0 * math.pi * np.arange(m) / m
    k = t_joint.xs.astype(float)
    y = t_joint.ys
    lp = t_joint.log_ps
    out = []
    phase = np.exp(1j * np.multiply.outer(ts, k))  # (m, atoms)
    for u in us:
        amp = np.exp(lp + u * y)
        phi = phase @ amp
        with np.errstate(divide="ignore", invalid="ignore"):
            w = nq * np.log(phi.astype(complex)) - 1j * target * ts
        w[~np.isfinite(w.real)] = -np.inf
        shift = float(np.max(w.real))
        out.append((shift, np.exp(w - shift).mean()))
    return out


def bartlett_laplace(joint: JointLaw, spec: ConditioningSpec,
                     us: Sequence[float], max_terms: int = 1024) -> ConditionalLaplace:
    """f_n(u) = (1/nq) log E[exp(u T) | S = conditioning value].

    Computed as the log-ratio of two Fourier inversions of the joint
    transform.  Nodes double until the values settle to 1e-12; an
    imaginary residue above 1e-9 fails the realness check.
    """
    nq = spec.num_terms
    if nq > max_terms:
        raise QuadratureUnresolved(
            f"nq={nq} beyond the quadrature cap {max_terms}; raise max_terms "
            "explicitly if the run time is acceptable")
    target = spec.target_sum
    xm = joint.x_marginal()
    if log_exact_point_prob(xm, nq, target) == -math.inf:
        raise ZeroProbabilityEvent(
            f"P(S = {target}) = 0 for nq = {nq}; conditioning is empty")
    t = materialize_joint(joint, POLICY.eps_evaluator)
    us = np.asarray(list(us), dtype=float)
    us_all = np.concatenate(([0.0], us))

    m = max(_BART_BASE_NODES, 16 * nq)
    prev = None
    while m <= _BART_MAX_NODES:
        pairs = _log_ratio_integrals(t, nq, target, us_all, m)
        vals = []
        for shift, v in pairs:
            if abs(v.imag) > 1e-9 * max(abs(v.real), 1e-300):
                raise QuadratureUnresolved(
                    f"imaginary residue {v.imag:.3g} in the Fourier ratio")
            if v.real <= 0.0:
                raise ZeroProbabilityEvent(
                    "Fourier numerator vanished; event unreachable for this u")
            vals.append(shift + math.log(v.real))
        vals = np.asarray(vals)
        f = (vals[1:] - vals[0]) / nq
        if prev is not None and np.max(np.abs(f - prev)) <= 1e-12:
            return ConditionalLaplace(n=spec.n, p=spec.p, q=spec.q, us=us,
                                      values=f, method="fourier-ratio")
        prev = f
        m *= 2
    raise QuadratureUnresolved("Fourier-ratio quadrature did not settle")


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_rate_csv(curve: RateCurve, path: str, meta: dict | None = None) -> None:
    """Atomic CSV write: optional '#'-prefixed metadata line, then y,rate rows
    with 17 significant digits (byte-stable for regression comparison)."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            if meta:
                items = " ".join(f"{k}={_fmt(v)}" for k, v in meta.items())
                fh.write(f"# {items}\n")
            fh.write("y,rate\n")
            for y, r in curve.to_records():
                fh.write(f"{_fmt(y)},{_fmt(r)}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return format(v, ".17g")
    return str(v)
