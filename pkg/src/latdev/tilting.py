"""Exponential changes of measure, returned as fully materialized laws.

Four kernels: the classical mean-shifting tilt of a lattice law, the joint
tilt of a marked pair through its lattice component, the mark-exponential
reweighting of the lattice component, and the re-centered variant of the
latter used at moderate-deviation scale.  Downstream consumers (local
limits, exact DP) want direct pmf access, so nothing here is lazy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._policy import POLICY
from .cgf import CgfEvaluator, TiltSolution, _joint_table_for_eval, solve_tilt
from .errors import DomainViolation
from .lattice import (
    JointLaw,
    LatticeDistribution,
)

__all__ = ["TiltSolution", "CheckedPair", "tilt_lattice", "check_pair",
           "hat_tilt", "mdp_tilt"]


@dataclass(frozen=True)
class CheckedPair:
    """Jointly tilted pair with the regression scalars read off its table.

    ``alpha2`` is the variance of the residual of the linear regression of
    the tilted mark on the tilted lattice variable.
    """

    xi: float
    law: JointLaw
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov: float
    alpha2: float


def tilt_lattice(dist: LatticeDistribution, target: float) -> TiltSolution:
    """Tilt ``dist`` so its mean becomes ``target``.

    The tilted table carries P(k) proportional to exp(k tau) P(k); named
    families stay in family (a tilted Poisson is a Poisson) and are then
    materialized with a tail bound adapted to the tilted law.
    """
    return solve_tilt(CgfEvaluator(dist), target)


def check_pair(joint: JointLaw, xi: float, eps: float | None = None) -> CheckedPair:
    """Reweight a marked pair by exp(k xi - psi_X(xi)).

    The lattice marginal of the result is the classical tilt of X; the
    mark rides along untouched given X = k.
    """
    eps = POLICY.eps_evaluator if eps is None else eps
    xev = CgfEvaluator(joint.x_marginal(), eps=eps)
    lo, hi = xev.domain
    if not (lo < xi < hi):
        raise DomainViolation(f"xi={xi} outside dom psi_X = ({lo}, {hi})")
    t = _joint_table_for_eval(joint, eps, max(2.0, xi + 0.5))
    logw = t.log_ps + xi * t.xs - xev.value(xi)
    s = float(logsumexp(logw))
    deficit = max(0.0, -math.expm1(s))
    tilted = JointLaw("table", xs=t.xs.copy(), ys=t.ys.copy(), log_ps=logw - s,
                      truncated_mass=deficit)
    w = np.exp(tilted.log_ps)
    x = t.xs.astype(float)
    y = t.ys
    mx, my = float(w @ x), float(w @ y)
    cx, cy = x - mx, y - my
    var_x = float(w @ cx**2)
    var_y = float(w @ cy**2)
    cov = float(w @ (cx * cy))
    alpha2 = var_y - (cov * cov / var_x if var_x > 0 else 0.0)
    return CheckedPair(xi=xi, law=tilted, mean_x=mx, mean_y=my,
                       var_x=var_x, var_y=var_y, cov=cov, alpha2=max(0.0, alpha2))


def hat_tilt(joint: JointLaw, u: float, eps: float | None = None) -> LatticeDistribution:
    """Lattice law P(k) proportional to E[exp(u Y); X = k].

    The normalizer is exp(-psi_Y(u)); at u = 0 this is the X-marginal.
    """
    eps = POLICY.eps_evaluator if eps is None else eps
    t = _joint_table_for_eval(joint, eps, _mark_cover(joint, u))
    return _mark_exponential_law(t, u, centering=0.0)


def mdp_tilt(joint: JointLaw, u: float, centering: float, scale: float,
             eps: float | None = None) -> LatticeDistribution:
    """Mark-exponential tilt of the re-centered mark at parameter u / scale.

    Equals ``hat_tilt`` applied to the mark Y - centering; the centering
    value itself is owned by the caller (it is a tilted-mark expectation,
    not something this kernel recomputes).
    """
    if not (scale > 0):
        raise DomainViolation(f"scale must be positive, got {scale!r}")
    eps = POLICY.eps_evaluator if eps is None else eps
    t = _joint_table_for_eval(joint, eps, _mark_cover(joint, u / scale))
    return _mark_exponential_law(t, u / scale, centering=centering)


def _mark_cover(joint: JointLaw, u: float) -> float:
    # an unbounded (identity) mark turns the mark weight into a lattice tilt
    if joint.kind == "mark" and not joint.mark.is_bounded:
        return max(2.0, u + 0.5)
    return 2.0


def _mark_exponential_law(t: JointLaw, u: float, centering: float) -> LatticeDistribution:
    logw = t.log_ps + u * (t.ys - centering)
    log_norm = float(logsumexp(logw))  # psi of the (re-centered) mark
    if not math.isfinite(log_norm):
        raise DomainViolation(f"u={u} outside dom psi of the mark")
    logw = logw - log_norm
    uniq, inv = np.unique(t.xs, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(uniq.size))
    out = np.logaddexp.reduceat(logw[order], starts)
    s = float(logsumexp(out))
    deficit = max(0.0, -math.expm1(s))
    return LatticeDistribution("finite-table", ks=uniq, log_ps=out - s,
                               truncated_mass=deficit, renormalized=deficit > 0.0)
