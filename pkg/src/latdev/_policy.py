"""Central numeric policy.

All solver tolerances live in one frozen record so that test thresholds
are reproducible and greppable rather than scattered magic numbers.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NumericPolicy:
    # Newton residual for scalar tilt solves: |psi'(tau) - target| <= rtol * max(1, |target|)
    newton_rtol: float = 1e-11
    max_iterations: int = 200
    # central finite-difference step used by validation checks
    fd_step: float = 1e-5
    # conjugate value beyond which a divergent supremum is declared +inf
    conjugate_cap: float = 1e8
    # default tail mass bound when materializing closed-form families
    eps_trunc: float = 1e-12
    # tighter bound used by CGF table evaluators (two-path agreement tests)
    eps_evaluator: float = 1e-16
    # atoms below this are dropped into truncation mass (denormal guard)
    prob_floor: float = 1e-300
    # finite-table mass must match 1 this closely at construction
    mass_tol: float = 1e-12


POLICY = NumericPolicy()
