"""Named models and figure-data emission.

Four presets cover the combinatorial applications: the occupancy problem
(Poisson law, empty-cell indicator mark), Bose-Einstein allocation
(geometric law), total-progeny conditioning for branching processes
(offset conditioning S = n - 1), and the resampling-count model (Poisson
multiplicities times a finite weight table).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._policy import POLICY
from .errors import InvalidLaw, MarkDomainViolation
from .lattice import (
    ConditioningSpec,
    JointLaw,
    LatticeDistribution,
    Mark,
    materialize,
)
from .rates import default_y_grid, ldp_rate, mdp_params, write_rate_csv

__all__ = ["Preset", "ConditioningTemplate", "FigureJob", "preset_expand",
           "figure_emit", "PRESET_NAMES"]

PRESET_NAMES = ("occupancy", "bose-einstein", "branching", "bootstrap-count")


@dataclass(frozen=True)
class Preset:
    """Named joint-law family with its parameters.

    ``lam`` feeds the Poisson presets, ``rho`` the geometric one; ``mark``
    overrides the default mark where the model allows a choice;
    ``weights`` is the (value, prob) table of the bootstrap weight law.
    """

    name: str
    lam: float = 1.0
    rho: float = 0.5
    mark: Mark | None = None
    weights: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise InvalidLaw(f"unknown preset {self.name!r}; expected {PRESET_NAMES}")


@dataclass(frozen=True)
class ConditioningTemplate:
    """Fills in the parts of the conditioning the preset pins down."""

    p: int | None = None
    q: int | None = None
    offset: int = 0

    def spec(self, n: int, p: int | None = None, q: int | None = None) -> ConditioningSpec:
        pp = self.p if self.p is not None else p
        qq = self.q if self.q is not None else q
        if pp is None or qq is None:
            raise InvalidLaw("conditioning needs p and q (preset leaves them free)")
        return ConditioningSpec(p=pp, q=qq, n=n, offset=self.offset)


def preset_expand(preset: Preset) -> tuple[JointLaw, ConditioningTemplate]:
    if preset.name == "occupancy":
        joint = JointLaw.occupancy(preset.lam)
        if preset.mark is not None and preset.mark.name != "indicator-zero":
            joint = JointLaw.with_mark(LatticeDistribution.poisson(preset.lam),
                                       preset.mark)
        return joint, ConditioningTemplate()

    if preset.name == "bose-einstein":
        mark = preset.mark if preset.mark is not None else Mark("indicator-zero")
        if not mark.is_bounded:
            raise MarkDomainViolation(
                "geometric preset needs a mark with a full-line Laplace domain; "
                "an unbounded mark inherits the geometric law's one-sided domain")
        return (JointLaw.with_mark(LatticeDistribution.geometric(preset.rho), mark),
                ConditioningTemplate())

    if preset.name == "branching":
        # critical offspring mean: conditioning S_n = n - 1 pins total progeny n
        mark = preset.mark if preset.mark is not None else Mark("indicator-eq", at=3)
        return (JointLaw.with_mark(LatticeDistribution.poisson(preset.lam), mark),
                ConditioningTemplate(p=1, q=1, offset=1))

    # bootstrap-count: pair (X, X * V) with V an independent finite weight law
    weights = preset.weights if preset.weights is not None else ((1.0, 1.0),)
    wsum = math.fsum(p for _, p in weights)
    if abs(wsum - 1.0) > POLICY.mass_tol:
        raise InvalidLaw(f"bootstrap weight table mass {wsum} != 1")
    x_table = materialize(LatticeDistribution.poisson(preset.lam), POLICY.eps_trunc)
    rows: dict[tuple[int, float], float] = {}
    for k, pk in zip(x_table.ks, x_table.ps):
        for v, pv in weights:
            key = (int(k), float(int(k) * v))
            rows[key] = rows.get(key, 0.0) + float(pk) * float(pv)
    joint = JointLaw.from_table([(k, y, p) for (k, y), p in rows.items()],
                                extra_truncated=x_table.truncated_mass)
    return joint, ConditioningTemplate()


@dataclass(frozen=True)
class FigureJob:
    """Rate-curve emission job: one CSV per conditioning ratio."""

    preset: Preset
    ratios: tuple[float, ...] = (0.4, 1.0, 3.0)
    points: int = 201
    out_dir: str = "."
    y_grid: tuple[float, ...] | None = None


def figure_emit(job: FigureJob) -> list[str]:
    """Emit one (y, rate) CSV per ratio, with a metadata header line.

    Output is byte-stable for identical jobs: fixed grid policy, fixed
    17-significant-digit formatting, atomic writes.
    """
    joint, _ = preset_expand(job.preset)
    ys = np.asarray(job.y_grid, dtype=float) if job.y_grid is not None \
        else default_y_grid(joint, points=job.points)
    paths = []
    for ratio in job.ratios:
        curve = ldp_rate(joint, ratio, ys=ys)
        mdp = mdp_params(joint, ratio)
        name = f"rate_{job.preset.name}_lambda{job.preset.lam:g}_ratio{ratio:g}.csv"
        path = f"{job.out_dir.rstrip('/')}/{name}"
        meta = {
            "preset": job.preset.name,
            "lambda": job.preset.lam,
            "ratio": ratio,
            "chi": curve.gibbs_point,
            "alpha2": mdp.alpha2,
            "grid": f"linspace+-1e-3*range,n={ys.size}",
        }
        write_rate_csv(curve, path, meta=meta)
        paths.append(path)
    return paths
