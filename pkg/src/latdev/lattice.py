"""Discrete laws on the non-negative integers and marked pairs (X, Y).

A :class:`LatticeDistribution` is either an explicit finite table or one of
three closed-form families (Poisson, geometric, Borel).  A :class:`JointLaw`
pairs the lattice variable with a real mark: an explicit (k, y, p) table, a
deterministic mark y = f(k), or the named occupancy family.  Closed-form
laws are materialized to finite tables with certified tail bounds before
anything downstream touches individual atoms.

All values are immutable after construction and safe to share across
threads.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln, lambertw

from ._policy import POLICY
from .errors import (
    DegenerateDistribution,
    InvalidLaw,
    TruncationInfeasible,
)

__all__ = [
    "LatticeDistribution",
    "Span",
    "Mark",
    "JointLaw",
    "ConditioningSpec",
    "Moments",
    "span",
    "moments",
    "charfn",
    "materialize",
    "tree_fn",
    "law_from_obj",
    "law_to_obj",
    "joint_from_obj",
    "joint_to_obj",
    "load_law_file",
]

_MAX_TABLE_ROWS = 10_000_000


def tree_fn(z):
    """Tree function T(z) = sum_{l>=1} l^(l-1) z^l / l!, for |z| <= 1/e.

    Satisfies T = z * exp(T); evaluated through the Lambert W function.
    Real input gives a real result, complex input stays complex.
    """
    w = -lambertw(-np.asarray(z, dtype=complex))
    if np.isrealobj(z):
        w = w.real
    return w if w.ndim else w[()]


@dataclass(frozen=True)
class Span:
    """Maximal m with Supp(Z) contained in m*N + b."""

    m: int
    b: int


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    abs_central_third: float


class LatticeDistribution:
    """Probability mass function on the non-negative integers.

    kind is one of ``finite-table``, ``poisson``, ``geometric``, ``borel``.
    Finite tables store strictly increasing support and log-probabilities;
    atoms below the probability floor are dropped into ``truncated_mass``.
    """

    __slots__ = ("kind", "ks", "log_ps", "lam", "rho", "truncated_mass", "renormalized")

    def __init__(self, kind, ks=None, log_ps=None, lam=None, rho=None,
                 truncated_mass=0.0, renormalized=False):
        self.kind = kind
        self.ks = ks
        self.log_ps = log_ps
        self.lam = lam
        self.rho = rho
        self.truncated_mass = truncated_mass
        self.renormalized = renormalized

    # -- constructors -------------------------------------------------

    @classmethod
    def from_table(cls, rows: Iterable[tuple[int, float]], *, renormalized=False,
                   extra_truncated=0.0, check_mass=True):
        ks, ps = [], []
        for k, p in rows:
            ki = int(k)
            if ki != k or ki < 0:
                raise InvalidLaw(f"support point {k!r} is not a non-negative integer")
            if p < 0:
                raise InvalidLaw(f"negative probability {p!r} at k={ki}")
            ks.append(ki)
            ps.append(float(p))
        if not ks:
            raise InvalidLaw("empty support")
        ks = np.asarray(ks, dtype=np.int64)
        ps = np.asarray(ps, dtype=float)
        if np.any(np.diff(ks) <= 0):
            raise InvalidLaw("support keys must be strictly increasing with no duplicates")
        dropped = ps < POLICY.prob_floor
        trunc = float(ps[dropped].sum()) + float(extra_truncated)
        ks, ps = ks[~dropped], ps[~dropped]
        if ks.size == 0:
            raise InvalidLaw("all atoms below probability floor")
        total = float(ps.sum())
        if check_mass and abs(total + trunc - 1.0) > POLICY.mass_tol:
            raise InvalidLaw(f"probabilities sum to {total + trunc}, not 1")
        return cls("finite-table", ks=ks, log_ps=np.log(ps),
                   truncated_mass=trunc, renormalized=renormalized)

    @classmethod
    def poisson(cls, lam: float):
        if not (lam > 0):
            raise InvalidLaw(f"poisson rate must be positive, got {lam!r}")
        return cls("poisson", lam=float(lam))

    @classmethod
    def geometric(cls, rho: float):
        if not (0.0 < rho < 1.0):
            raise InvalidLaw(f"geometric parameter must lie in (0,1), got {rho!r}")
        return cls("geometric", rho=float(rho))

    @classmethod
    def borel(cls, lam: float):
        if not (0.0 < lam <= math.exp(-1)):
            raise InvalidLaw(f"borel parameter must lie in (0, 1/e], got {lam!r}")
        return cls("borel", lam=float(lam))

    # -- basic queries -------------------------------------------------

    @property
    def is_table(self) -> bool:
        return self.kind == "finite-table"

    @property
    def ps(self) -> np.ndarray:
        return np.exp(self.log_ps)

    def support_bounds(self) -> tuple[int, float]:
        """(min support point, max support point); max is inf for closed forms."""
        if self.is_table:
            return int(self.ks[0]), float(self.ks[-1])
        if self.kind == "borel":
            return 1, math.inf
        return 0, math.inf

    def log_pmf(self, k) -> np.ndarray:
        """Log pmf at integer points k (vectorized); -inf off the support."""
        k = np.asarray(k, dtype=np.int64)
        if self.is_table:
            out = np.full(k.shape, -np.inf)
            idx = np.searchsorted(self.ks, k)
            ok = (idx < self.ks.size) & (np.take(self.ks, np.minimum(idx, self.ks.size - 1)) == k)
            out[ok] = self.log_ps[idx[ok]]
            return out
        kk = k.astype(float)
        if self.kind == "poisson":
            out = -self.lam + kk * math.log(self.lam) - gammaln(kk + 1.0)
            return np.where(k >= 0, out, -np.inf)
        if self.kind == "geometric":
            out = math.log1p(-self.rho) + kk * math.log(self.rho)
            return np.where(k >= 0, out, -np.inf)
        # borel
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (kk - 1.0) * np.log(kk) + kk * math.log(self.lam) - gammaln(kk + 1.0) \
                - math.log(tree_fn(self.lam))
        return np.where(k >= 1, out, -np.inf)

    def __repr__(self):
        if self.is_table:
            return f"LatticeDistribution(finite-table, {self.ks.size} atoms)"
        par = self.lam if self.kind in ("poisson", "borel") else self.rho
        return f"LatticeDistribution({self.kind}, {par})"


def span(dist: LatticeDistribution, *, degenerate_ok: bool = False) -> Span:
    """Lattice span: maximal m with every support point congruent to b mod m.

    A one-point support has no finite maximal m; that case raises unless the
    caller opts into the (m=0, b=k) sentinel.
    """
    if not dist.is_table:
        # all three closed-form families have contiguous support, hence span 1
        return Span(1, 0)
    ks = dist.ks
    if ks.size == 1:
        if degenerate_ok:
            return Span(0, int(ks[0]))
        raise DegenerateDistribution("span undefined for one-point support")
    m = 0
    base = int(ks[0])
    for k in ks[1:]:
        m = math.gcd(m, int(k) - base)
    return Span(m, base % m)


def moments(dist: LatticeDistribution, eps: float | None = None) -> Moments:
    """Mean, variance and absolute central third moment.

    Mean and variance use closed forms for named families; the absolute
    third moment always comes from a materialized table with tail bound
    ``eps`` (closed forms for it are not worth the trouble).
    """
    eps = POLICY.eps_trunc if eps is None else eps
    table = materialize(dist, eps)
    ks = table.ks.astype(float)
    ps = table.ps
    mean_t = float(ks @ ps) / float(ps.sum())
    if dist.kind == "poisson":
        mean, var = dist.lam, dist.lam
    elif dist.kind == "geometric":
        mean = dist.rho / (1.0 - dist.rho)
        var = dist.rho / (1.0 - dist.rho) ** 2
    elif dist.kind == "borel":
        mu = tree_fn(dist.lam)
        mean = 1.0 / (1.0 - mu)
        var = mu / (1.0 - mu) ** 3
    else:
        mean = mean_t
        var = float(((ks - mean) ** 2) @ ps) / float(ps.sum())
    act = float((np.abs(ks - mean) ** 3) @ ps) / float(ps.sum())
    return Moments(mean, var, act)


def charfn(dist: LatticeDistribution, t):
    """Characteristic value E[exp(i t Z)]; vectorized over t. |result| <= 1."""
    t = np.asarray(t, dtype=float)
    if dist.kind == "poisson":
        out = np.exp(dist.lam * (np.exp(1j * t) - 1.0))
    elif dist.kind == "geometric":
        out = (1.0 - dist.rho) / (1.0 - dist.rho * np.exp(1j * t))
    elif dist.kind == "borel":
        out = tree_fn(dist.lam * np.exp(1j * t)) / tree_fn(dist.lam)
    else:
        # finite sum; shapes (..., atoms) reduced on the last axis
        out = np.exp(1j * np.multiply.outer(t, dist.ks.astype(float))
                     + dist.log_ps).sum(axis=-1)
    return out if out.ndim else complex(out)


def _poisson_cutoff(lam: float, eps: float) -> int:
    """Smallest K (reached by scanning) with Chernoff tail bound <= eps."""
    k = max(1, int(math.ceil(lam)))
    while True:
        if k > lam:
            log_tail = -lam + k * (1.0 + math.log(lam) - math.log(k))
            if log_tail <= math.log(eps):
                return k
        k = max(k + 1, int(k * 1.1))
        if k > _MAX_TABLE_ROWS:
            raise TruncationInfeasible(f"poisson({lam}) cutoff for eps={eps} too large")


def materialize(dist: LatticeDistribution, eps: float | None = None) -> LatticeDistribution:
    """Finite table whose omitted tail mass is certified <= eps.

    Already-finite tables pass through unchanged.  The result is not
    renormalized; the deficit is recorded in ``truncated_mass``.
    """
    if dist.is_table:
        return dist
    eps = POLICY.eps_trunc if eps is None else eps
    if dist.kind == "poisson":
        k_top = _poisson_cutoff(dist.lam, eps)
        ks = np.arange(0, k_top + 1)
    elif dist.kind == "geometric":
        # P(Z >= K) = rho^K <= eps
        k_top = int(math.ceil(math.log(eps) / math.log(dist.rho)))
        ks = np.arange(0, k_top + 1)
    else:  # borel
        r = dist.lam * math.e
        if r >= 1.0:
            raise TruncationInfeasible(
                "borel law at the domain corner 1/e has a heavy polynomial tail; "
                "no finite table certifies the requested bound")
        # p_{l+1}/p_l increases toward lam*e, so the tail after K is bounded
        # by the geometric series p_K * r / (1 - r)
        log_eps = math.log(eps) + math.log1p(-r) - math.log(r)
        k_top = 1
        while True:
            lp = float(dist.log_pmf(np.asarray([k_top]))[0])
            if lp <= log_eps:
                break
            k_top = max(k_top + 1, int(k_top * 1.2))
            if k_top > _MAX_TABLE_ROWS:
                raise TruncationInfeasible(f"borel({dist.lam}) cutoff for eps={eps} too large")
        ks = np.arange(1, k_top + 1)
    log_ps = dist.log_pmf(ks)
    ps = np.exp(log_ps)
    keep = ps >= POLICY.prob_floor
    tail = max(0.0, 1.0 - float(ps[keep].sum()))
    return LatticeDistribution("finite-table", ks=ks[keep], log_ps=log_ps[keep],
                               truncated_mass=tail, renormalized=False)


# ---------------------------------------------------------------------------
# Marks and joint laws
# ---------------------------------------------------------------------------

_NAMED_MARKS = ("indicator-zero", "identity", "indicator-eq", "custom-table")


@dataclass(frozen=True)
class Mark:
    """Deterministic real mark y = f(k) from the named set."""

    name: str
    at: int | None = None
    table: tuple[tuple[int, float], ...] | None = None

    def __post_init__(self):
        if self.name not in _NAMED_MARKS:
            raise InvalidLaw(f"unknown mark {self.name!r}; expected one of {_NAMED_MARKS}")
        if self.name == "indicator-eq" and self.at is None:
            raise InvalidLaw("indicator-eq mark needs a target integer")
        if self.name == "custom-table" and not self.table:
            raise InvalidLaw("custom-table mark needs (k, y) rows")

    def apply(self, ks: np.ndarray) -> np.ndarray:
        ks = np.asarray(ks, dtype=np.int64)
        if self.name == "indicator-zero":
            return (ks == 0).astype(float)
        if self.name == "identity":
            return ks.astype(float)
        if self.name == "indicator-eq":
            return (ks == self.at).astype(float)
        lut = dict(self.table)
        missing = [int(k) for k in ks if int(k) not in lut]
        if missing:
            raise InvalidLaw(f"custom-table mark missing values for k={missing[:5]}")
        return np.asarray([lut[int(k)] for k in ks], dtype=float)

    @property
    def is_bounded(self) -> bool:
        return self.name != "identity"


class JointLaw:
    """Law of a pair (X, Y): lattice X plus a real mark Y.

    kind ``table`` stores explicit (k, y, p) rows; kind ``mark`` a lattice
    law with a deterministic mark; kind ``occupancy`` the Poisson law marked
    by the indicator of zero (closed-form transforms available downstream).
    """

    __slots__ = ("kind", "xs", "ys", "log_ps", "x_dist", "mark", "lam", "truncated_mass")

    def __init__(self, kind, xs=None, ys=None, log_ps=None, x_dist=None, mark=None,
                 lam=None, truncated_mass=0.0):
        self.kind = kind
        self.xs = xs
        self.ys = ys
        self.log_ps = log_ps
        self.x_dist = x_dist
        self.mark = mark
        self.lam = lam
        self.truncated_mass = truncated_mass

    @classmethod
    def from_table(cls, rows: Iterable[tuple[int, float, float]], *, extra_truncated=0.0):
        xs, ys, ps = [], [], []
        for k, y, p in rows:
            ki = int(k)
            if ki != k or ki < 0:
                raise InvalidLaw(f"lattice component {k!r} is not a non-negative integer")
            if p < 0:
                raise InvalidLaw(f"negative probability {p!r} at (k={ki}, y={y})")
            xs.append(ki)
            ys.append(float(y))
            ps.append(float(p))
        if not xs:
            raise InvalidLaw("empty joint support")
        order = np.lexsort((ys, xs))
        xs = np.asarray(xs, dtype=np.int64)[order]
        ys = np.asarray(ys, dtype=float)[order]
        ps = np.asarray(ps, dtype=float)[order]
        dup = (np.diff(xs) == 0) & (np.diff(ys) == 0)
        if np.any(dup):
            raise InvalidLaw("duplicate (k, y) rows")
        keep = ps >= POLICY.prob_floor
        trunc = float(ps[~keep].sum()) + float(extra_truncated)
        xs, ys, ps = xs[keep], ys[keep], ps[keep]
        total = float(ps.sum())
        if abs(total + trunc - 1.0) > POLICY.mass_tol:
            raise InvalidLaw(f"joint mass sums to {total + trunc}, not 1")
        return cls("table", xs=xs, ys=ys, log_ps=np.log(ps), truncated_mass=trunc)

    @classmethod
    def with_mark(cls, x_dist: LatticeDistribution, mark: Mark):
        return cls("mark", x_dist=x_dist, mark=mark)

    @classmethod
    def occupancy(cls, lam: float):
        if not (lam > 0):
            raise InvalidLaw(f"occupancy rate must be positive, got {lam!r}")
        return cls("occupancy", lam=float(lam))

    @property
    def is_table(self) -> bool:
        return self.kind == "table"

    @property
    def ps(self) -> np.ndarray:
        return np.exp(self.log_ps)

    def x_marginal(self) -> LatticeDistribution:
        if self.kind == "mark":
            return self.x_dist
        if self.kind == "occupancy":
            return LatticeDistribution.poisson(self.lam)
        uniq, inv = np.unique(self.xs, return_inverse=True)
        mass = np.zeros(uniq.size)
        np.add.at(mass, inv, self.ps)
        return LatticeDistribution.from_table(
            zip(uniq.tolist(), mass.tolist()),
            extra_truncated=self.truncated_mass, check_mass=False)

    def mark_bounds(self) -> tuple[float, float]:
        """(min, max) of the mark over the (possibly materialized) support."""
        if self.is_table:
            return float(self.ys.min()), float(self.ys.max())
        if self.kind == "occupancy":
            return 0.0, 1.0
        if self.mark.name == "identity":
            lo, hi = self.x_dist.support_bounds()
            return float(lo), float(hi)
        t = materialize_joint(self, POLICY.eps_trunc)
        return float(t.ys.min()), float(t.ys.max())


def materialize_joint(joint: JointLaw, eps: float | None = None) -> JointLaw:
    """Finite (k, y, p) table with omitted mass <= eps. Identity on tables."""
    if joint.is_table:
        return joint
    eps = POLICY.eps_trunc if eps is None else eps
    if joint.kind == "occupancy":
        base = JointLaw.with_mark(LatticeDistribution.poisson(joint.lam),
                                  Mark("indicator-zero"))
        return materialize_joint(base, eps)
    table = materialize(joint.x_dist, eps)
    ys = joint.mark.apply(table.ks)
    return JointLaw("table", xs=table.ks.copy(), ys=ys, log_ps=table.log_ps.copy(),
                    truncated_mass=table.truncated_mass)


def joint_stats(joint: JointLaw, eps: float | None = None):
    """(mean_x, mean_y, var_x, var_y, cov) by exact summation over the table."""
    t = materialize_joint(joint, eps)
    w = t.ps
    w = w / w.sum()
    x = t.xs.astype(float)
    y = t.ys
    mx, my = float(w @ x), float(w @ y)
    return (mx, my,
            float(w @ (x - mx) ** 2),
            float(w @ (y - my) ** 2),
            float(w @ ((x - mx) * (y - my))))


@dataclass(frozen=True)
class ConditioningSpec:
    """The event {S = n*p - offset} over n*q summands.

    The asymptotic ratio is p/q; the integer offset covers conditionings
    like S_n = n - 1 that differ from n*p by a constant.
    """

    p: int
    q: int
    n: int
    offset: int = 0

    def __post_init__(self):
        for name in ("p", "q", "n"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise InvalidLaw(f"{name} must be a positive integer, got {v!r}")
        if self.n * self.p - self.offset < 0:
            raise InvalidLaw("conditioning value n*p - offset is negative")

    @property
    def ratio(self) -> float:
        return self.p / self.q

    @property
    def num_terms(self) -> int:
        return self.n * self.q

    @property
    def target_sum(self) -> int:
        return self.n * self.p - self.offset


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

def law_to_obj(dist: LatticeDistribution) -> dict:
    if dist.is_table:
        return {"kind": "finite-table",
                "rows": [[int(k), float(p)] for k, p in zip(dist.ks, dist.ps)]}
    if dist.kind == "poisson":
        return {"kind": "poisson", "lambda": dist.lam}
    if dist.kind == "geometric":
        return {"kind": "geometric", "rho": dist.rho}
    return {"kind": "borel", "lambda": dist.lam}


def law_from_obj(obj: Mapping) -> LatticeDistribution:
    try:
        kind = obj["kind"]
    except (KeyError, TypeError):
        raise InvalidLaw("law object needs a 'kind' field")
    if kind == "finite-table":
        return LatticeDistribution.from_table(obj["rows"])
    if kind == "poisson":
        return LatticeDistribution.poisson(obj["lambda"])
    if kind == "geometric":
        return LatticeDistribution.geometric(obj["rho"])
    if kind == "borel":
        return LatticeDistribution.borel(obj["lambda"])
    raise InvalidLaw(f"unknown law kind {kind!r}")


def _mark_to_obj(mark: Mark):
    if mark.name == "indicator-eq":
        return {"indicator-eq": mark.at}
    if mark.name == "custom-table":
        return {"custom-table": [[k, y] for k, y in mark.table]}
    return mark.name


def _mark_from_obj(obj) -> Mark:
    if isinstance(obj, str):
        return Mark(obj)
    if isinstance(obj, Mapping):
        if "indicator-eq" in obj:
            return Mark("indicator-eq", at=int(obj["indicator-eq"]))
        if "custom-table" in obj:
            return Mark("custom-table",
                        table=tuple((int(k), float(y)) for k, y in obj["custom-table"]))
    raise InvalidLaw(f"unknown mark spec {obj!r}")


def joint_to_obj(joint: JointLaw) -> dict:
    if joint.is_table:
        return {"kind": "joint-table",
                "rows": [[int(k), float(y), float(p)]
                         for k, y, p in zip(joint.xs, joint.ys, joint.ps)]}
    if joint.kind == "occupancy":
        return {"kind": "occupancy", "lambda": joint.lam}
    return {"kind": "mark", "x": law_to_obj(joint.x_dist), "mark": _mark_to_obj(joint.mark)}


def joint_from_obj(obj: Mapping) -> JointLaw:
    kind = obj.get("kind")
    if kind == "joint-table":
        return JointLaw.from_table(obj["rows"])
    if kind == "occupancy":
        return JointLaw.occupancy(obj["lambda"])
    if kind == "mark":
        return JointLaw.with_mark(law_from_obj(obj["x"]), _mark_from_obj(obj["mark"]))
    raise InvalidLaw(f"unknown joint law kind {kind!r}")


def load_law_file(path):
    """Read a law or joint law from a JSON file; returns whichever the file holds."""
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("kind") in ("joint-table", "occupancy", "mark"):
        return joint_from_obj(obj)
    return law_from_obj(obj)


def rational_mark_grid(ys: Sequence[float], max_denominator: int = 10**6):
    """Integer rescaling of mark values via their least common denominator.

    Returns (integer values, denominator).  A genuine small rational hits
    its float to ~1e-17 relative; the best approximation of an irrational
    at this denominator cap stays near 1e-12, so 1e-15 separates them.
    """
    fracs = []
    for y in ys:
        f = Fraction(float(y)).limit_denominator(max_denominator)
        if abs(float(f) - float(y)) > 1e-15 * max(1.0, abs(float(y))):
            raise InvalidLaw(f"mark value {y!r} has no small common denominator; "
                             "exact conditioning needs lattice marks")
        fracs.append(f)
    lcd = 1
    for f in fracs:
        lcd = lcd * f.denominator // math.gcd(lcd, f.denominator)
    ints = [int(f * lcd) for f in fracs]
    return np.asarray(ints, dtype=np.int64), lcd
