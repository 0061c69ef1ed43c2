"""Ground-truth engines for conditioned sums.

Two independent routes to the conditional law of the mark sum: an exact
dynamic program over (lattice-sum, rescaled-mark-sum) states in log space,
and rejection sampling with an optional mean-matching tilted proposal.
The tilted proposal multiplies every accepted path's weight by the same
constant (the tilt factor depends on the lattice sum only, which the
acceptance event fixes), so accepted samples need no reweighting.

Sampling is reproducible by construction: replicates are partitioned over
a fixed number of counter-based RNG streams (Philox, 64-bit), and the
stream layout is part of the configuration, not of the thread count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from ._policy import POLICY
from .cgf import CgfEvaluator, _solve_tilt_root
from .errors import (
    AlternatingCancellation,
    DegenerateResidual,
    InvalidLaw,
    MaxRejectionsExceeded,
    StateBudgetExceeded,
    ZeroProbabilityEvent,
)
from .lattice import (
    ConditioningSpec,
    JointLaw,
    materialize_joint,
    rational_mark_grid,
)
from .rates import ConditionalLaplace, gibbs_point, mdp_params, rate_at
from .tilting import check_pair

__all__ = [
    "ConditionalLawExact",
    "SimConfig",
    "SampleResult",
    "EmpiricalRatePoint",
    "exact_conditional_law",
    "occupancy_oracle",
    "sample_conditioned",
    "empirical_rate",
    "mdp_empirical",
]

_RNG_NAME = "philox4x64"
_BATCH = 2048


@dataclass(frozen=True)
class ConditionalLawExact:
    """P(T = t | S = target) on the exact rational grid of mark sums."""

    n: int
    p: int
    q: int
    offset: int
    t_ints: np.ndarray       # mark sums times the common denominator
    lcd: int
    log_probs: np.ndarray    # conditional, normalized
    log_event_prob: float    # log P(S = target)

    @property
    def values(self) -> np.ndarray:
        return self.t_ints / self.lcd

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def mean(self) -> float:
        return float(self.probs @ self.values)

    def tail_log_prob(self, y: float, side: str = "ge") -> float:
        """log P(T/nq >= y | S) (or <=); y is on the per-term scale."""
        nq = self.n * self.q
        thr = y * nq * self.lcd
        if side == "ge":
            sel = self.t_ints >= thr - 1e-9
        elif side == "le":
            sel = self.t_ints <= thr + 1e-9
        else:
            raise ValueError(f"side must be 'ge' or 'le', got {side!r}")
        if not np.any(sel):
            return -math.inf
        return float(logsumexp(self.log_probs[sel]))

    def threshold_log_prob(self, t_threshold: float, side: str = "ge") -> float:
        """log P(T >= t_threshold | S) on the raw mark-sum scale."""
        sel = (self.t_ints >= t_threshold * self.lcd - 1e-9) if side == "ge" \
            else (self.t_ints <= t_threshold * self.lcd + 1e-9)
        if not np.any(sel):
            return -math.inf
        return float(logsumexp(self.log_probs[sel]))

    def conditional_laplace(self, us: Sequence[float]) -> ConditionalLaplace:
        nq = self.n * self.q
        us = np.asarray(list(us), dtype=float)
        vals = np.array([float(logsumexp(self.log_probs + u * self.values)) / nq
                         for u in us])
        return ConditionalLaplace(n=self.n, p=self.p, q=self.q, us=us,
                                  values=vals, method="dp-oracle")


def exact_conditional_law(joint: JointLaw, spec: ConditioningSpec,
                          state_budget: int = 20_000_000,
                          eps: float | None = None) -> ConditionalLawExact:
    """Exact conditional law by a log-space DP over partial-sum states.

    Marks are rescaled to an integer lattice through their least common
    denominator (irrational marks are rejected at that step).  States with
    lattice sum beyond the target are unreachable and pruned.
    """
    eps = POLICY.eps_evaluator if eps is None else eps
    t = materialize_joint(joint, eps)
    steps = spec.num_terms
    target = spec.target_sum
    g, lcd = rational_mark_grid(t.ys)
    ks = t.xs.astype(np.int64)
    lps = t.log_ps

    g_lo = int(min(g.min(), 0)) * steps
    g_hi = int(max(g.max(), 0)) * steps
    t_len = g_hi - g_lo + 1
    s_len = target + 1
    if s_len * t_len > state_budget:
        raise StateBudgetExceeded(
            f"DP needs {s_len} x {t_len} states, over the budget {state_budget}")

    cur = np.full((s_len, t_len), -np.inf)
    cur[0, -g_lo] = 0.0
    for _ in range(steps):
        nxt = np.full((s_len, t_len), -np.inf)
        for kr, gr, lr in zip(ks, g, lps):
            kr = int(kr)
            gr = int(gr)
            if kr >= s_len:
                continue
            dst_s = slice(kr, s_len)
            src_s = slice(0, s_len - kr)
            if gr >= 0:
                dst_t = slice(gr, t_len)
                src_t = slice(0, t_len - gr)
            else:
                dst_t = slice(0, t_len + gr)
                src_t = slice(-gr, t_len)
            np.logaddexp(nxt[dst_s, dst_t], cur[src_s, src_t] + lr,
                         out=nxt[dst_s, dst_t])
        cur = nxt

    slice_log = cur[target, :]
    log_event = float(logsumexp(slice_log))
    if log_event == -math.inf:
        raise ZeroProbabilityEvent(
            f"P(S = {target}) = 0 over {steps} terms of this law")
    keep = np.isfinite(slice_log)
    t_ints = np.arange(g_lo, g_hi + 1)[keep]
    return ConditionalLawExact(n=spec.n, p=spec.p, q=spec.q, offset=spec.offset,
                               t_ints=t_ints, lcd=lcd,
                               log_probs=slice_log[keep] - log_event,
                               log_event_prob=log_event)


# ---------------------------------------------------------------------------
# Occupancy inclusion-exclusion oracle
# ---------------------------------------------------------------------------

def occupancy_oracle(m: int, n_urns: int):
    """Distribution of the number of empty urns after m balls land in n_urns.

    P(W = w) = C(N, w) * sum_j (-1)^j C(N - w, j) (1 - (w + j)/N)^m.

    The alternating sum runs in exact float summation; when the measured
    cancellation would cost more than six digits the computation falls
    back to exact integer arithmetic (desk-scale m, N), and raises if the
    fallback is unavailable.
    """
    if m < 0 or n_urns < 1:
        raise InvalidLaw("need m >= 0 balls and at least one urn")
    ws = np.arange(0, n_urns + 1)
    probs = np.empty(ws.size)
    exact_ok = m <= 1200 and n_urns <= 1200
    for i, w in enumerate(ws):
        val, loss = _occupancy_atom_float(m, n_urns, int(w))
        if loss > 1e-6:
            if not exact_ok:
                raise AlternatingCancellation(
                    f"lost ~{loss:.1e} relative digits at w={w} and m, N too "
                    "large for the exact integer fallback")
            val = _occupancy_atom_exact(m, n_urns, int(w))
        probs[i] = val
    probs = np.clip(probs, 0.0, None)
    return ws, probs


def _occupancy_atom_float(m, n, w):
    terms = []
    for j in range(0, n - w + 1):
        base = (n - w - j) / n
        if base == 0.0:
            lt = 0.0 if m == 0 else -math.inf
        else:
            lt = m * math.log(base)
        lc = (gammaln(n - w + 1) - gammaln(j + 1) - gammaln(n - w - j + 1))
        lv = lc + lt
        if lv == -math.inf:
            continue
        terms.append((-1.0) ** j * math.exp(lv))
    if not terms:
        return 0.0, 0.0
    s = math.fsum(terms)
    gross = math.fsum(abs(t) for t in terms)
    log_choose = gammaln(n + 1) - gammaln(w + 1) - gammaln(n - w + 1)
    val = math.exp(log_choose) * s if s > 0 else 0.0
    loss = 0.0 if s == 0 else (gross / max(abs(s), 1e-300)) * 1e-16
    return val, loss


def _occupancy_atom_exact(m, n, w):
    total = 0
    for j in range(0, n - w + 1):
        c = math.comb(n - w, j)
        total += (-1) ** j * c * (n - w - j) ** m
    if total < 0:
        total = 0
    return math.comb(n, w) * total / n**m


# ---------------------------------------------------------------------------
# Rejection sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Reproducibility contract: identical (seed, replicates, streams) gives
    identical output, whatever the executor thread count."""

    seed: int
    replicates: int
    max_rejections: int = 100_000_000
    streams: int = 8

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidLaw("need at least one replicate")
        if self.streams < 1:
            raise InvalidLaw("need at least one RNG stream")


@dataclass(frozen=True)
class SampleResult:
    values: np.ndarray
    attempts: int
    hits: int          # acceptances seen, including surplus beyond the quota
    accepted: int      # values actually returned
    proposal: str
    metadata: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return self.hits / self.attempts if self.attempts else 0.0


def sample_conditioned(joint: JointLaw, spec: ConditioningSpec, cfg: SimConfig,
                       proposal: str = "auto", threads: int = 1) -> SampleResult:
    """Rejection-sample T = sum of marks given the lattice sum hits its target.

    ``proposal`` "tilted" draws pairs from the jointly tilted law whose
    lattice mean matches the conditioning ratio; acceptance then happens at
    the tilted law's center instead of in its tail.  "auto" picks tilted
    whenever the ratio differs from the lattice mean.
    """
    t = materialize_joint(joint, POLICY.eps_trunc)
    xev = CgfEvaluator(joint.x_marginal())
    mean_x = xev.mean()
    ratio = spec.target_sum / spec.num_terms
    if proposal == "auto":
        proposal = "plain" if abs(ratio - mean_x) <= 1e-9 else "tilted"
    if proposal == "tilted":
        lo, hi = CgfEvaluator(joint.x_marginal()).range_interval()
        if not (lo < ratio < hi):
            raise ZeroProbabilityEvent(
                f"conditioning ratio {ratio} unreachable for this law")
        tau, _, _ = _solve_tilt_root(xev, ratio)
        draw_law = check_pair(joint, tau).law
    elif proposal == "plain":
        draw_law = t
    else:
        raise ValueError(f"proposal must be auto/plain/tilted, got {proposal!r}")

    xs = draw_law.xs.astype(np.int64)
    ys = draw_law.ys
    w = draw_law.ps
    w = w / w.sum()
    nq = spec.num_terms
    target = spec.target_sum
    quotas = [cfg.replicates // cfg.streams] * cfg.streams
    for i in range(cfg.replicates % cfg.streams):
        quotas[i] += 1

    def run_stream(idx: int):
        rng = np.random.Generator(np.random.Philox(key=cfg.seed).jumped(idx))
        want = quotas[idx]
        got: list[np.ndarray] = []
        have = 0
        attempts = 0
        while have < want:
            if attempts > cfg.max_rejections:
                raise MaxRejectionsExceeded(
                    f"stream {idx} exceeded {cfg.max_rejections} proposal draws",
                    acceptance_rate=have / attempts)
            idxs = rng.choice(xs.size, size=(_BATCH, nq), p=w)
            attempts += _BATCH
            hit = xs[idxs].sum(axis=1) == target
            if np.any(hit):
                vals = ys[idxs[hit]].sum(axis=1)
                got.append(vals)
                have += vals.size
        out = np.concatenate(got)[:want] if got else np.empty(0)
        return out, attempts, have

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_stream, range(cfg.streams)))
    else:
        results = [run_stream(i) for i in range(cfg.streams)]

    values = np.concatenate([r[0] for r in results])
    attempts = int(sum(r[1] for r in results))
    hits = int(sum(r[2] for r in results))
    meta = {"rng": _RNG_NAME, "seed": cfg.seed, "streams": cfg.streams,
            "proposal": proposal, "eps_trunc": POLICY.eps_trunc}
    return SampleResult(values=values, attempts=attempts, hits=hits,
                        accepted=int(values.size), proposal=proposal, metadata=meta)


# ---------------------------------------------------------------------------
# Empirical rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalRatePoint:
    n: int
    nq: int
    estimate: float
    theory: float
    reliable: bool = True

    @property
    def error(self) -> float:
        return abs(self.estimate - self.theory)


def empirical_rate(joint: JointLaw, specs: Sequence[ConditioningSpec], y: float,
                   side: str = "ge", method: str = "dp",
                   cfg: SimConfig | None = None,
                   state_budget: int = 20_000_000) -> list[EmpiricalRatePoint]:
    """Per-n estimates -(1/nq) log P(T/nq on the given side of y | S on target).

    The theory column is the rate at the half-line infimum: I(y) when y sits
    on the far side of the concentration point, 0 otherwise.
    """
    ratio = specs[0].ratio
    chi = gibbs_point(joint, ratio)
    far = (side == "ge" and y > chi) or (side == "le" and y < chi)
    theory = rate_at(joint, ratio, y) if far else 0.0
    out = []
    for spec in specs:
        if spec.ratio != ratio:
            raise InvalidLaw("all specs must share the conditioning ratio")
        nq = spec.num_terms
        if method == "dp":
            law = exact_conditional_law(joint, spec, state_budget=state_budget)
            lp = law.tail_log_prob(y, side)
            est = math.inf if lp == -math.inf else -lp / nq
            out.append(EmpiricalRatePoint(spec.n, nq, est, theory))
        elif method == "mc":
            if cfg is None:
                raise InvalidLaw("mc method needs a SimConfig")
            res = sample_conditioned(joint, spec, cfg)
            vals = res.values / nq
            count = int((vals >= y).sum() if side == "ge" else (vals <= y).sum())
            phat = count / res.accepted
            est = math.inf if count == 0 else -math.log(phat) / nq
            out.append(EmpiricalRatePoint(spec.n, nq, est, theory,
                                          reliable=count >= 10))
        else:
            raise ValueError(f"method must be 'dp' or 'mc', got {method!r}")
    return out


def mdp_empirical(joint: JointLaw, specs: Sequence[ConditioningSpec],
                  a_of_n: Callable[[int], float], z: float,
                  state_budget: int = 20_000_000) -> list[EmpiricalRatePoint]:
    """Moderate-scale estimates a_n log P(sqrt(a_n/nq)(T - b_n) >= z | S).

    Exact DP only; refuses degenerate marks (through mdp_params) and
    validates that n * a_n * q grows along the supplied specs.
    """
    ratio = specs[0].ratio
    mdp = mdp_params(joint, ratio)  # DegenerateResidual for affine marks
    growth = [s.n * a_of_n(s.n) * s.q for s in specs]
    if any(g2 <= g1 for g1, g2 in zip(growth, growth[1:])):
        raise InvalidLaw(
            f"speed sequence violates n*a_n*q -> infinity along specs: {growth}")
    theory = -z * z / (2.0 * mdp.alpha2)
    out = []
    for spec in specs:
        nq = spec.num_terms
        a_n = a_of_n(spec.n)
        b_n = nq * mdp.chi
        thr = b_n + z * math.sqrt(nq / a_n)
        law = exact_conditional_law(joint, spec, state_budget=state_budget)
        lp = law.threshold_log_prob(thr, "ge")
        est = -math.inf if lp == -math.inf else a_n * lp
        out.append(EmpiricalRatePoint(spec.n, nq, est, theory))
    return out
