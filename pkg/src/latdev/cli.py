"""Command-line surface.

Subcommands: rate, mdp, laplace, locallimit, simulate, oracle, figure,
check.  ``--law`` accepts a preset name (occupancy, bose-einstein,
branching, bootstrap-count) or a path to a JSON law file.  Exit codes:
0 success, 2 usage error, 3 numeric failure (diagnostic on stderr).

The worker-thread default for ``simulate`` comes from the LATDEV_THREADS
environment variable; output bytes do not depend on the thread count.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from .cgf import CgfEvaluator, conjugate
from .errors import LatdevError
from .lattice import (
    ConditioningSpec,
    JointLaw,
    LatticeDistribution,
    Mark,
    load_law_file,
    materialize,
    span,
)
from .locallimit import (
    central_local_limit,
    exact_point_prob,
    dp_point_prob,
    tilted_local_limit,
)
from .oracle import SimConfig, exact_conditional_law, sample_conditioned
from .presets import PRESET_NAMES, FigureJob, Preset, figure_emit, preset_expand
from .rates import bartlett_laplace, ldp_rate, mdp_consistency_check, mdp_params, write_rate_csv
from .tilting import tilt_lattice

_FMT = ".17g"


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return format(v, _FMT)


def _parse_mark(text: str) -> Mark:
    if text in ("indicator-zero", "identity"):
        return Mark(text)
    if text.startswith("indicator-eq:"):
        return Mark("indicator-eq", at=int(text.split(":", 1)[1]))
    raise argparse.ArgumentTypeError(
        f"--mark must be indicator-zero, identity or indicator-eq:K, got {text!r}")


def _resolve_law(args, parser) -> tuple[JointLaw | LatticeDistribution, object]:
    name = args.law
    if name in PRESET_NAMES:
        preset = Preset(name=name, lam=args.lam, rho=args.rho,
                        mark=getattr(args, "mark", None))
        joint, template = preset_expand(preset)
        return joint, template
    if not os.path.exists(name):
        parser.error(f"--law: {name!r} is neither a preset name {PRESET_NAMES} "
                     "nor an existing JSON file")
    return load_law_file(name), None


def _x_marginal(law):
    return law.x_marginal() if isinstance(law, JointLaw) else law


def _require_joint(law, parser):
    if not isinstance(law, JointLaw):
        parser.error("this subcommand needs a joint law (preset or joint JSON), "
                     "got a plain lattice law")
    return law


def _spec_from_args(args, template, parser) -> ConditioningSpec:
    if template is not None:
        try:
            return template.spec(args.n, p=args.p, q=args.q)
        except LatdevError as exc:
            parser.error(str(exc))
    if args.p is None or args.q is None:
        parser.error("--p and --q are required for this law")
    return ConditioningSpec(p=args.p, q=args.q, n=args.n, offset=args.offset)


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latdev",
        description="Deviation rates and exact conditional laws for "
                    "conditioned lattice sums.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_law_opts(p, mark=False):
        p.add_argument("--law", required=True,
                       help="preset name (%s) or JSON law file" % ", ".join(PRESET_NAMES))
        p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                       help="rate parameter for Poisson-based presets")
        p.add_argument("--rho", type=float, default=0.5,
                       help="geometric parameter for the bose-einstein preset")
        if mark:
            p.add_argument("--mark", type=_parse_mark, default=None,
                           help="override the preset mark: indicator-zero, "
                                "identity or indicator-eq:K")

    def add_cond_opts(p):
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--p", type=int, default=None)
        p.add_argument("--q", type=int, default=None)
        p.add_argument("--offset", type=int, default=0)

    p_rate = sub.add_parser("rate", help="LDP rate curve to CSV")
    add_law_opts(p_rate, mark=True)
    p_rate.add_argument("--p", type=int, required=True)
    p_rate.add_argument("--q", type=int, required=True)
    p_rate.add_argument("--grid", default=None,
                        help="y grid as lo:hi:npoints (default: hull policy grid)")
    p_rate.add_argument("--out", default=None)

    p_mdp = sub.add_parser("mdp", help="moderate-scale rate parameters to JSON")
    add_law_opts(p_mdp, mark=True)
    p_mdp.add_argument("--p", type=int, required=True)
    p_mdp.add_argument("--q", type=int, required=True)
    p_mdp.add_argument("--out", default=None)

    p_lap = sub.add_parser("laplace", help="conditional log-Laplace values f_n(u)")
    add_law_opts(p_lap, mark=True)
    add_cond_opts(p_lap)
    p_lap.add_argument("--u", default="-1,-0.5,0,0.5,1",
                       help="comma-separated u grid")
    p_lap.add_argument("--method", choices=("fourier", "dp"), default="fourier")
    p_lap.add_argument("--out", default=None)

    p_ll = sub.add_parser("locallimit", help="exact vs approximate point probabilities")
    add_law_opts(p_ll)
    p_ll.add_argument("--n", type=int, required=True, help="number of i.i.d. terms")
    p_ll.add_argument("--k", type=int, required=True, help="target sum")
    p_ll.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", help="rejection-sample the conditional law")
    add_law_opts(p_sim, mark=True)
    add_cond_opts(p_sim)
    p_sim.add_argument("--replicates", type=int, default=10000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--streams", type=int, default=8)
    p_sim.add_argument("--proposal", choices=("auto", "plain", "tilted"), default="auto")
    p_sim.add_argument("--threads", type=int,
                       default=int(os.environ.get("LATDEV_THREADS", "1")),
                       help="worker threads (default: LATDEV_THREADS or 1); "
                            "output bytes do not depend on this")
    p_sim.add_argument("--out", default=None)

    p_or = sub.add_parser("oracle", help="exact conditional law to CSV")
    add_law_opts(p_or, mark=True)
    add_cond_opts(p_or)
    p_or.add_argument("--out", default=None)

    p_fig = sub.add_parser("figure", help="rate-curve CSVs for a preset")
    p_fig.add_argument("--preset", choices=PRESET_NAMES, default="occupancy")
    p_fig.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_fig.add_argument("--rho", type=float, default=0.5)
    p_fig.add_argument("--ratios", default="0.4,1,3",
                       help="comma-separated conditioning ratios")
    p_fig.add_argument("--points", type=int, default=201)
    p_fig.add_argument("--out-dir", default=".")

    p_chk = sub.add_parser("check", help="run the invariant suite over the presets")
    p_chk.add_argument("--law", default=None,
                       help="restrict to one preset or JSON law file")
    p_chk.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_chk.add_argument("--rho", type=float, default=0.5)

    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_rate(args, parser) -> int:
    law, _ = _resolve_law(args, parser)
    joint = _require_joint(law, parser)
    ys = None
    if args.grid:
        try:
            lo, hi, npts = args.grid.split(":")
            ys = np.linspace(float(lo), float(hi), int(npts))
        except ValueError:
            parser.error(f"--grid expects lo:hi:npoints, got {args.grid!r}")
    curve = ldp_rate(joint, args.p / args.q, ys=ys)
    out = args.out or f"rate_p{args.p}_q{args.q}.csv"
    write_rate_csv(curve, out, meta={"ratio": args.p / args.q,
                                     "chi": curve.gibbs_point,
                                     "alpha2": curve.mdp_variance})
    print(out)
    return 0


def _cmd_mdp(args, parser) -> int:
    law, _ = _resolve_law(args, parser)
    joint = _require_joint(law, parser)
    res = mdp_params(joint, args.p / args.q)
    _write_text(args.out, json.dumps(res.to_record(), indent=2) + "\n")
    return 0


def _cmd_laplace(args, parser) -> int:
    law, template = _resolve_law(args, parser)
    joint = _require_joint(law, parser)
    spec = _spec_from_args(args, template, parser)
    try:
        us = [float(u) for u in args.u.split(",")]
    except ValueError:
        parser.error(f"--u expects comma-separated reals, got {args.u!r}")
    if args.method == "fourier":
        cl = bartlett_laplace(joint, spec, us)
    else:
        cl = exact_conditional_law(joint, spec).conditional_laplace(us)
    lines = ["u,f"] + [f"{_fmt(u)},{_fmt(v)}" for u, v in zip(cl.us, cl.values)]
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_locallimit(args, parser) -> int:
    law, _ = _resolve_law(args, parser)
    dist = _x_marginal(law)
    exact = exact_point_prob(dist, args.n, args.k)
    rows = [("exact-fourier", exact)]
    if args.n <= 64:
        rows.append(("exact-dp", dp_point_prob(materialize(dist), args.n, args.k)))
    try:
        rows.append(("central", central_local_limit(dist, args.n, args.k)))
    except LatdevError:
        pass
    try:
        rows.append(("tilted", tilted_local_limit(dist, args.n, args.k)))
    except LatdevError:
        pass
    lines = ["method,value,ratio_to_exact"]
    for name, v in rows:
        ratio = v / exact if exact > 0 else math.inf
        lines.append(f"{name},{_fmt(v)},{_fmt(ratio)}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_simulate(args, parser) -> int:
    law, template = _resolve_law(args, parser)
    joint = _require_joint(law, parser)
    spec = _spec_from_args(args, template, parser)
    cfg = SimConfig(seed=args.seed, replicates=args.replicates, streams=args.streams)
    res = sample_conditioned(joint, spec, cfg, proposal=args.proposal,
                             threads=args.threads)
    meta = " ".join(f"{k}={v}" for k, v in sorted(res.metadata.items()))
    lines = [f"# {meta} acceptance={_fmt(res.acceptance_rate)}", "t"]
    lines += [_fmt(float(v)) for v in res.values]
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_oracle(args, parser) -> int:
    law, template = _resolve_law(args, parser)
    joint = _require_joint(law, parser)
    spec = _spec_from_args(args, template, parser)
    cl = exact_conditional_law(joint, spec)
    lines = [f"# log_event_prob={_fmt(cl.log_event_prob)} lcd={cl.lcd}", "t,prob"]
    lines += [f"{_fmt(float(t))},{_fmt(float(p))}"
              for t, p in zip(cl.values, cl.probs)]
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_figure(args, parser) -> int:
    try:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    except ValueError:
        parser.error(f"--ratios expects comma-separated reals, got {args.ratios!r}")
    preset = Preset(name=args.preset, lam=args.lam, rho=args.rho)
    job = FigureJob(preset=preset, ratios=ratios, points=args.points,
                    out_dir=args.out_dir)
    for path in figure_emit(job):
        print(path)
    return 0


def _cmd_check(args, parser) -> int:
    if args.law and args.law not in PRESET_NAMES:
        laws = [("file:" + args.law, load_law_file(args.law))]
    elif args.law:
        joint, _ = preset_expand(Preset(name=args.law, lam=args.lam, rho=args.rho))
        laws = [(args.law, joint)]
    else:
        laws = []
        for name in ("occupancy", "bose-einstein", "branching"):
            joint, _ = preset_expand(Preset(name=name, lam=args.lam, rho=args.rho))
            laws.append((name, joint))
    failures = 0
    for name, law in laws:
        joint = law if isinstance(law, JointLaw) else None
        dist = _x_marginal(law)
        failures += _check_one(name, dist, joint)
    print("check: all invariants hold" if failures == 0
          else f"check: {failures} invariant(s) FAILED")
    return 0 if failures == 0 else 3


def _check_one(name: str, dist, joint) -> int:
    bad = 0

    def report(label, ok, detail=""):
        nonlocal bad
        print(f"  [{'ok' if ok else 'FAIL'}] {name}: {label}" +
              (f" ({detail})" if detail else ""))
        if not ok:
            bad += 1

    ev = CgfEvaluator(dist)
    mean = ev.mean()
    for target in (mean, 0.5 * mean + 0.1, 1.5 * mean + 0.1):
        ts = tilt_lattice(dist, target)
        tks = ts.tilted.ks.astype(float)
        tps = ts.tilted.ps
        got = float(tks @ tps) / float(tps.sum())
        report(f"tilt mean @ {target:.3g}", abs(got - target) <= 1e-9,
               f"got {got:.12g}")
    for tau in (-0.7, 0.4):
        x = ev.d1(tau)
        gap = ev.value(tau) + conjugate(ev, x).value - tau * x
        report(f"conjugate pairing @ tau={tau}", abs(gap) <= 1e-9, f"gap {gap:.3g}")
    table = materialize(dist)
    if span(table).m == 1:
        k0 = int(round(mean * 8))
        qv = exact_point_prob(dist, 8, k0)
        dv = dp_point_prob(table, 8, k0)
        report("fourier vs dp point prob", abs(qv - dv) <= 1e-10,
               f"{qv:.12g} vs {dv:.12g}")
    if joint is not None:
        rep = mdp_consistency_check(joint, max(mean, 0.5))
        if rep.skipped:
            report("curvature * alpha2", True, "skipped: degenerate mark")
        else:
            report("curvature * alpha2 = 1", rep.passed, f"product {rep.product:.8f}")
    return bad


_COMMANDS = {
    "rate": _cmd_rate,
    "mdp": _cmd_mdp,
    "laplace": _cmd_laplace,
    "locallimit": _cmd_locallimit,
    "simulate": _cmd_simulate,
    "oracle": _cmd_oracle,
    "figure": _cmd_figure,
    "check": _cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except LatdevError as exc:
        print(f"latdev: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
