"""Command-line entry point: estimate, weights, oracle, sample, experiment."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from odin.distributions import TruncatedGaussianSpec, tg_sample, true_divergence
from odin.ensemble import basis_for, parse_eta, solve_weights
from odin.estimators import DEFAULT_L, DEFAULT_L_RANGE, EnsembleConfig, PairCaches, combined_estimate, odin1_estimate, odin2_estimate
from odin.functionals import parse_functional, plugin_estimate
from odin.harness import KIND_ALIASES, ExperimentConfig, run_experiment
from odin.kernel_core import SampleSet, min_positive_bandwidth


def _dump(obj) -> None:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)

    json.dump(obj, sys.stdout, indent=2, default=default)
    sys.stdout.write("\n")


def _parse_estimator(text: str) -> tuple[str, float | None]:
    name, _, rest = text.partition(":")
    if name in ("odin1", "odin2", "plugin") and not rest:
        return name, None
    if name == "combined":
        key, eq, val = rest.partition("=")
        if key != "rho" or not eq:
            raise ValueError(f"expected combined:rho=R, got {text!r}")
        return name, float(val)
    raise ValueError(f"unknown estimator {text!r}")


def cmd_estimate(args) -> int:
    kind, rho = _parse_estimator(args.estimator)
    g = parse_functional(args.functional)
    s1 = SampleSet.from_csv(args.f1)
    s2 = SampleSet.from_csv(args.f2)
    eta = parse_eta(args.eta)
    if kind == "plugin":
        if args.h is not None:
            h = args.h
        else:
            l = args.l if args.l is not None else DEFAULT_L_RANGE["plugin"][0]
            h = float(basis_for("odin2", s2.dim).bandwidth(l, s2.n))
        res = plugin_estimate(s1, s2, h, h, g)
        res.extra["estimator"] = "plugin"
    elif kind == "combined":
        if args.lmin is not None or args.lmax is not None:
            raise ValueError("--lmin/--lmax are ambiguous for the combined estimator; each part uses its default range")
        cfg1 = EnsembleConfig.default("odin1", g, args.L, eta=eta)
        cfg2 = EnsembleConfig.default("odin2", g, args.L, eta=eta)
        res = combined_estimate(s1, s2, cfg1, cfg2, rho, PairCaches(s1, s2))
    else:
        cfg = EnsembleConfig.default(kind, g, args.L, args.lmin, args.lmax, eta=eta)
        res = (odin1_estimate if kind == "odin1" else odin2_estimate)(s1, s2, cfg)
    if res.clipped_count:
        _warn_clipped(res.clipped_count, kind, s1, s2)
    out = res.to_dict()
    out["functional"] = g.label
    _dump(out)
    return 0


def _warn_clipped(count: int, kind: str, s1: SampleSet, s2: SampleSet) -> None:
    msg = f"warning: {count} density values fell below the clip floor"
    rule = "odin1" if kind == "odin1" else "odin2"
    power = basis_for(rule, s2.dim).bandwidth_power
    try:
        l_min = min_positive_bandwidth(s1, s2, np.arange(1, 10001) * 0.01, lambda l: l * float(s2.n) ** power)
        msg += f"; all estimates are positive for l >= {l_min:.2f} under the {rule} bandwidth rule"
    except ValueError:
        pass
    print(msg, file=sys.stderr)


def cmd_weights(args) -> int:
    lo, hi = DEFAULT_L_RANGE[args.estimator]
    lo = lo if args.lmin is None else args.lmin
    hi = hi if args.lmax is None else args.lmax
    kw = {"lam": args.lam} if args.estimator == "odin2" else {}
    basis = basis_for(args.estimator, args.d, **kw)
    sol = solve_weights(np.linspace(lo, hi, args.L), basis, args.N, parse_eta(args.eta))
    out = sol.to_dict()
    out.update(estimator=args.estimator, d=args.d, N=args.N, violations=sol.violations())
    _dump(out)
    return 0


def cmd_oracle(args) -> int:
    g = parse_functional(args.functional)
    var1 = args.var1 if args.var1 is not None else args.var
    var2 = args.var2 if args.var2 is not None else args.var
    if var1 is None or var2 is None:
        raise ValueError("give --var or both --var1 and --var2")
    p = TruncatedGaussianSpec.isotropic(args.d, args.mu1, var1)
    q = TruncatedGaussianSpec.isotropic(args.d, args.mu2, var2)
    ov = true_divergence(g, p, q, tol=args.tol)
    _dump(ov.to_dict())
    return 0


def cmd_sample(args) -> int:
    spec = TruncatedGaussianSpec.isotropic(args.d, args.mu, args.var)
    s = tg_sample(spec, args.n, args.seed, tuple(args.stream))
    s.to_csv(args.out, header=args.header)
    return 0


def cmd_experiment(args) -> int:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    kind = KIND_ALIASES.get(args.kind, args.kind)
    if "kind" in data and KIND_ALIASES.get(data["kind"], data["kind"]) != kind:
        print(f"note: config kind {data['kind']!r} overridden by {kind!r}", file=sys.stderr)
    data["kind"] = kind
    for name in ("seed", "threads", "trials", "out"):
        val = getattr(args, name)
        if val is not None:
            data[name] = val
    cfg = ExperimentConfig.from_dict(data)
    if cfg.out is None:
        raise ValueError("an output directory is required (--out or config 'out')")
    report = run_experiment(cfg)
    for c in report.summary["cells"]:
        status = "ok" if not c["failures"] else f"{len(c['failures'])} failed trials"
        print(f"cell {c['cell']} case={c['case']} d={c['d']} n={c['n']}: {status}", file=sys.stderr)
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="odin", description="Ensemble divergence estimation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a divergence functional from two CSV sample sets")
    p.add_argument("--estimator", required=True, help="odin1 | odin2 | plugin | combined:rho=R")
    p.add_argument("--functional", required=True, help="kl | renyi:alpha=A")
    p.add_argument("--f1", required=True, help="CSV samples from f1")
    p.add_argument("--f2", required=True, help="CSV samples from f2 (evaluation points)")
    p.add_argument("--L", type=int, default=DEFAULT_L)
    p.add_argument("--lmin", type=float)
    p.add_argument("--lmax", type=float)
    p.add_argument("--eta", default="auto", help="auto | exact | fixed:V | V")
    p.add_argument("--h", type=float, help="plug-in bandwidth")
    p.add_argument("--l", type=float, help="plug-in bandwidth index, mapped through the ODin2 rule")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("weights", help="solve ensemble weights")
    p.add_argument("--estimator", required=True, choices=["odin1", "odin2"])
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--L", type=int, default=DEFAULT_L)
    p.add_argument("--lmin", type=float)
    p.add_argument("--lmax", type=float)
    p.add_argument("--eta", default="auto")
    p.add_argument("--lambda", dest="lam", type=int)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("oracle", help="quadrature ground truth for truncated Gaussians")
    p.add_argument("--functional", required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--mu1", type=float, required=True)
    p.add_argument("--mu2", type=float, required=True)
    p.add_argument("--var", type=float)
    p.add_argument("--var1", type=float)
    p.add_argument("--var2", type=float)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sample", help="draw a truncated Gaussian sample set to CSV")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--var", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, nargs="*", default=[])
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    p.add_argument("kind", choices=["mse-sweep", "clt", "tuning", "rho", "tuning-sweep", "rho-sweep"])
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
