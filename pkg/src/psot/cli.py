"""Command-line interface: one JSON report on stdout per run, artifacts written to files.

Exit codes: 0 success, 1 failing fixtures, 2 bad arguments or inputs,
3 I/O failure, 4 size guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from .exact import SizeGuardError, w2_exact, w_nu_disintegration, w_nu_lp
from .expected import expected_plan
from .flows import FlowConfig, _sw_grad, config_dict, run_flow
from .measures import DiscreteMeasure, load_cloud, sample_sphere, save_cloud
from .pivot import min_ps, ps_theta

EXIT_FIXTURE_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_GUARD = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    return [int(round(v)) for v in _floats(text)]


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    try:
        return max(1, int(os.environ.get("PSOT_THREADS", "1")))
    except ValueError:
        return 1


def _emit(report: dict):
    print(json.dumps(report, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _sqrt(v: float) -> float:
    return math.sqrt(max(v, 0.0))


def cmd_compute(args) -> dict:
    mu1 = load_cloud(args.a)
    mu2 = load_cloud(args.b)
    m = args.method
    out: dict = {"method": m}
    plan = None
    if m == "ps":
        if args.theta is None:
            raise ValueError("--method ps needs --theta")
        res = ps_theta(mu1, mu2, args.theta, tie_tol=args.tie_tol)
        cost_sq, plan = res.cost_sq, res.plan
        out.update(theta=res.theta.theta, path=res.meta.get("path"))
    elif m == "minps":
        res = min_ps(mu1, mu2, L=args.L, seed=args.seed, refine=args.refine, tie_tol=args.tie_tol,
                     threads=_threads(args))
        cost_sq, plan = res.cost_sq, res.plan
        out.update(theta=res.theta.theta, sampled_best=res.meta["sampled_best"])
    elif m == "es":
        plan, es = expected_plan(mu1, mu2, sample_sphere(mu1.dim, args.L, args.seed), tie_tol=args.tie_tol)
        cost_sq = es * es
    elif m == "w2":
        cost_sq, plan = w2_exact(mu1, mu2)
    elif m == "wnu":
        if args.pivot is None:
            raise ValueError("--method wnu needs --pivot")
        nu = load_cloud(args.pivot)
        cost_sq, three = w_nu_lp(nu, mu1, mu2)
        plan = three.bimarginal("12")
        try:
            out["disintegration"] = w_nu_disintegration(nu, mu1, mu2, on_nonunique="vertices")
        except Exception as exc:  # informational only
            out["disintegration"] = None
            out["disintegration_error"] = str(exc)
    else:
        raise ValueError(f"unknown method {m!r}")
    out.update(cost=_sqrt(cost_sq), cost_sq=cost_sq)
    if args.plan_out:
        plan.to_csv(args.plan_out)
        out["plan_out"] = args.plan_out
    return out


def cmd_flow(args) -> dict:
    cfg = FlowConfig(functional=args.functional, L=args.L, optimizer=args.optimizer, lr=args.lr,
                     iterations=args.iters, seed=args.seed, eval_every=args.eval_every, refine=args.refine,
                     theta=None if args.theta is None else tuple(args.theta), tie_tol=args.tie_tol)
    source = load_cloud(args.source)
    target = load_cloud(args.target)
    trace = run_flow(source, target, cfg)
    if args.trace:
        trace.to_csv(args.trace)
    if args.positions_out:
        save_cloud(DiscreteMeasure(trace.final_positions, source.weights), args.positions_out)
    evaluated = [v for v in trace.w2sq if not math.isnan(v)]
    return {"config": config_dict(cfg), "final_loss": trace.final_loss,
            "final_w2sq": evaluated[-1] if evaluated else None, "iterations": trace.iters[-1],
            "converged": trace.converged, "trace": args.trace}


def cmd_fixtures(args) -> dict:
    from .fixtures import run_fixtures

    rows = run_fixtures(args.filter)
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']:<15} expected {r['expected']:<22} "
              f"computed {r['computed']}", file=sys.stderr)
    return {"fixtures": rows, "all_pass": all(r["pass"] for r in rows)}


def _bench_one(method, mu, nu, L, seed, threads):
    t0 = time.perf_counter()
    if method == "minps":
        cost = min_ps(mu, nu, L=L, seed=seed, threads=threads).cost_sq
    elif method == "es":
        cost = expected_plan(mu, nu, sample_sphere(mu.dim, L, seed))[1] ** 2
    elif method == "sw":
        cost = _sw_grad(mu.points, nu, sample_sphere(mu.dim, L, seed))[1]
    elif method == "w2":
        cost = w2_exact(mu, nu)[0]
    else:
        raise ValueError(f"unknown bench method {method!r}")
    return time.perf_counter() - t0, float(cost)


def cmd_bench(args) -> dict:
    rows = []
    rng = np.random.default_rng(args.seed)
    for n in args.n_list:
        X = rng.standard_normal((n, args.d))
        Y = rng.standard_normal((n, args.d)) + 1.0
        mu, nu = DiscreteMeasure(X), DiscreteMeasure(Y)
        for method in args.methods:
            sec, cost = _bench_one(method, mu, nu, args.L, args.seed, _threads(args))
            rows.append({"n": n, "d": args.d, "L": args.L, "method": method, "seconds": sec, "cost_sq": cost})
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["n", "d", "L", "method", "seconds", "cost_sq"])
            w.writeheader()
            w.writerows(rows)
    return {"rows": rows, "out": args.out}


def cmd_color_transfer(args) -> dict:
    from .apps import color_transfer, load_image, save_image

    src = load_image(args.source)
    tgt = load_image(args.target)
    out = color_transfer(src, tgt, method=args.method, L=args.L, seed=args.seed, sw_steps=args.steps)
    save_image(out, args.out)
    return {"method": args.method, "source_pixels": src.measure.n, "target_pixels": tgt.measure.n,
            "out": args.out}


def cmd_register(args) -> dict:
    from .apps import icp_register

    source = load_cloud(args.source)
    target = load_cloud(args.target)
    params = {"L": args.L, "refine": args.refine}
    res = icp_register(source, target, correspondence=args.method, iters=args.iters, params=params,
                       seed=args.seed)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(res.to_json())
    if args.out:
        save_cloud(DiscreteMeasure(res.transform.apply(source.points), source.weights), args.out)
    return dict(res.report(), report=args.report, out=args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="psot", description="Pivot sliced and expected sliced optimal transport tools.")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $PSOT_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compute", help="cost (and plan) between two clouds")
    c.add_argument("--method", required=True, choices=["ps", "minps", "es", "w2", "wnu"])
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--pivot")
    c.add_argument("--theta", type=_floats)
    c.add_argument("--L", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--refine", action="store_true")
    c.add_argument("--plan-out")
    c.add_argument("--tie-tol", type=float, default=None)
    c.set_defaults(func=cmd_compute)

    f = sub.add_parser("flow", help="particle gradient flow toward a target cloud")
    f.add_argument("--functional", required=True, choices=["sw", "ps", "minps", "es"])
    f.add_argument("--source", required=True)
    f.add_argument("--target", required=True)
    f.add_argument("--iters", type=int, default=500)
    f.add_argument("--lr", type=float, default=0.02)
    f.add_argument("--L", type=int, default=50)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    f.add_argument("--theta", type=_floats)
    f.add_argument("--refine", action="store_true")
    f.add_argument("--tie-tol", type=float, default=None)
    f.add_argument("--trace")
    f.add_argument("--eval-every", type=int, default=0)
    f.add_argument("--positions-out")
    f.set_defaults(func=cmd_flow)

    x = sub.add_parser("fixtures", help="check the built-in instances with known answers")
    x.add_argument("--filter")
    x.set_defaults(func=cmd_fixtures)

    b = sub.add_parser("bench", help="wall-clock timings on Gaussian clouds")
    b.add_argument("--n-list", type=_ints, required=True)
    b.add_argument("--d", type=int, default=2)
    b.add_argument("--L", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--methods", type=lambda s: s.split(","), default=["minps", "es", "sw"])
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("color-transfer", help="recolour an image with another image's palette")
    t.add_argument("--source", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--method", choices=["minps_perm", "es_barycentric", "sw_flow"], default="minps_perm")
    t.add_argument("--out", required=True)
    t.add_argument("--L", type=int, default=50)
    t.add_argument("--steps", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_color_transfer)

    r = sub.add_parser("register", help="rigid ICP registration of two clouds")
    r.add_argument("--source", required=True)
    r.add_argument("--target", required=True)
    r.add_argument("--method", choices=["nn", "w2", "sw_flow", "minps", "es_barycentric"], default="minps")
    r.add_argument("--iters", type=int, default=50)
    r.add_argument("--L", type=int, default=50)
    r.add_argument("--refine", action="store_true")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--report")
    r.add_argument("--out")
    r.set_defaults(func=cmd_register)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        outputs = args.func(args)
    except SizeGuardError as exc:
        print(f"guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    inputs = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _emit({"command": ["psot", *argv], "inputs": inputs, "outputs": outputs,
           "seconds": time.perf_counter() - t0})
    if args.command == "fixtures" and not outputs["all_pass"]:
        return EXIT_FIXTURE_FAIL
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
