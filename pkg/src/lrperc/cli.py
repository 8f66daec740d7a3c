"""Command line entry point: ``lrperc <subcommand> ...``.

Exit codes: 0 ok, 2 usage, 3 budget exceeded, 4 data/format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

from . import certificates, harness
from .lattice_model import Block, BlockHierarchy, Box, Params
from .metric import chemical_distance
from .renorm import InsufficientHalo, classify_block
from .sampler import BudgetExceeded, BundleError, load_bundle, sample_configuration, save_bundle

EXIT_OK, EXIT_USAGE, EXIT_BUDGET, EXIT_DATA = 0, 2, 3, 4


class UsageError(Exception):
    pass


def parse_point(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad lattice point {text!r}") from exc


def parse_distances(text: str) -> list[int]:
    """``2^9..2^13`` (powers of two), ``a..b`` (integers) or a comma list."""
    m = re.fullmatch(r"\s*2\^(\d+)\s*\.\.\s*2\^(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        return [2**e for e in range(lo, hi + 1)]
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if m:
        return list(range(int(m.group(1)), int(m.group(2)) + 1))
    try:
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad distance list {text!r}") from exc


def parse_box(text: str, d: int) -> Box:
    """``L`` (corner at the origin) or ``x1,..,xd:L``."""
    if ":" in text:
        lo, side = text.split(":", 1)
        return Box(parse_point(lo), int(side))
    return Box((0,) * d, int(text))


def _params(args) -> Params:
    return Params(args.d, args.s, args.beta, norm=args.norm, force_nn=getattr(args, "force_nn", False))


def cmd_sample(args) -> int:
    params = Params(args.d, args.s, args.beta, norm=args.norm, boundary=args.boundary, force_nn=args.force_nn)
    conf = sample_configuration(params, parse_box(args.box, args.d), args.halo, args.seed, args.backend, max_edges=args.max_edges)
    save_bundle(conf, args.out)
    print(json.dumps({"edges": conf.n_edges, "out": str(args.out)}))
    return EXIT_OK


def cmd_dist(args) -> int:
    conf = load_bundle(args.bundle)
    res = chemical_distance(conf, parse_point(args.from_), parse_point(args.to), want_witness=args.witness)
    out = {"distance": res.value if res.reachable else "UNREACHABLE"}
    if res.witness is not None:
        out["witness"] = res.witness.vertices.tolist()
    print(json.dumps(out))
    return EXIT_OK


def cmd_classify(args) -> int:
    conf = load_bundle(args.bundle)
    status = classify_block(conf, BlockHierarchy(args.M), Block(args.level, parse_point(args.corner)))
    print(status.to_json())
    return EXIT_OK


def cmd_verify_constants(args) -> int:
    if args.find_min:
        lnM = certificates.find_min_lnM(args.d, args.s, args.sprime, args.beta, k_max=args.kmax, n_max=args.kmax)
    elif args.lnM is not None:
        lnM = args.lnM
    else:
        raise UsageError("give --lnM or --find-min")
    spec = certificates.ConstantsSpec(args.d, args.s, args.sprime, args.beta, lnM)
    cert = certificates.check_inequalities(spec, args.kmax, args.kmax)
    print(json.dumps(cert.to_dict(), indent=2))
    return EXIT_OK if cert.inequalities_ok else 1


def cmd_recursion(args) -> int:
    cert = certificates.iterate_recursion(args.d, args.kmax)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "ln_pk_bound", "inductive_bound", "ok"])
    for k, (lp, b) in enumerate(zip(cert.recursion, cert.inductive_bounds)):
        w.writerow([k, f"{lp:.9g}", f"{b:.9g}", str(lp < b).lower()])
    return EXIT_OK if cert.inductive_ok else 1


def cmd_experiment(args) -> int:
    params = _params(args)
    direction = tuple(float(t) for t in args.direction.split(",")) if args.direction else (1.0,) + (0.0,) * (args.d - 1)
    plan = harness.ExperimentPlan(params, parse_distances(args.distances), direction, args.trials, args.seed, args.margin)
    result = harness.run_ratio_experiment(plan, max_edges=args.max_edges)
    text = result.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        if args.meta:
            Path(args.meta).write_text(json.dumps(result.metadata(), indent=2))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_pk(args) -> int:
    params = _params(args)
    rows = harness.estimate_block_goodness(params, args.M, args.level, args.trials, args.seed)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["level", "side", "bad", "trials", "p_hat", "ci_low", "ci_high", "exact"])
    for r in rows:
        w.writerow([r.level, r.side, r.bad, r.trials, f"{r.p_hat:.9g}", f"{r.ci_low:.9g}", f"{r.ci_high:.9g}",
                    "" if r.exact is None else f"{r.exact:.9g}"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrperc", description="Long-range percolation toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    def model_args(sp, need_beta=True):
        sp.add_argument("--d", type=int, required=True)
        sp.add_argument("--s", type=float, required=True)
        sp.add_argument("--beta", type=float, required=need_beta, default=1.0)
        sp.add_argument("--norm", choices=("euclidean", "sup", "l1"), default="euclidean")

    sp = sub.add_parser("sample", help="sample a configuration into a bundle file")
    model_args(sp)
    sp.add_argument("--box", required=True, help="side L, or 'x1,..,xd:L'")
    sp.add_argument("--halo", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--backend", choices=("skip", "hash"), default="skip")
    sp.add_argument("--boundary", choices=("free", "torus"), default="free")
    sp.add_argument("--force-nn", action="store_true")
    sp.add_argument("--max-edges", type=float, default=5e7)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("dist", help="chemical distance between two box vertices")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--from", dest="from_", required=True)
    sp.add_argument("--to", required=True)
    sp.add_argument("--witness", action="store_true")
    sp.set_defaults(func=cmd_dist)

    sp = sub.add_parser("classify", help="good/bad verdict of one block")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--M", type=int, required=True)
    sp.add_argument("--level", type=int, required=True)
    sp.add_argument("--corner", required=True)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("verify-constants", help="log-space check of the scale inequalities")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--s", type=float, required=True)
    sp.add_argument("--sprime", type=float, required=True)
    sp.add_argument("--beta", type=float, required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--lnM", type=float)
    g.add_argument("--find-min", action="store_true")
    sp.add_argument("--kmax", type=int, default=1000)
    sp.set_defaults(func=cmd_verify_constants)

    sp = sub.add_parser("recursion", help="iterate the bad-block probability recursion")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--kmax", type=int, default=200)
    sp.set_defaults(func=cmd_recursion)

    sp = sub.add_parser("experiment", help="D(0,[nv])/n statistics along a direction")
    model_args(sp)
    sp.add_argument("--direction", default=None, help="unit vector 'v1,..,vd' (default e_1)")
    sp.add_argument("--distances", default="2^9..2^13")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--margin", type=int, default=harness.DEFAULT_MARGIN)
    sp.add_argument("--force-nn", action="store_true")
    sp.add_argument("--max-edges", type=float, default=5e7)
    sp.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    sp.add_argument("--meta", default=None, help="JSON metadata path (with --out)")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("pk", help="empirical bad-block frequencies per level")
    model_args(sp)
    sp.add_argument("--M", type=int, required=True)
    sp.add_argument("--level", type=int, default=0)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--force-nn", action="store_true")
    sp.set_defaults(func=cmd_pk)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (BundleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, InsufficientHalo, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
