"""Command-line experiment runner.

Every run prints a JSON report on stdout. With ``--out DIR`` (or the
``LIELAB_OUT`` environment variable) the report is also written to
``DIR/<name>.json`` together with ``DIR/<name>.meta.json`` (timestamps,
runtime, argv) and, for sweeps, ``DIR/<name>.csv``. The report file is a
pure function of the arguments, the seed and the installed versions.

Exit codes: 0 verified or diagnostic, 2 violated, 3 inconclusive, 1 usage.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone

import numpy as np
import scipy

from . import __version__
from .expressions import ExprSyntaxError, files_in, parse, build
from .group_core import Group, make_group
from .inequality_suite import (
    INCONCLUSIVE, VERIFIED, VIOLATED, Bracket, ContainmentError, NullMeasure,
    ball_doubling_curve, check_brunn_minkowski, check_local_bm, check_minimal_doubling,
    combine, double_counting_check, kemperman_check, local_bm_sweep,
)
from .measure_engine import (
    CellRegion, HGridKey, NetMismatch, NotInvariant, ReducedKey, build_net, discretize,
    load_cellset, save_cellset,
)
from .regions import ChartError
from .subgroup_catalog import (
    UnknownSubgroup, UnsupportedGroup, builtin_subgroup, catalog_entries, critical_exponent,
    subgroup_names,
)
from . import stability_probe as sp
from . import transport_verifier as tv

GROUPS = ["so3", "su2", "t1", "t2", "t3", "t4", "so4", "so5", "so3xt1"]
NET_KINDS = ["auto", "box", "lattice", "sample", "dcoset", "class", "hgrid"]
EXIT = {VERIFIED: 0, VIOLATED: 2, INCONCLUSIVE: 3}


class UsageError(Exception):
    pass


# JSON --------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, Bracket):
        return _jsonable(v.to_list())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if hasattr(v, "to_dict"):
        return _jsonable(v.to_dict())
    if hasattr(v, "__dataclass_fields__"):
        return _jsonable({k: getattr(v, k) for k in v.__dataclass_fields__})
    return v


def dumps(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


def versions():
    return {"lielab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# nets and sets ---------------------------------------------------------------------

def _reduced_candidates(G: Group, hint=None):
    names = [hint] if hint else subgroup_names(G)
    for kind in ("dcoset", "class", "hgrid"):
        for nm in ([None] if kind == "class" else names):
            try:
                H = builtin_subgroup(G, nm) if nm is not None else None
                key = HGridKey(G, H) if kind == "hgrid" else ReducedKey(kind, G, H)
            except (ValueError, KeyError, AttributeError, IndexError, UnknownSubgroup):
                continue
            yield kind, H, key


def choose_net(G: Group, nodes, cells: int, seed: int, kind="auto", subgroup=None, allow_reduced=True,
               prefer=None):
    """Pick the cheapest exact net that holds every set, else a generic one."""
    generic = "lattice" if G.name.startswith("t") and G.name[1:].isdigit() else None
    if kind != "auto":
        H = builtin_subgroup(G, subgroup) if kind in ("dcoset", "hgrid") else None
        return build_net(G, cells, seed, kind, H)
    has_files = any(files_in(n) for n in nodes)
    if allow_reduced and not has_files:
        regions = [build(n, G) for n in nodes]
        cands = list(_reduced_candidates(G, subgroup))
        if prefer:
            cands.sort(key=lambda c: c[0] != prefer)
        for k, H, key in cands:
            if all(r.reduced(key) is not None for r in regions):
                return build_net(G, cells, seed, k, H)
    return build_net(G, cells, seed, generic)


def load_sets(args, G, texts, allow_reduced=True, prefer=None):
    nodes = []
    for t in texts:
        nodes.append(parse(t))
    net = choose_net(G, nodes, args.cells, args.seed, args.net, args.subgroup, allow_reduced, prefer)
    stored = {}

    def loader(path):
        if path not in stored:
            stored[path] = load_cellset(path, net)
        return CellRegion(stored[path])

    sets = []
    for n in nodes:
        if n.op == "file":
            loader(n.args[0])
            sets.append(stored[n.args[0]])
        else:
            sets.append(discretize(build(n, G, loader), net))
    return net, sets


# subcommands ---------------------------------------------------------------------

def cmd_groups(args, G):
    out = []
    for nm in GROUPS:
        g = make_group(nm)
        subs = []
        for s in subgroup_names(g):
            H = builtin_subgroup(g, s)
            subs.append(H.describe())
        out.append({"name": g.name, "dim": g.dim, "param_dim": g.param_dim, "abelian": g.abelian,
                    "critical_exponent": critical_exponent(g),
                    "injectivity_radius": g.injectivity_radius, "subgroups": subs})
    table = [{"family": e.family, "rank": e.rank, "dim_g": e.dim_g, "codim": e.codim}
             for e in catalog_entries()]
    return {"groups": out, "catalog": table}, None, None


def cmd_doubling(args, G):
    net, (A,) = load_sets(args, G, [args.set])
    rep = check_minimal_doubling(A, G, C=args.C, seed=args.seed)
    _maybe_save(args, A)
    return {"check": rep.to_dict(), "net": net.describe()}, rep.verdict, None


def cmd_bm(args, G):
    net, (A, B) = load_sets(args, G, [args.setA, args.setB])
    k = critical_exponent(G) if args.k is None else args.k
    rep = check_brunn_minkowski(A, B, k, args.alpha, seed=args.seed)
    return {"check": rep.to_dict(), "net": net.describe()}, rep.verdict, None


def cmd_kemperman(args, G):
    net, (A, B) = load_sets(args, G, [args.setA, args.setB])
    rep = kemperman_check(A, B, seed=args.seed)
    return {"check": rep.to_dict(), "net": net.describe()}, rep.verdict, None


def cmd_local_bm(args, G):
    if args.sweep:
        rhos = _floats(args.sweep, "--sweep")

        nets = []

        def pair(rho):
            net, (A,) = load_sets(args, G, [f"ball:e:{rho!r}"])
            nets.append(net.describe())
            return A, A

        reps, fit = local_bm_sweep(pair, rhos, args.max_rel_width)
        rows = [["rho", "eps_lower", "eps_upper", "used"]]
        for rho, r, u in zip(rhos, reps, fit["used"]):
            eb = r.fitted_constants.get("eps_bracket", Bracket(float("nan"), float("nan")))
            rows.append([repr(rho), repr(eb.lower), repr(eb.upper), int(u)])
        return {"sweep": [r.to_dict() for r in reps], "fit": fit, "net": nets[-1]}, None, rows
    if args.setA is None or args.setB is None or args.rho is None:
        raise UsageError("local-bm needs --setA, --setB and --rho (or --sweep)")
    net, (A, B) = load_sets(args, G, [args.setA, args.setB])
    rep = check_local_bm(A, B, args.rho, seed=args.seed, eps=args.eps)
    return {"check": rep.to_dict(), "net": net.describe()}, rep.verdict, None


def cmd_balls(args, G):
    rhos = _floats(args.rhos, "--rhos")
    curve = ball_doubling_curve(G, rhos, args.samples, args.seed)
    rows = [["rho", "ratio", "stderr"]] + [[repr(r), repr(v), repr(e)]
                                           for r, v, e in zip(curve.rhos, curve.ratios, curve.stderr)]
    return {"curve": curve.to_dict()}, None, rows


def cmd_double_counting(args, G):
    H = builtin_subgroup(G, args.subgroup)
    args.subgroup = H.name
    net, (X,) = load_sets(args, G, [args.set], prefer="hgrid")
    rep = double_counting_check(X, H, args.delta, args.rho, args.nh, args.seed)
    return {"check": rep.to_dict(), "net": net.describe()}, rep.verdict, None


def cmd_fit_tube(args, G):
    net, (A,) = load_sets(args, G, [args.set], allow_reduced=False)
    fit = sp.fit_tube(A, n_candidates=args.candidates, seed=args.seed)
    return {"fit": fit.to_dict(), "net": net.describe(), "set": A.description}, None, None


def cmd_slices(args, G):
    H = builtin_subgroup(G, args.subgroup)
    args.subgroup = H.name
    net, (A,) = load_sets(args, G, [args.set], prefer="hgrid")
    prof = sp.slice_profile(A, H, args.delta, args.rho, args.nh, args.seed)
    rows = [["h", "lower", "upper"]] + [[repr(h), repr(lo), repr(hi)]
                                        for h, lo, hi in zip(prof.h_params, prof.lower, prof.upper)]
    return {"profile": prof.to_dict(), "net": net.describe()}, None, rows


def cmd_rays(args, G):
    node = parse(args.set)
    if files_in(node):
        net = build_net(G, args.cells, args.seed, None if args.net == "auto" else args.net)
        reg = build(node, G, lambda p: CellRegion(load_cellset(p, net)))
    else:
        reg = build(node, G)
    prof = sp.ray_profile(reg, G, args.rho, args.dirs, args.steps, args.rho_min, args.eps, args.seed)
    rows = [["direction", *(f"u{i}" for i in range(G.dim)), "start", "length", "density", "passed"]]
    for i, (u, s, L, d, p) in enumerate(zip(prof.directions, prof.starts, prof.lengths,
                                              prof.densities, prof.passed)):
        rows.append([i, *(repr(float(x)) for x in u), repr(float(s)), repr(float(L)), repr(float(d)),
                     int(p)])
    return {"rays": prof.to_dict(), "set": reg.description}, None, rows


def cmd_scales(args, G):
    net, (L,) = load_sets(args, G, [args.set], allow_reduced=False)
    spec = sp.scale_spectrum(L, args.m, args.K)
    rows = [["radius", "covering_number"]] + [[repr(r), int(c)]
                                               for r, c in zip(spec.radii, spec.covering_numbers)]
    return {"spectrum": spec.to_dict(), "net": net.describe()}, None, rows


def cmd_ot_verify(args, G):
    rng = np.random.default_rng(args.seed)
    if args.source and args.target:
        src, tgt = tv.read_cloud_csv(args.source), tv.read_cloud_csv(args.target)
    elif args.demo == "cube":
        src = tv.uniform_cube_cloud(args.n, args.dim, 1.0, rng)
        tgt = tv.uniform_cube_cloud(args.n, args.dim, args.scale, rng)
    elif args.demo == "ball":
        src = tv.uniform_ball_cloud(args.n, args.dim, args.radius, rng)
        tgt = tv.uniform_ball_cloud(args.n, args.dim, args.radius * args.scale, rng)
    else:
        raise UsageError("ot-verify needs --source and --target, or --demo cube|ball")
    plan = tv.solve_ot(src, tgt, args.mode)
    mono = tv.check_cyclical_monotonicity(plan, seed=args.seed)
    ma = tv.monge_ampere_ratio_check(plan, args.k) if min(src.n, tgt.n) > args.k + 1 else None
    doc = {"plan": {"method": plan.method, "cost": plan.cost, "certificate": plan.certificate,
                    "support": len(plan.mass), "n_source": src.n, "n_target": tgt.n},
           "monotonicity": mono, "monge_ampere": ma}
    checks = [mono.passed, plan.certificate.get("duality_gap", 0.0) <= 1e-6 or plan.method == "entropic"]
    if ma is not None and ma.passed is not None:
        checks.append(ma.passed)
    if args.group_map:
        if G.dim != src.dim:
            raise UsageError(f"--group {G.name} has dimension {G.dim}, clouds have {src.dim}")
        gm = tv.group_bm_map(plan, G, seed=args.seed)
        doc["group_map"] = gm
        checks.append(gm.passed)
    rows = [["i", "j", "mass"]] + [[int(i), int(j), repr(float(m))]
                                   for i, j, m in zip(plan.rows, plan.cols, plan.mass)]
    return doc, VERIFIED if all(checks) else VIOLATED, rows


def cmd_amgm(args, G):
    rep = tv.jacobian_amgm_check(args.d, args.trials, args.rho, args.seed, not args.no_perturb, args.c_ref)
    return {"amgm": rep}, VERIFIED if rep.passed else VIOLATED, None


def cmd_report_merge(args, G):
    docs = []
    for p in args.inputs:
        with open(p, encoding="utf-8") as f:
            docs.append(json.load(f))
    docs.sort(key=lambda d: (d.get("command", ""), json.dumps(d.get("config", {}), sort_keys=True)))
    verdicts = [d["verdict"] for d in docs if d.get("verdict") in EXIT]
    counts = {v: verdicts.count(v) for v in (VERIFIED, VIOLATED, INCONCLUSIVE)}
    overall = combine(verdicts) if verdicts else None
    return {"reports": docs, "counts": counts, "overall": overall}, overall, None


# plumbing ----------------------------------------------------------------------------

def _floats(text, flag):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got '{text}'") from None
    if not vals:
        raise UsageError(f"{flag} grid is empty")
    return vals


def _maybe_save(args, A):
    if getattr(args, "save_cells", None):
        save_cellset(A, args.save_cells)


def _add_common(p, sets=(), cells=100_000):
    p.add_argument("--group", default="so3", help="carrier group (see `groups`)")
    p.add_argument("--cells", type=int, default=cells, help="target net size")
    p.add_argument("--seed", type=int, default=0, help="master seed (recorded in the report)")
    p.add_argument("--net", choices=NET_KINDS, default="auto")
    p.add_argument("--subgroup", default=None, help="subgroup name for reduced nets and slices")
    p.add_argument("--out", default=os.environ.get("LIELAB_OUT"),
                   help="output directory (default $LIELAB_OUT; stdout only when unset)")
    p.add_argument("--name", default=None, help="file stem for outputs (default: the command)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    for s in sets:
        p.add_argument(f"--{s}", required=False, default=None, help="set expression")


def build_parser():
    ap = argparse.ArgumentParser(prog="lielab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"lielab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("groups", help="list carrier groups and the maximal-subgroup catalog")
    _add_common(p)
    p.set_defaults(fn=cmd_groups)

    p = sub.add_parser("doubling", help="minimal doubling check for one set")
    _add_common(p, ["set"])
    p.add_argument("--C", type=float, default=None, help="reference constant (default 2^(k+1))")
    p.add_argument("--save-cells", default=None, help="store the discretized set for file: reuse")
    p.set_defaults(fn=cmd_doubling, needs=["set"])

    p = sub.add_parser("bm", help="Brunn-Minkowski check with exponent k")
    _add_common(p, ["setA", "setB"])
    p.add_argument("--k", type=float, default=None, help="exponent (default: critical exponent)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(fn=cmd_bm, needs=["setA", "setB"])

    p = sub.add_parser("local-bm", help="local Brunn-Minkowski check inside B(e, rho)")
    _add_common(p, ["setA", "setB"])
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--eps", type=float, default=0.0, help="reference deficit for the verdict")
    p.add_argument("--sweep", default=None, help="comma-separated rho grid for A = B = B(e, rho)")
    p.add_argument("--max-rel-width", type=float, default=0.5)
    p.set_defaults(fn=cmd_local_bm)

    p = sub.add_parser("kemperman", help="Kemperman inequality")
    _add_common(p, ["setA", "setB"])
    p.set_defaults(fn=cmd_kemperman, needs=["setA", "setB"])

    p = sub.add_parser("balls", help="ball doubling curve and curvature fit")
    _add_common(p)
    p.add_argument("--rhos", default="0.02,0.04,0.06,0.08,0.1")
    p.add_argument("--samples", type=int, default=200_000)
    p.set_defaults(fn=cmd_balls)

    p = sub.add_parser("double-counting", help="slice integral identity over a subgroup")
    _add_common(p, ["set"], cells=1_600_000)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--nh", type=int, default=500)
    p.set_defaults(fn=cmd_double_counting, needs=["set"])

    p = sub.add_parser("ot-verify", help="optimal transport solve and certificate checks")
    _add_common(p)
    p.add_argument("--source", default=None, help="point cloud CSV")
    p.add_argument("--target", default=None, help="point cloud CSV")
    p.add_argument("--demo", choices=["cube", "ball"], default=None)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--scale", type=float, default=1.5)
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--k", type=int, default=20, help="k-NN size for the Monge-Ampere ratio")
    p.add_argument("--mode", choices=["auto", "assignment", "lp", "entropic"], default="auto")
    p.add_argument("--group-map", action="store_true", help="also push the plan through the group law")
    p.set_defaults(fn=cmd_ot_verify)

    p = sub.add_parser("amgm", help="perturbed determinant AM-GM check")
    _add_common(p)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--no-perturb", action="store_true")
    p.add_argument("--c-ref", type=float, default=None)
    p.set_defaults(fn=cmd_amgm)

    p = sub.add_parser("fit-tube", help="fit a conjugated subgroup tube to a set")
    _add_common(p, ["set"])
    p.add_argument("--candidates", type=int, default=200)
    p.set_defaults(fn=cmd_fit_tube, needs=["set"])

    p = sub.add_parser("slices", help="slice measures along a subgroup")
    _add_common(p, ["set"], cells=1_600_000)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--nh", type=int, default=64)
    p.set_defaults(fn=cmd_slices, needs=["set"])

    p = sub.add_parser("rays", help="radial ray profile of a set near e")
    _add_common(p, ["set"])
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--dirs", type=int, default=500)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--rho-min", type=float, default=None)
    p.add_argument("--eps", type=float, default=0.1)
    p.set_defaults(fn=cmd_rays, needs=["set"])

    p = sub.add_parser("scales", help="covering-number scale spectrum of an approximate subgroup")
    _add_common(p, ["set"])
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--K", type=float, default=8.0)
    p.set_defaults(fn=cmd_scales, needs=["set"])

    p = sub.add_parser("report-merge", help="merge JSON reports into one document")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default=os.environ.get("LIELAB_OUT"))
    p.add_argument("--name", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_report_merge, group="so3", seed=None)
    return ap


def _config(args):
    skip = {"fn", "needs", "out", "name", "threads", "save_cells"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)


def run(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    for flag in getattr(args, "needs", []):
        if getattr(args, flag) is None:
            raise UsageError(f"--{flag} is required for {args.command}")
    G = make_group(args.group)
    body, verdict, rows = args.fn(args, G)
    doc = {"command": args.command, "config": _config(args), "seed": args.seed,
           "versions": versions(), "verdict": verdict or "diagnostic", "result": body}
    net = body.get("net") if isinstance(body, dict) else None
    doc["net_hash"] = net.get("net_hash") if isinstance(net, dict) else None
    text = dumps(doc)
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        stem = os.path.join(args.out, args.name or args.command)
        with open(stem + ".json", "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        if rows:
            _write_rows(stem + ".csv", rows)
        meta = {"started": started.isoformat(), "runtime_s": time.perf_counter() - t0,
                "argv": sys.argv[1:], "host": platform.node()}
        with open(stem + ".meta.json", "w", encoding="utf-8", newline="\n") as f:
            f.write(dumps(meta))
    return EXIT.get(verdict, 0)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    limiter = None
    if args.threads:
        try:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(args.threads)
        except ImportError:
            os.environ["OMP_NUM_THREADS"] = str(args.threads)
    try:
        return run(args)
    except ExprSyntaxError as e:
        print(f"lielab: set expression error at {e}", file=sys.stderr)
        return 1
    except (UsageError, UnknownSubgroup, UnsupportedGroup) as e:
        print(f"lielab: {e}", file=sys.stderr)
        return 1
    except (ChartError, ContainmentError, NullMeasure, NotInvariant, NetMismatch, ValueError,
            OSError) as e:
        print(f"lielab: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
