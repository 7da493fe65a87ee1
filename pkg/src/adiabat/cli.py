"""Command-line front door for the adiabat library.

Subcommands cover the exact layer (spinc, fix, count), the braid layer
(braid-census, braid-make), and the numerical layer (vortex, transport,
newton, check-identities).  Output is JSON by default, CSV where tabular
via --format csv.  Exit codes: 0 success, 1 validation error, 2 numerical
non-convergence; library errors surface as machine-readable JSON on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .errors import AdiabatError
from .zlattice import IntMatrix, cokernel
from .topology import (count_large_d, jacobian_fixed_points, spinc_classes,
                       validate_mapping_class)
from .braid import (TorusBraid, braid_census, braid_construct,
                    braid_validate)
from .vortexfield import (FlatBundleFamily, FlatCurve, moment_residual,
                          save_vortex_config, vortex_solve, wrap_twist)
from .transport import numeric_monodromy, transport
from .monopole import (assemble_adiabatic, config_norm_diff, identity_check,
                       newton_refine, save_config3d, sw_map, weighted_norm)


def parse_matrix(text: str) -> IntMatrix:
    """Row-major integer matrix syntax: "a,b;c,d"."""
    try:
        rows = [[int(x) for x in row.split(",")] for row in text.split(";")]
    except ValueError as exc:
        raise ValueError(f"bad --matrix syntax {text!r}: {exc}") from exc
    return IntMatrix.from_rows(rows)


def parse_floats(text: str):
    return [float(x) for x in text.split(",")]


def _emit(payload: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
        if not payload.endswith("\n"):
            sys.stdout.write("\n")


def _csv_rows(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load_braid(path: str) -> TorusBraid:
    with open(path) as fh:
        return braid_validate(TorusBraid.from_json(fh.read()))


def _curve(args) -> FlatCurve:
    mod = complex(*args.modulus)
    return FlatCurve(modulus=mod, n=args.grid)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_spinc(args) -> int:
    mc = validate_mapping_class(args.genus, parse_matrix(args.matrix))
    classes = spinc_classes(mc, args.degree)
    if args.format == "csv":
        payload = _csv_rows(
            ["degree", "torsion_class"],
            [[s.degree, " ".join(str(x) for x in s.torsion_class)]
             for s in classes])
    else:
        payload = json.dumps(
            [{"degree": s.degree, "torsion_class": list(s.torsion_class)}
             for s in classes], indent=2, sort_keys=True)
    _emit(payload, args.out)
    return 0


def cmd_fix(args) -> int:
    mc = validate_mapping_class(args.genus, parse_matrix(args.matrix))
    pts = jacobian_fixed_points(mc)
    if args.format == "csv":
        payload = _csv_rows(
            ["fixed_point", "torsion_class"],
            [[" ".join(str(c) for c in x.coordinates),
              " ".join(str(c) for c in lab)] for x, lab in pts])
    else:
        payload = json.dumps(
            [{"fixed_point": [str(c) for c in x.coordinates],
              "torsion_class": list(lab)} for x, lab in pts],
            indent=2, sort_keys=True)
    _emit(payload, args.out)
    return 0


def cmd_count(args) -> int:
    mc = validate_mapping_class(args.genus, parse_matrix(args.matrix))
    table = count_large_d(mc, args.rank, args.degree)
    payload = table.to_csv() if args.format == "csv" else table.to_json()
    _emit(payload, args.out)
    return 0


def cmd_braid_census(args) -> int:
    census = braid_census(_load_braid(args.braid))
    if args.format == "csv":
        payload = _csv_rows(
            ["class", "count"],
            [[" ".join(str(x) for x in c), n]
             for c, n in sorted(census.per_class_counts.items())])
    else:
        payload = census.to_json()
    _emit(payload, args.out)
    return 0


def cmd_braid_make(args) -> int:
    mc = validate_mapping_class(args.genus, parse_matrix(args.matrix))
    with open(args.targets) as fh:
        raw = json.load(fh)
    targets = {tuple(int(x) for x in item["class"]): int(item["count"])
               for item in raw}
    grp = cokernel(mc.one_minus_fstar)
    targets = {grp.normalize(list(c)): n for c, n in targets.items()}
    braid = braid_construct(mc, targets, args.rank)
    _emit(braid.to_json(), args.out)
    return 0


def cmd_vortex(args) -> int:
    curve = _curve(args)
    hol = np.array([[float(x) for x in row.split(",")]
                    for row in args.holonomies.split(";")])
    cfg, increments = vortex_solve(curve, hol, args.component, args.tau)
    res = moment_residual(cfg, args.tau)
    report = {
        "n": curve.n,
        "modulus": [curve.modulus.real, curve.modulus.imag],
        "component": args.component,
        "holonomy": list(cfg.holonomy()),
        "moment_residual": res,
        "phi_l2_sq": cfg.phi_l2_sq(),
        "newton_increments": increments,
    }
    if args.out:
        save_vortex_config(args.out, cfg, 0.0)
    _emit(json.dumps(report, indent=2, sort_keys=True), None)
    return 0


def cmd_transport(args) -> int:
    braid = _load_braid(args.braid)
    family = FlatBundleFamily.from_braid(braid, tau_bar=args.tau)
    curve = _curve(args)
    perm = numeric_monodromy(curve, family, braid, steps=args.tsteps,
                             tol=args.tolerance)
    if args.out:
        start, _ = vortex_solve(curve, family.holonomies(0.0), 0,
                                family.tau())
        trace = transport(curve, family, start, args.tsteps,
                          tol=args.tolerance)
        with open(args.out, "w") as fh:
            fh.write(trace.to_jsonl())
    report = {"permutation": list(perm),
              "braid_permutation": list(braid.closing_permutation),
              "match": list(perm) == list(braid.closing_permutation)}
    _emit(json.dumps(report, indent=2, sort_keys=True), None)
    return 0


def _assemble(args):
    braid = _load_braid(args.braid)
    family = FlatBundleFamily.from_braid(braid, tau_bar=args.tau)
    curve = _curve(args)
    k0 = next(k for k in range(family.N)
              if family.closing_permutation[k] == k)
    start, _ = vortex_solve(curve, family.holonomies(0.0), k0, family.tau())
    steps = max(args.tsteps, 4 * args.slices)
    trace = transport(curve, family, start, steps, tol=args.tolerance)
    return assemble_adiabatic(trace, family, args.slices, k0=k0)


def cmd_newton(args) -> int:
    Xi0 = _assemble(args)
    rows = []
    for eps in parse_floats(args.eps):
        r0 = weighted_norm(Xi0, sw_map(Xi0, eps), eps, 2, 0).value
        Xi_eps, log = newton_refine(Xi0, eps)
        diff = config_norm_diff(Xi_eps, Xi0, eps, 2, 1).value
        rows.append({"eps": eps, "residual_0_2_eps": r0,
                     "distance_1_2_eps": diff, "iterations": log})
        if args.out:
            save_config3d(f"{args.out}_eps{eps:g}", Xi_eps, eps)
    _emit(json.dumps(rows, indent=2, sort_keys=True), None)
    return 0


def cmd_check_identities(args) -> int:
    Xi0 = _assemble(args)
    report = identity_check(Xi0, samples=args.samples, seed=args.seed)
    _emit(json.dumps(report, indent=2, sort_keys=True), None)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_matrix_flags(p):
    p.add_argument("--matrix", required=True,
                   help='integer matrix, row-major: "a,b;c,d"')
    p.add_argument("--genus", type=int, default=1)


def _add_output_flags(p):
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", default=None, help="write output to a file")


def _add_numeric_flags(p):
    p.add_argument("--grid", type=int, default=16,
                   help="spatial grid resolution n")
    p.add_argument("--modulus", type=float, nargs=2, default=[0.0, 1.0],
                   metavar=("RE", "IM"))
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--tolerance", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="adiabat",
        description="multi-monopole counts and adiabatic realization on "
                    "genus-1 mapping tori")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spinc", help="enumerate degree-d spin^c classes")
    _add_matrix_flags(p)
    p.add_argument("--degree", type=int, required=True)
    _add_output_flags(p)
    p.set_defaults(func=cmd_spinc)

    p = sub.add_parser("fix", help="Jacobian fixed points with classes")
    _add_matrix_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_fix)

    p = sub.add_parser("count", help="large-degree signed count table")
    _add_matrix_flags(p)
    p.add_argument("--rank", type=int, required=True, help="spinor rank N")
    p.add_argument("--degree", type=int, required=True)
    _add_output_flags(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("braid-census", help="census of a braid file")
    p.add_argument("--braid", required=True)
    _add_output_flags(p)
    p.set_defaults(func=cmd_braid_census)

    p = sub.add_parser("braid-make",
                       help="construct a braid hitting target class counts")
    _add_matrix_flags(p)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--targets", required=True,
                   help='JSON file: [{"class": [..], "count": k}, ...]')
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)
    p.set_defaults(func=cmd_braid_make)

    p = sub.add_parser("vortex", help="single framed multi-vortex solve")
    p.add_argument("--holonomies", required=True,
                   help='per-summand holonomies "a,b;c,d;..."')
    p.add_argument("--component", type=int, default=0,
                   help="summand carrying the holomorphic section")
    _add_numeric_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_vortex)

    p = sub.add_parser("transport",
                       help="numeric monodromy of a braid family")
    p.add_argument("--braid", required=True)
    p.add_argument("--tsteps", type=int, default=200)
    _add_numeric_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("newton",
                       help="adiabatic assembly plus refinement over eps")
    p.add_argument("--braid", required=True)
    p.add_argument("--tsteps", type=int, default=128)
    p.add_argument("--slices", type=int, default=16,
                   help="t-slices m of the 3D configuration")
    p.add_argument("--eps", default="0.2,0.1,0.05",
                   help="comma-separated eps list")
    _add_numeric_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_newton)

    p = sub.add_parser("check-identities",
                       help="operator identity residuals at a solution")
    p.add_argument("--braid", required=True)
    p.add_argument("--tsteps", type=int, default=128)
    p.add_argument("--slices", type=int, default=16)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)
    _add_numeric_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_check_identities)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        try:
            args = ap.parse_args(argv)
        except SystemExit as exc:
            # argparse exits 2 on usage errors; that code is reserved for
            # numerical failures here
            return 0 if exc.code in (0, None) else 1
        return args.func(args)
    except AdiabatError as exc:
        sys.stderr.write(json.dumps(exc.to_json(), sort_keys=True) + "\n")
        return exc.exit_code
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)},
            sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
