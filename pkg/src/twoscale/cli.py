"""Command-line entry point: ``twoscale {cell,table,run,verify}``.

Usage errors (bad arguments or config) exit with status 2, failures
during a computation with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .cell import CellProblem
from .config import defaults, parse_config
from .errors import ConfigError, TwoScaleError
from .io import write_csv, write_vtk
from .macro import make_tensors, run
from .mesh import build_cell_mesh
from .tensors import TABLE_COLUMNS, build_table, effective_lambda, effective_D, tabulate_csv_rows
from .verify import run_suite, tensor_scan


class UsageError(Exception):
    pass


def _load_config(path):
    if path is None:
        return defaults()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _tag(x):
    return format(float(x), "g")


def _write_log(out, args, cfg):
    lines = [f"command = {args.command}", f"threads = {args.threads}", f"seed = {args.seed}"]
    for (sec, key), value in cfg.values.items():
        lines.append(f"{sec}.{key} = {value!r}  # {cfg.provenance[(sec, key)]}")
    (out / "run.log").write_text("\n".join(lines) + "\n")


def cmd_cell(args, cfg, out):
    kin = cfg.kinetics(args.Q if args.Q is not None else None)
    if args.A is not None:
        kin = type(kin)(args.A, kin.u_a, kin.Q)
    mat = cfg.materials()
    mesh = build_cell_mesh(cfg["r"], cfg["n_circle"], cfg["h_cell"])
    prob = CellProblem(mesh, mat, kin)
    sol = prob.solve(args.u, args.v)
    lam = effective_lambda(sol, args.u, args.v)
    D = effective_D(sol, args.u, args.v)
    stem = f"cell_Q{_tag(kin.Q)}_A{_tag(kin.A)}_u{_tag(args.u)}_v{_tag(args.v)}"
    # omega is zero on solid-only nodes; the region field separates the phases
    write_vtk(out / f"{stem}.vtk", mesh,
              {"chi1": sol.chi[0], "chi2": sol.chi[1], "omega1": sol.omega[0], "omega2": sol.omega[1]},
              {"region": mesh.region.astype(float)})
    write_csv(out / f"{stem}_tensors.csv",
              ("u", "v", "Q", "A", "l11", "l12", "l22", "d11", "d12", "d22", "residual"),
              [(args.u, args.v, kin.Q, kin.A, lam[0, 0], lam[0, 1], lam[1, 1],
                D[0, 0], D[0, 1], D[1, 1], sol.residual)])
    print(f"cell solved at (u, v) = ({args.u:g}, {args.v:g}), residual {sol.residual:.3e}")
    return 0


def cmd_table(args, cfg, out):
    mc = cfg.macro_config(args.Q)
    ug, vg = mc.grids()
    mesh = build_cell_mesh(mc.r, mc.n_circle, mc.h_cell)
    table = build_table(ug, vg, mesh, mc.materials, mc.kinetics, workers=args.threads,
                        check=not args.no_check)
    write_csv(out / "table.csv", TABLE_COLUMNS, tabulate_csv_rows(table))
    scan = tensor_scan(table)
    (out / "table_scan.json").write_text(json.dumps(scan.as_dict(), indent=1) + "\n")
    print(f"table {len(ug)}x{len(vg)} written; min eig lambda {scan.min_eig_lam:.4g}, "
          f"D {scan.min_eig_D:.4g}; trend fraction {scan.trend_fraction:.3f}")
    return 0


def cmd_run(args, cfg, out):
    status = 0
    configs = cfg.macro_configs()
    for mc in configs:
        sub = out / f"Q_{_tag(mc.kinetics.Q)}" if len(configs) > 1 else out
        sub.mkdir(parents=True, exist_ok=True)
        tensors, scalars = make_tensors(mc, args.threads)
        res = run(mc, tensors, scalars, threads=args.threads)
        write_csv(sub / "u_avg.csv", ("t", "u_avg", "v_avg"), res.series())
        for t, u, v in res.snapshots:
            write_vtk(sub / f"state_{t:.4f}.vtk", res.mesh, {"u": u, "v": v})
        msg = (f"Q = {mc.kinetics.Q:g}: t = {res.times[-1]:.4g}, u_avg = {res.u_avg[-1]:.6g}, "
               f"v_avg = {res.v_avg[-1]:.6g}, clamped lookups {res.clamped}")
        if res.error:
            (sub / "error.txt").write_text(res.error + "\n")
            print(f"{msg}; FAILED: {res.error}", file=sys.stderr)
            status = 1
        else:
            print(msg)
    return status


def cmd_verify(args, cfg, out):
    failed = 0
    with (out / "verify.jsonl").open("w") as fh:
        for record in run_suite(quick=args.quick):
            line = json.dumps(record, default=float)
            print(line)
            fh.write(line + "\n")
            failed += not record["passed"]
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="twoscale", description="Two-scale filtration combustion solver.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="configuration file (key = value with [sections])")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker count for table builds and lookups")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks (recorded)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cell", parents=[common], help="solve the cell problem at one state")
    c.add_argument("--u", type=float, required=True, help="macroscopic temperature")
    c.add_argument("--v", type=float, required=True, help="macroscopic concentration")
    c.add_argument("--Q", type=float, help="heat release (overrides config)")
    c.add_argument("--A", type=float, help="pre-exponential factor (overrides config)")

    t = sub.add_parser("table", parents=[common], help="tabulate the effective tensors")
    t.add_argument("--Q", type=float, help="heat release (default: first config value)")
    t.add_argument("--no-check", action="store_true", help="skip the positive-definiteness check")

    sub.add_parser("run", parents=[common], help="run the macroscopic simulation(s)")
    v = sub.add_parser("verify", parents=[common], help="run the oracle suite")
    v.add_argument("--quick", action="store_true", help="skip the manufactured-solution studies")
    return p


COMMANDS = {"cell": cmd_cell, "table": cmd_table, "run": cmd_run, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        cfg = _load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        _write_log(args.out, args, cfg)
        return COMMANDS[args.command](args, cfg, args.out)
    except UsageError as exc:
        print(f"twoscale: error: {exc}", file=sys.stderr)
        return 2
    except (TwoScaleError, OSError, ValueError, ArithmeticError) as exc:
        print(f"twoscale: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
