"""Command-line front end.

    notchvi study --config configs/b1.json --out results/
    notchvi solve3d --config configs/b1.json --set geometry.eps=0.125 --out out/
    notchvi verify-assumptions --config configs/b1.json
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .coefficients import validate_assumptions
from .errors import ConfigError, NotConverged, SweepTooShort, UnsupportedRegime
from .full_model import solve_full, write_flux, write_solution
from .limit_model import solve_limit, write_limit
from .mesh import build_beam_mesh, build_limit_meshes, write_mesh
from .study import run_study, write_csv, write_json

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_REGIME = 0, 2, 3, 4
VERBS = ("solve3d", "solve-limit", "study", "verify-assumptions", "mesh-dump")


def build_parser():
    p = argparse.ArgumentParser(prog="notchvi", description="Notched-beam VI solver and eps-sweep harness")
    p.add_argument("verb", nargs="?", choices=VERBS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--seed", type=int, default=0, help="seed for all sampling")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. mesh.n_axial=32")
    p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _stem(args):
    return Path(args.config).stem if args.config else "run"


def _beam_mesh(cfg, geom):
    m = cfg["mesh"]
    return build_beam_mesh(
        geom, m["n_axial"], m["n_cross"], m["notch_refine"], cross_grid=m["cross_grid"],
        n_notch_cross=m["n_notch_cross"], grade_to_notch=m["grade_to_notch"],
    )


def _solve3d(cfg, args, out):
    geom = C.geometry_of(cfg)
    mesh = _beam_mesh(cfg, geom)
    sol = solve_full(mesh, geom, C.coefficients_of(cfg), C.feasible_of(cfg), C.solver_of(cfg))
    stem = _stem(args)
    write_solution(sol, out / f"{stem}_solution.txt")
    write_flux(sol, out / f"{stem}_flux.txt")
    print(f"solved eps={geom.eps:g}: {mesh.n_dofs} dofs, {sol.stats.iterations} outer iterations")
    return EXIT_OK


def _solve_limit(cfg, args, out):
    regime = C.regime_of(cfg)
    m = cfg["mesh"]
    meshes = build_limit_meshes(
        regime, m["h_1d"], m["n_cross_limit"], m["n_notch_axial"], C.section_of(cfg)
    )
    sol = solve_limit(regime, C.coefficients_of(cfg), C.feasible_of(cfg), meshes, C.solver_of(cfg))
    write_limit(sol, out / f"{_stem(args)}_limit.txt")
    um, up = sol.junction_values()
    print(f"limit {regime.case_tag.value}: u(0-)={um:.6g} u(0+)={up:.6g}")
    return EXIT_OK


def _study(cfg, args, out):
    scfg = C.study_config_of(cfg, threads=args.threads)
    report = run_study(scfg, config_echo=cfg)
    stem = _stem(args)
    write_csv(report, out / f"{stem}.csv")
    write_json(report, out / f"{stem}.json")
    for v in report.verdicts:
        note = f"  [{v['note']}]" if "note" in v else ""
        print(f"{v['id']} {v['status'].upper():12s} {v['criterion']}{note}")
    if any(v["status"] == "inconclusive" for v in report.verdicts):
        return EXIT_SOLVER
    return EXIT_OK


def _verify(cfg, args, out):
    rep = validate_assumptions(
        C.coefficients_of(cfg),
        C.constants_of(cfg),
        samples=int(cfg["coefficients"]["assumptions"]["samples"]),
        seed=args.seed,
        section=C.section_of(cfg),
    )
    for line in rep.lines():
        print(line)
    print("assumptions: " + ("PASS" if rep.ok else "FAIL"))
    return EXIT_OK if rep.ok else 1


def _mesh_dump(cfg, args, out):
    geom = C.geometry_of(cfg)
    mesh = _beam_mesh(cfg, geom)
    write_mesh(mesh, out / f"{_stem(args)}_mesh.txt")
    print(f"mesh eps={geom.eps:g}: {mesh.n_nodes} nodes, {mesh.n_cells} cells, {mesh.n_dofs} dofs")
    return EXIT_OK


HANDLERS = {
    "solve3d": _solve3d,
    "solve-limit": _solve_limit,
    "study": _study,
    "verify-assumptions": _verify,
    "mesh-dump": _mesh_dump,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        print(json.dumps(C.defaults(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.verb is None:
        print("error: a command is required (one of " + ", ".join(VERBS) + ")", file=sys.stderr)
        return EXIT_CONFIG
    np.random.seed(args.seed)
    try:
        cfg = C.load_config(args.config, args.overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.verb](cfg, args, out)
    except (ConfigError, SweepTooShort) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except UnsupportedRegime as exc:
        print(f"unsupported regime: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
