"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 infeasible design.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import mesh_io
from .config import load_config, comparison_case_dicts
from .errors import ConfigError, DiffDesignError, Infeasible
from .pipeline import Pipeline, compare_cases

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4


def _add_common(parser):
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--stage-cache", default=None,
                        help="directory for the FIM tensor cache")
    parser.add_argument("--case", default=None, help="override the case label")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="diffdesign",
        description="A-optimal sensor activation design for inclusion "
                    "identification in a 2D diffusion process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in [
        ("generate-mesh", "build and export the tagged mesh"),
        ("solve-forward", "run the forward diffusion solve"),
        ("sensitivities", "extend the basis fields and solve the sensitivity equations"),
        ("assemble-fim", "assemble (and cache) the elementary FIM tensor"),
        ("optimize", "solve the sensor activation design problem"),
        ("analyze", "eigen-analysis and tables for the optimized design"),
        ("pipeline", "run every stage and write all outputs"),
    ]:
        p = sub.add_parser(name, help=doc)
        _add_common(p)

    p = sub.add_parser("compare", help="run several cases and tabulate the criteria")
    p.add_argument("configs", nargs="+", help="case configuration files")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--stage-cache", default=None,
                   help="directory for the FIM tensor cache")

    p = sub.add_parser("make-configs",
                       help="write the five comparison case configurations")
    p.add_argument("--out", default="out", help="output directory")
    return parser


def _pipeline_for(args):
    config = load_config(args.config)
    if args.case:
        config.case = args.case
    cache = args.stage_cache if args.stage_cache else Path(args.out) / "cache"
    return Pipeline(config, args.out, cache_dir=cache)


def _run(args):
    if args.command == "make-configs":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, payload in comparison_case_dicts().items():
            (out / f"{name}.json").write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote 5 case configs under {out}")
        return 0

    if args.command == "compare":
        configs = [load_config(path) for path in args.configs]
        cache = args.stage_cache if args.stage_cache else Path(args.out) / "cache"
        rows = compare_cases(configs, args.out, cache_dir=cache)
        for case, phi, recip in rows:
            print(f"{case}: phi = {phi:.6e}")
        print(f"table written to {Path(args.out) / 'compare.csv'}")
        return 0

    pipe = _pipeline_for(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "generate-mesh":
        m = pipe.mesh()
        mesh_io.write_vtk(m, {}, out / "mesh.vtk")
        mesh_io.write_msh(m, out / "mesh.msh")
        stats = {
            "nodes": len(m.nodes),
            "triangles": len(m.triangles),
            "inclusion_area": float(m.areas()[m.regions == 1].sum()),
            "sensors": {k: int(len(v)) for k, v in sorted(m.patches.items())},
        }
        (out / "mesh_stats.json").write_text(
            json.dumps(stats, indent=2, sort_keys=True) + "\n")
        print(f"mesh: {stats['nodes']} nodes, {stats['triangles']} triangles")
        return 0

    if args.command == "solve-forward":
        forward = pipe.forward()
        for step in range(len(forward.times)):
            mesh_io.write_vtk(pipe.mesh(), {"u": forward.values[step]},
                              out / f"forward_{step:04d}.vtk")
        print(f"forward trajectory: {len(forward.times)} snapshots")
        return 0

    if args.command == "sensitivities":
        sens = pipe.sensitivities()
        for i, (f, traj) in enumerate(zip(pipe.basis_fields(), sens)):
            mesh_io.write_vtk(pipe.mesh(), {"velocity": f.values},
                              out / f"basis_{i:02d}.vtk")
            mesh_io.write_vtk(pipe.mesh(), {"du": traj.values[-1]},
                              out / f"sensitivity_{i:02d}_final.vtk")
        print(f"{len(sens)} sensitivity trajectories")
        return 0

    if args.command == "assemble-fim":
        tensor = pipe.tensor()
        print(f"tensor: {tensor.n_obs} sensors x {tensor.n_time} instants "
              f"x {tensor.n_basis} basis fields ({pipe.report.fim_cache})")
        return 0

    if args.command in ("optimize", "analyze", "pipeline"):
        report = pipe.run()
        summary = report.oed_summary
        print(f"phi = {summary['phi']:.6e}  converged = {summary['converged']}  "
              f"outer = {summary['n_outer']}")
        print(f"weights: {summary['counts']['one']} at one, "
              f"{summary['counts']['fractional']} fractional, "
              f"{summary['counts']['zero']} at zero")
        print(f"outputs under {out}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as err:
        print(f"infeasible design: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DiffDesignError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
