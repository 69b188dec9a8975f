"""
Main Module
===========

This module is the command line entry point. It generates and inspects meshes, runs a single
preconditioned solve on a manufactured problem, and runs the experiment families.

Key Features
------------

- **mesh**:
  - ``mesh gen``: Voronoi, quadrilateral or L-shape meshes written as JSON.
  - ``mesh agglomerate``: partition a mesh into connected parts (coordinate bisection or Metis);
    optionally write the coarse mesh.
  - ``mesh info``: summary statistics of a mesh file.

- **solve**:
  - Manufactured solution ``u = sin(pi x) sin(pi y)`` on the unit square, solved by PCG with the
    two-level additive Schwarz preconditioner; reports the L2 error, iterations and the condition
    number estimate. The operator and the residual history can be exported.

- **experiment**:
  - Runs experiment ``1``, ``2``, ``4``, ``5`` or ``unprec`` from an INI file or the built-in
    defaults; ``--seed``, ``--out`` and ``--threads`` override the file.

Exit codes
----------

- ``0``: success.
- ``2``: configuration, mesh input or I/O error.
- ``3``: solver failure (preconditioner setup, indefinite operator, strict non-convergence).

"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from harness.config import ExperimentConfig, default_config, read_config
from harness.controller import ExperimentController
from harness.results import print_summary
from polydg.assembly import DEFAULT_C_SIGMA, DiffusionField, assemble_rhs, assemble_sipdg, l2_error
from polydg.basis import build_space
from polydg.errors import AssemblyError, ConfigError, KrylovError, MeshError, QuadratureError, SchwarzError
from polydg.helpers import derive_seed
from polydg.mesh import (
    DOMAINS,
    Partition,
    agglomerate,
    coarsen,
    generate_structured,
    random_voronoi,
    read_mesh,
    write_mesh,
    write_partition,
)
from solvers.krylov import DEFAULT_TOL, pcg
from solvers.schwarz import build_schwarz

logger = logging.getLogger("polydg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _load(x, y):
    return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def _mesh_gen(args: argparse.Namespace) -> int:
    if args.kind == "quad":
        mesh = generate_structured("quad", args.n)
    elif args.kind == "lshape_voronoi16":
        mesh = generate_structured("lshape_voronoi16", derive_seed("mesh/lshape16", args.seed), lloyd_iters=args.lloyd)
    else:
        mesh = random_voronoi(args.n, DOMAINS[args.domain], seed=derive_seed("mesh/voronoi", args.seed), lloyd_iters=args.lloyd)
    write_mesh(mesh, args.out)
    print(json.dumps(mesh.info(), indent=2))
    return EXIT_OK


def _mesh_agglomerate(args: argparse.Namespace) -> int:
    mesh = read_mesh(args.mesh)
    partition = agglomerate(mesh, args.parts, method=args.method)
    write_partition(partition, args.out)
    if args.coarse_out:
        coarse, _ = coarsen(mesh, partition)
        write_mesh(coarse, args.coarse_out)
    print(json.dumps({"n_parts": partition.n_parts, "sizes": partition.sizes.tolist()}))
    return EXIT_OK


def _mesh_info(args: argparse.Namespace) -> int:
    mesh = read_mesh(args.mesh)
    info = mesh.info()
    info["n_faces"] = mesh.faces.n_faces
    info["n_boundary_faces"] = int(mesh.faces.is_boundary.sum())
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _solve(args: argparse.Namespace) -> int:
    if args.mesh:
        fine = read_mesh(args.mesh)
    else:
        fine = random_voronoi(args.cells, seed=derive_seed("solve/fine", args.seed))
    q = args.p if args.q is None else args.q
    if q > args.p:
        raise ConfigError(f"coarse degree q={q} exceeds p={args.p}")

    space = build_space(fine, args.p)
    rho = DiffusionField.uniform(fine.n_cells)
    A = assemble_sipdg(space, rho, args.c_sigma)
    if args.export:
        A.export(args.export)

    M = None
    if not args.no_precondition:
        coarse, nesting = coarsen(fine, agglomerate(fine, args.coarse_parts))
        M = build_schwarz(A, space, Partition.identity(fine.faces), build_space(coarse, q), nesting)
        logger.info("preconditioner: %s", M.to_json())

    report = pcg(A.matvec, M, assemble_rhs(space, _load), tol=args.tol, strict=args.strict)
    if args.residuals:
        report.to_csv(args.residuals)
    print(json.dumps({
        "n_cells": fine.n_cells,
        "n_dofs": space.n_dofs,
        "p": args.p,
        "q": q if M is not None else None,
        "iterations": report.iterations,
        "converged": report.converged,
        "cond_estimate": report.cond_estimate,
        "l2_error": l2_error(space, report.x, _exact),
    }, indent=2))
    return EXIT_OK


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    config = read_config(args.config) if args.config else default_config(args.id)
    if config.experiment != args.id:
        raise ConfigError(f"config {args.config} is for experiment {config.experiment}, not {args.id}")
    return config.override(seed=args.seed, output=args.out, threads=args.threads, plots=False if args.no_plots else None)


def _experiment(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    table = ExperimentController(config).run(quiet=args.quiet)
    if not args.quiet:
        print_summary(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polydg", description="hp SIPDG on polygonal meshes with two-level Schwarz preconditioning")
    parser.add_argument("--log-level", default=os.getenv("POLYDG_LOG_LEVEL", "INFO"), help="Logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="Mesh generation and inspection")
    mesh_commands = mesh.add_subparsers(dest="mesh_command", required=True)

    gen = mesh_commands.add_parser("gen", help="Generate a mesh")
    gen.add_argument("--kind", choices=["voronoi", "quad", "lshape_voronoi16"], default="voronoi")
    gen.add_argument("--domain", choices=sorted(DOMAINS), default="unit_square", help="Domain of Voronoi meshes")
    gen.add_argument("--n", type=int, default=64, help="Cells (voronoi) or grid resolution (quad)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--lloyd", type=int, default=10, help="Lloyd relaxation steps")
    gen.add_argument("--out", required=True, help="Output JSON mesh")
    gen.set_defaults(handler=_mesh_gen)

    agg = mesh_commands.add_parser("agglomerate", help="Partition a mesh into connected parts")
    agg.add_argument("--mesh", required=True)
    agg.add_argument("--parts", type=int, required=True)
    agg.add_argument("--method", choices=["coordinate_bisection", "metis"], default="coordinate_bisection")
    agg.add_argument("--out", required=True, help="Partition file, one part index per line")
    agg.add_argument("--coarse-out", default=None, help="Also write the agglomerated mesh")
    agg.set_defaults(handler=_mesh_agglomerate)

    info = mesh_commands.add_parser("info", help="Print mesh statistics")
    info.add_argument("--mesh", required=True)
    info.set_defaults(handler=_mesh_info)

    solve = commands.add_parser("solve", help="Solve the manufactured sine problem")
    solve.add_argument("--mesh", default=None, help="JSON mesh of the unit square; random Voronoi by default")
    solve.add_argument("--cells", type=int, default=256)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--p", type=int, default=1)
    solve.add_argument("--q", type=int, default=None, help="Coarse degree, p by default")
    solve.add_argument("--coarse-parts", type=int, default=16)
    solve.add_argument("--c-sigma", type=float, default=DEFAULT_C_SIGMA)
    solve.add_argument("--tol", type=float, default=DEFAULT_TOL)
    solve.add_argument("--strict", action="store_true", help="Fail when PCG does not converge")
    solve.add_argument("--no-precondition", action="store_true")
    solve.add_argument("--export", default=None, help="Write the operator as MatrixMarket")
    solve.add_argument("--residuals", default=None, help="Write the residual history as CSV")
    solve.set_defaults(handler=_solve)

    exp = commands.add_parser("experiment", help="Run an experiment family")
    exp.add_argument("id", choices=["1", "2", "4", "5", "unprec"])
    exp.add_argument("--config", default=None, help="INI file; built-in defaults otherwise")
    exp.add_argument("--seed", type=int, default=None)
    exp.add_argument("--out", default=None, help="Output directory")
    exp.add_argument("--threads", type=int, default=None)
    exp.add_argument("--no-plots", action="store_true")
    exp.add_argument("--quiet", action="store_true", help="No progress bars or summary table")
    exp.set_defaults(handler=_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ConfigError, MeshError, QuadratureError, OSError) as err:
        logger.error("%s", err)
        return EXIT_CONFIG
    except (SchwarzError, KrylovError, AssemblyError) as err:
        logger.error("solver failure: %s", err)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
