"""
Controller Module
=================

This module defines the `ExperimentController` class, the entry point that turns an
`ExperimentConfig` into solve jobs, runs them and collects a `ResultsTable`.

Key Features
------------

- **Mesh pairs**:
  - Builds the fine/coarse meshes of every experiment family from seeds derived from the
    configured RNG seed, so equal configurations give equal meshes.

- **Job Management**:
  - One `SolveJob` per table row; jobs run sequentially or on a thread pool, with a `tqdm`
    progress bar.

- **Reporting**:
  - Fits the log-log slopes and ratios each experiment is judged by and stores them in
    ``ResultsTable.slopes``.
  - Writes the CSV, the slopes (JSON) and the SVG plots to the output directory.

Routes
------

The `ExperimentController` maps experiment ids to runners:

- `1`: jumping coefficient on the L-shape, aligned and not aligned with the coarse grid.
- `2`: nested agglomerated coarse hierarchies on Voronoi fine grids.
- `4`: independently generated (non-nested) Voronoi pairs.
- `5`: p sweep on one nested and one non-nested pair.
- `unprec`: growth of the unpreconditioned condition number in h and p.

"""
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Sequence

import numpy as np
from tqdm import tqdm

from harness.config import ExperimentConfig
from harness.job import Problem, SolveJob
from harness.results import ResultsTable, fit_loglog_slope, plot_results, write_results
from polydg.assembly import DiffusionField
from polydg.errors import ConfigError
from polydg.helpers import derive_seed
from polydg.mesh import (
    L_SHAPE,
    UNIT_SQUARE,
    Partition,
    PolytopicMesh,
    agglomerate,
    coarsen,
    compose,
    generate_structured,
    nesting_map,
    random_voronoi,
    refine,
)

logger = logging.getLogger(__name__)

AGGLOMERATED_LSHAPE_CELLS = 2000


def run_jobs(jobs: Sequence[SolveJob], threads: int = 1, quiet: bool = False, desc: str = "solves") -> List[dict]:
    """
    Run jobs and return their rows in job order.

    Args:
        jobs (Sequence[SolveJob]): Jobs with problems attached.
        threads (int): Worker threads; 1 runs in the calling thread.
        quiet (bool): Hide the progress bar.
        desc (str): Progress bar label.

    Returns:
        List[dict]: One results row per job.
    """
    if threads <= 1:
        return [job.run() for job in tqdm(jobs, desc=desc, disable=quiet)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job.run) for job in jobs]
        return [f.result() for f in tqdm(futures, desc=desc, disable=quiet)]


def _job(config: ExperimentConfig, label: str, p: int, problem: Problem, rho_e: float = 1.0) -> SolveJob:
    data = {
        "experiment": label,
        "p": p,
        "q": config.q_for(p),
        "rho_e": float(rho_e),
        "Nh": problem.fine.n_cells,
        "NH": problem.coarse.n_cells if problem.preconditioned else 0,
        "C_sigma": config.C_sigma,
        "tol": config.tol,
        "estimate_tol": config.estimate_tol,
        "maxit": config.maxit,
        "seed": config.seed,
    }
    return SolveJob(None, data, problem)


def _square_side(n_cells: int) -> int:
    n = math.isqrt(n_cells)
    if n * n != n_cells:
        raise ConfigError(f"quad meshes need a square cell count, got {n_cells}")
    return n


def _mesh(config: ExperimentConfig, n_cells: int, tag: str) -> PolytopicMesh:
    """Fine or coarse mesh of the configured family with ``n_cells`` cells."""
    if config.family == "quad":
        return generate_structured("quad", _square_side(n_cells))
    domain = L_SHAPE if config.family == "lshape" else UNIT_SQUARE
    return random_voronoi(n_cells, domain, seed=derive_seed(tag, config.seed), lloyd_iters=config.lloyd_iters)


def _partition_of(mesh: PolytopicMesh, n_parts: int, config: ExperimentConfig) -> Partition:
    if config.partition_file:
        return agglomerate(mesh, n_parts, method="from_file", path=config.partition_file)
    return agglomerate(mesh, n_parts, method=config.agglomeration)


def _max_min_ratio(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.max() / values.min())


def _try_slope(table: ResultsTable, name: str, xs, ys):
    try:
        table.slopes[name] = fit_loglog_slope(xs, ys)
    except ValueError as err:
        logger.debug("no slope for %s: %s", name, err)


# ----------------------------------------------------------------------------------------------
# Experiment families
# ----------------------------------------------------------------------------------------------


def _example1_pair(config: ExperimentConfig):
    if config.coarse == "agglomerated":
        n_fine = config.fine_sizes[0] if config.fine_sizes else AGGLOMERATED_LSHAPE_CELLS
        fine = random_voronoi(n_fine, L_SHAPE, seed=derive_seed("example1/fine", config.seed), lloyd_iters=config.lloyd_iters)
        coarse, nesting = coarsen(fine, _partition_of(fine, config.coarse_sizes[0], config))
        return fine, coarse, nesting
    if config.coarse != "voronoi16":
        raise ConfigError(f"example 1 needs coarse = voronoi16 or agglomerated, got {config.coarse!r}")
    coarse = generate_structured("lshape_voronoi16", derive_seed("example1/coarse", config.seed), lloyd_iters=config.lloyd_iters)
    fine, nesting = refine(coarse, config.refine_levels)
    return fine, coarse, nesting


def run_example1(config: ExperimentConfig, quiet: bool = False) -> ResultsTable:
    """
    Coefficient jumps on the L-shape.

    The aligned sweep puts ``rho_e`` on the fine cells of even coarse cells, the not-aligned sweep
    on even fine cells. Slopes: aligned max/min K ratio per p, not-aligned slope of K against
    ``rho_e`` over ``rho_e >= 1e3``.
    """
    fine, coarse, nesting = _example1_pair(config)
    partition = Partition.identity(fine.faces)
    sweeps = []
    if config.layout in ("coarse_checkerboard", "both"):
        sweeps.append(("example1-aligned", lambda r: DiffusionField.coarse_checkerboard(nesting.parent, r)))
    if config.layout in ("fine_checkerboard", "both"):
        sweeps.append(("example1-not-aligned", lambda r: DiffusionField.fine_checkerboard(fine.n_cells, r)))
    if config.layout == "uniform":
        sweeps.append(("example1-uniform", None))

    jobs = []
    for label, make_rho in sweeps:
        rho_values = [1.0] if make_rho is None else config.rho_values
        for rho_e in rho_values:
            rho = DiffusionField.uniform(fine.n_cells) if make_rho is None else make_rho(rho_e)
            problem = Problem(fine, partition, rho, coarse, nesting)
            jobs.extend(_job(config, label, p, problem, rho_e) for p in config.degrees)

    table = ResultsTable()
    table.extend(run_jobs(jobs, config.threads, quiet, desc="example 1"))
    for p in config.degrees:
        aligned = table.column("K", experiment="example1-aligned", p=p)
        if len(aligned):
            table.slopes[f"example1-aligned p={p} max/min"] = _max_min_ratio(aligned)
        rows = [r for r in table.select(experiment="example1-not-aligned", p=p) if r["rho_e"] >= 1e3]
        _try_slope(table, f"example1-not-aligned p={p} vs rho_e", [r["rho_e"] for r in rows], [r["K"] for r in rows])
    return table


def run_example2(config: ExperimentConfig, quiet: bool = False) -> ResultsTable:
    """
    Nested agglomerated hierarchies: every fine grid is agglomerated by factors of 4 down to the
    smallest coarse size, one row per (Nh, NH) pair and degree.
    """
    min_coarse = min(config.coarse_sizes)
    jobs = []
    for Nh in config.fine_sizes:
        fine = _mesh(config, Nh, f"example2/fine/{Nh}")
        partition = Partition.identity(fine.faces)
        rho = DiffusionField.uniform(fine.n_cells)
        level, level_map = fine, None
        n = Nh
        while n // 4 >= min_coarse:
            n //= 4
            coarse, step = coarsen(level, agglomerate(level, n, method=config.agglomeration))
            level_map = step if level_map is None else compose(level_map, step)
            problem = Problem(fine, partition, rho, coarse, level_map)
            jobs.extend(_job(config, "example2", p, problem) for p in config.degrees)
            level = coarse

    table = ResultsTable()
    table.extend(run_jobs(jobs, config.threads, quiet, desc="example 2"))
    _report_pair_table(table, "example2", config)
    return table


def run_example4(config: ExperimentConfig, quiet: bool = False) -> ResultsTable:
    """Independently generated Voronoi fine and coarse grids, one row per pair with ``NH < Nh``."""
    coarse_meshes = {NH: _mesh(config, NH, f"example4/coarse/{NH}") for NH in config.coarse_sizes}
    jobs = []
    for Nh in config.fine_sizes:
        fine = _mesh(config, Nh, f"example4/fine/{Nh}")
        partition = Partition.identity(fine.faces)
        rho = DiffusionField.uniform(fine.n_cells)
        for NH, coarse in sorted(coarse_meshes.items()):
            if NH >= Nh:
                continue
            problem = Problem(fine, partition, rho, coarse, nesting_map(fine, coarse))
            jobs.extend(_job(config, "example4", p, problem) for p in config.degrees)

    table = ResultsTable()
    table.extend(run_jobs(jobs, config.threads, quiet, desc="example 4"))
    _report_pair_table(table, "example4", config)
    return table


def _report_pair_table(table: ResultsTable, label: str, config: ExperimentConfig):
    """
    Slopes of K against ``H/h = sqrt(Nh/NH)`` along the finest fine mesh (coarse grids vary,
    ``fixed h``) and along the coarsest coarse mesh (fine grids vary, ``fixed H``), plus the
    max/min ratio of K on the ``Nh = 4 NH`` diagonal.
    """
    for p in config.degrees:
        diagonal = [r["K"] for r in table.select(experiment=label, p=p) if r["Nh"] == 4 * r["NH"]]
        if diagonal:
            table.slopes[f"{label} p={p} diagonal max/min"] = _max_min_ratio(diagonal)
        for key, rows in (
            ("fixed h", table.select(experiment=label, p=p, Nh=max(config.fine_sizes))),
            ("fixed H", table.select(experiment=label, p=p, NH=min(config.coarse_sizes))),
        ):
            xs = [math.sqrt(r["Nh"] / r["NH"]) for r in rows]
            _try_slope(table, f"{label} p={p} vs H/h ({key})", xs, [r["K"] for r in rows])


def run_example5(config: ExperimentConfig, quiet: bool = False) -> ResultsTable:
    """
    p sweep on a nested pair (fine grid agglomerated) and a non-nested Voronoi pair. Slopes of K
    against p are reported over all degrees and over ``p <= 6``.
    """
    Nh, NH = config.fine_sizes[0], config.coarse_sizes[0]
    fine = _mesh(config, Nh, "example5/fine")
    coarse, nested = coarsen(fine, _partition_of(fine, NH, config))

    poly_fine = random_voronoi(Nh, UNIT_SQUARE, seed=derive_seed("example5/nonnested/fine", config.seed), lloyd_iters=config.lloyd_iters)
    poly_coarse = random_voronoi(NH, UNIT_SQUARE, seed=derive_seed("example5/nonnested/coarse", config.seed), lloyd_iters=config.lloyd_iters)

    pairs = [
        ("example5-nested", fine, coarse, nested),
        ("example5-nonnested", poly_fine, poly_coarse, nesting_map(poly_fine, poly_coarse)),
    ]
    jobs = []
    for label, f, c, nesting in pairs:
        problem = Problem(f, Partition.identity(f.faces), DiffusionField.uniform(f.n_cells), c, nesting)
        jobs.extend(_job(config, label, p, problem) for p in config.degrees)

    table = ResultsTable()
    table.extend(run_jobs(jobs, config.threads, quiet, desc="example 5"))
    for label, *_ in pairs:
        rows = sorted(table.select(experiment=label), key=lambda r: r["p"])
        _try_slope(table, f"{label} vs p", [r["p"] for r in rows], [r["K"] for r in rows])
        low = [r for r in rows if r["p"] <= 6]
        _try_slope(table, f"{label} vs p (p<=6)", [r["p"] for r in low], [r["K"] for r in low])
    return table


def run_unpreconditioned(config: ExperimentConfig, quiet: bool = False) -> ResultsTable:
    """
    Plain CG on the SIPDG matrix: an h sweep over ``fine_sizes`` at the lowest degree and a p sweep
    over ``degrees`` on the mesh with ``coarse_sizes[0]`` cells.
    """
    p_low = min(config.degrees)
    jobs = []
    for Nh in config.fine_sizes:
        mesh = _mesh(config, Nh, f"unprec/h/{Nh}")
        problem = Problem(mesh, Partition.identity(mesh.faces), DiffusionField.uniform(mesh.n_cells))
        jobs.append(_job(config, "unprec-h", p_low, problem))
    mesh = _mesh(config, config.coarse_sizes[0], "unprec/p")
    problem = Problem(mesh, Partition.identity(mesh.faces), DiffusionField.uniform(mesh.n_cells))
    jobs.extend(_job(config, "unprec-p", p, problem) for p in config.degrees)

    table = ResultsTable()
    table.extend(run_jobs(jobs, config.threads, quiet, desc="unpreconditioned"))
    rows = table.select(experiment="unprec-h")
    _try_slope(table, "unprec vs 1/h", [1.0 / r["h"] for r in rows], [r["K"] for r in rows])
    rows = table.select(experiment="unprec-p")
    _try_slope(table, "unprec vs p", [r["p"] for r in rows], [r["K"] for r in rows])
    return table


class ExperimentController:
    """
    Runs one configured experiment and writes its outputs.
    """

    def __init__(self, config: ExperimentConfig):
        """
        Initializes the controller.

        Args:
            config (ExperimentConfig): A validated configuration.
        """
        self.config = config

    def get_routes(self) -> Dict[str, Callable[..., ResultsTable]]:
        """
        Experiment id to runner.

        Returns:
            Dict[str, Callable]: Runners taking ``(config, quiet=...)``.
        """
        return {
            "1": run_example1,
            "2": run_example2,
            "4": run_example4,
            "5": run_example5,
            "unprec": run_unpreconditioned,
        }

    def output_paths(self) -> Dict[str, str]:
        stem = f"experiment_{self.config.experiment}"
        out = self.config.output
        return {
            "csv": os.path.join(out, f"{stem}.csv"),
            "slopes": os.path.join(out, f"{stem}_slopes.json"),
            "plots": os.path.join(out, "plots"),
        }

    def run(self, quiet: bool = False) -> ResultsTable:
        """
        Run the experiment, then write CSV, slopes and plots.

        Args:
            quiet (bool): Hide progress bars.

        Returns:
            ResultsTable: The collected rows and slopes.
        """
        config = self.config
        route = self.get_routes()[config.experiment]
        logger.info("running experiment %s (seed %d, %d threads)", config.experiment, config.seed, config.threads)
        table = route(config, quiet=quiet)

        paths = self.output_paths()
        os.makedirs(config.output, exist_ok=True)
        write_results(table, paths["csv"])
        with open(paths["slopes"], "w") as fh:
            json.dump(table.slopes, fh, indent=2, sort_keys=True)
        if config.plots and len(table):
            os.makedirs(paths["plots"], exist_ok=True)
            plot_results(table, paths["plots"])
        for name, value in sorted(table.slopes.items()):
            logger.info("%s: %.3f", name, value)
        return table
