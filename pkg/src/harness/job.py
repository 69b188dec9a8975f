"""
Job Module
==========

This module defines the `SolveJob` class: one preconditioned (or unpreconditioned) solve of an
experiment table, together with the mesh `Problem` it runs on.

Key Features
------------

- **Problem**:
  - Fine mesh, local solver partition, diffusion coefficient and optionally a coarse mesh with its
    nesting map.

- **Job Execution**:
  - Builds the fine (and coarse) DG spaces, assembles the SIPDG operator, builds the two-level
    additive Schwarz preconditioner and runs PCG on the load vector of ``f = 1``.
  - Reruns PCG from a seeded random right hand side with the tightened estimate tolerance and
    takes the condition number estimate from that run.
  - Produces one results row, including the theoretical bound factor.

- **Serialization**:
  - Job parameters and results are serialised to JSON; the job id defaults to the SHA1 of the
    parameters.

"""
import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from polydg.assembly import DiffusionField, assemble_rhs, assemble_sipdg
from polydg.basis import build_space
from polydg.helpers import derive_seed
from polydg.mesh import NestingMap, Partition, PolytopicMesh, coloring_bound, partition_diameter
from solvers.krylov import pcg
from solvers.schwarz import BoundInputs, build_schwarz, theoretical_bound

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Problem:
    """Meshes and coefficient of one solve."""

    fine: PolytopicMesh
    partition: Partition
    rho: DiffusionField
    coarse: Optional[PolytopicMesh] = None
    nesting: Optional[NestingMap] = None

    @property
    def preconditioned(self) -> bool:
        return self.coarse is not None


class SolveJob:
    """
    One row of an experiment table.

    ``data`` holds the JSON serialisable parameters: ``experiment``, ``p``, ``q``, ``rho_e``,
    ``C_sigma``, ``tol``, ``estimate_tol``, ``maxit``, ``seed`` and the ablation flags
    ``use_coarse``/``use_local``.
    """

    @staticmethod
    def deserialize(string: str, problem: Optional[Problem] = None) -> "SolveJob":
        """
        Deserializes a job from a JSON string.

        Args:
            string (str): JSON string representing the job.
            problem (Problem, optional): Meshes to attach; needed only to run the job.

        Returns:
            SolveJob: Deserialized job instance.
        """
        data = json.loads(string)
        return SolveJob(data["job_id"], data, problem)

    def __init__(self, job_id: Optional[str], data: dict, problem: Optional[Problem] = None):
        self.data = dict(data)
        self.data.setdefault("use_coarse", True)
        self.data.setdefault("use_local", True)
        self.data.setdefault("seed", 0)
        params = {k: v for k, v in self.data.items() if k not in ("job_id", "status", "result")}
        self.job_id = job_id or hashlib.sha1(json.dumps(params, sort_keys=True).encode("utf-8")).hexdigest()
        self.data["job_id"] = self.job_id
        self.status = self.data.get("status", "pending")
        self.result = self.data.get("result", None)
        self.problem = problem

    def serialize(self) -> str:
        """
        Serializes the job to a JSON string.

        Returns:
            str: JSON string representing the job.
        """
        self.data.update({"status": self.status, "result": self.result, "job_id": self.job_id})
        return json.dumps(self.data, sort_keys=True)

    def bound_inputs(self) -> Optional[BoundInputs]:
        problem = self.problem
        if not problem.preconditioned:
            return None
        return BoundInputs(
            p=self.data["p"],
            q=self.data["q"],
            h=problem.fine.mesh_size,
            H=problem.coarse.mesh_size,
            H_sub=partition_diameter(problem.fine, problem.partition),
            N_S=coloring_bound(problem.partition, problem.fine.faces),
            rho_ratio=problem.rho.coarse_ratio(problem.nesting, problem.coarse.n_cells),
            nested=problem.nesting.nested,
        )

    def run(self) -> dict:
        """
        Assemble, precondition and solve.

        Returns:
            dict: The results row.
        """
        if self.status == "completed":
            return self.result
        if self.problem is None:
            raise RuntimeError(f"job {self.job_id} has no problem attached")
        self.status = "running"
        d = self.data
        problem = self.problem
        p, q = d["p"], d["q"]
        fine_space = build_space(problem.fine, p)
        A = assemble_sipdg(fine_space, problem.rho, d["C_sigma"])
        M = None
        if problem.preconditioned:
            coarse_space = build_space(problem.coarse, q)
            M = build_schwarz(
                A,
                fine_space,
                problem.partition,
                coarse_space,
                problem.nesting,
                use_coarse=d["use_coarse"],
                use_local=d["use_local"],
            )

        b = assemble_rhs(fine_space, lambda x, y: np.ones_like(x))
        solve = pcg(A.matvec, M, b, tol=d["tol"], maxit=d.get("maxit"))
        rng = np.random.default_rng(derive_seed(self.job_id, d["seed"]))
        estimate = pcg(A.matvec, M, rng.standard_normal(fine_space.n_dofs), tol=d["estimate_tol"], maxit=d.get("maxit"))

        inputs = self.bound_inputs()
        h = problem.fine.mesh_size
        bound = theoretical_bound(inputs) if inputs is not None else p**4 / h**2
        self.result = {
            "experiment": d["experiment"],
            "Nh": problem.fine.n_cells,
            "NH": problem.coarse.n_cells if problem.preconditioned else 0,
            "h": h,
            "H": problem.coarse.mesh_size if problem.preconditioned else 0.0,
            "p": p,
            "q": q,
            "rho_e": d.get("rho_e", 1.0),
            "K": estimate.cond_estimate,
            "iters": solve.iterations,
            "bound_factor": bound,
        }
        self.status = "completed"
        logger.info(
            "%s Nh=%d NH=%d p=%d q=%d rho_e=%g: K=%.4g, %d iterations",
            d["experiment"], self.result["Nh"], self.result["NH"], p, q, self.result["rho_e"],
            self.result["K"], self.result["iters"],
        )
        return self.result
