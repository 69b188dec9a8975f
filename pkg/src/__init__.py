"""
PolyDG Package
==============

This package implements the hp-version symmetric interior penalty discontinuous Galerkin (SIPDG)
method on general polygonal meshes, together with a two-level non-overlapping additive Schwarz
preconditioner whose coarse space may be nested in the fine space or built on an unrelated coarse
mesh. It reproduces the condition number scaling experiments of this preconditioner at desk scale.

Why a Two-Level Preconditioner?
-------------------------------

The condition number of the SIPDG matrix grows like ``p^4 / h^2``. Local solves on subdomains
remove the growth within each subdomain; a low order coarse solve couples the subdomains. The
preconditioned condition number is then bounded by ``p^2 H / (q h)`` (nested) or
``p^4 H^2 / (q^2 h^2)`` (non-nested), independently of the number of subdomains.

File Organization
------------------

The code is organized into three packages and a command line entry point:

1. **polydg**:
   - Meshes (generation, topology, sub-tessellation, agglomeration, nesting), quadrature,
     orthonormal polynomial bases and the SIPDG assembly.

2. **solvers**:
   - The additive Schwarz preconditioner and preconditioned conjugate gradients with Lanczos
     condition number estimates.

3. **harness**:
   - Experiment configuration, solve jobs, the experiment controller and result tables.

4. **main.py**:
   - ``mesh``, ``solve`` and ``experiment`` commands.

Running
-------

::

    python src/main.py experiment 2 --seed 0 --out results --threads 4
    python src/main.py solve --cells 256 --p 2 --coarse-parts 16

"""
