"""
solvers Package
===============

- **schwarz**: two-level non-overlapping additive Schwarz preconditioner (coarse solve on a nested
  or non-nested coarse space plus exact local solves) and the theoretical bound factor.
- **krylov**: preconditioned conjugate gradients with Lanczos condition number estimation.

"""
