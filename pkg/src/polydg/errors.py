"""
Errors Module
=============

Exception hierarchy shared by the mesh, quadrature, assembly, Schwarz and Krylov layers.

The command line maps these onto exit codes: configuration problems exit with ``2``
and solver failures (indefinite operators, non-convergence in strict mode) with ``3``.
"""


class PolyDGError(Exception):
    """Base class of every error raised by the package."""


class MeshError(PolyDGError, ValueError):
    """Invalid mesh input or a mesh operation whose result would violate a mesh invariant."""


class QuadratureError(PolyDGError, ValueError):
    """Requested rule outside the supported range."""


class AssemblyError(PolyDGError, ValueError):
    """Basis construction or operator assembly failed."""


class SchwarzError(PolyDGError, RuntimeError):
    """Preconditioner setup failed (rank deficient prolongation, indefinite block)."""


class KrylovError(PolyDGError, RuntimeError):
    """Non-finite or non-positive recurrence scalar, or non-convergence in strict mode."""


class ConfigError(PolyDGError, ValueError):
    """Experiment configuration is missing, malformed or inconsistent."""
