"""Numerical laboratory for K-area on discretized even-dimensional manifolds."""

__version__ = "0.1.0"


class KlabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(KlabError, ValueError):
    """Invalid parameters or mismatched inputs."""


class GluingError(KlabError):
    """Boundary complexes that should be glued are not isomorphic."""


class PlanError(KlabError):
    """A surgery plan does not match the mesh it is applied to."""


class BranchCutError(KlabError):
    """A holonomy has an eigenvalue too close to -1 for the principal log."""

    def __init__(self, message, cell=None, kind="plaquette"):
        super().__init__(message)
        self.cell = cell
        self.kind = kind


class SectorEscapeError(KlabError):
    """An optimizer step left the topological sector and could not be rescued."""


class PreconditionError(KlabError):
    """An operation was called on inputs that violate its precondition."""
