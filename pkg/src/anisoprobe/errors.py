"""Exception types shared across the package."""


class HarnessError(Exception):
    """Base class for every error this package raises deliberately."""


class CatalogError(HarnessError):
    """Catalog manifest or one of its assets failed validation."""


class NoValidLocationError(HarnessError):
    """An insertion region has no pixels left to sample from."""


class DegenerateTargetError(HarnessError):
    """A target cutout has no usable mask at the requested size."""


class OutOfBoundsError(HarnessError):
    """A composited target would extend past the background bounds."""


class InvalidArchitectureError(HarnessError):
    """A layer stack collapses a spatial dimension below one pixel."""


class InfeasibleProbeError(HarnessError):
    """A requested crop window cannot be placed inside the background."""


class ProtocolError(HarnessError):
    """A manifest or prediction record violates the wire format."""


class UndefinedIouError(HarnessError):
    """IoU requested for two empty masks."""
