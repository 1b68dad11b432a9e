"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the set on which a map is defined."""


class ConstructionError(RuntimeError):
    """A constructed object (basis, field level) fails its own invariants."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance."""


class NotInImageError(DomainError):
    """A point is not in the image set on which the inverse transform is defined."""
