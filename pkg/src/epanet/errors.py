"""Exception and warning types shared across the package."""


class ConfigurationError(ValueError):
    """A block, graph or run was configured inconsistently (bad shapes, widths, keys...)."""


class NumericError(RuntimeError):
    """A tensor that must be finite contained NaN or Inf."""


class GraphCycleError(ConfigurationError):
    """A fusion-graph spec contains a dependency cycle."""


class NonDifferentiableError(RuntimeError):
    """Finite-difference probing detected asymmetric secants at some coordinates.

    The offending flat input indices are stored on ``coordinates``.
    """

    def __init__(self, coordinates):
        self.coordinates = list(coordinates)
        super().__init__(
            f"op is not differentiable at {len(self.coordinates)} input coordinate(s): "
            f"{self.coordinates[:8]}{'...' if len(self.coordinates) > 8 else ''}"
        )


class SmallSpatialWarning(RuntimeWarning):
    """Input is spatially smaller than the widest dilated kernel's padded support."""
