"""Exception types raised by the simulation pipeline."""


class CardiotwinError(Exception):
    """Base class for all pipeline errors."""


class ParameterError(CardiotwinError, ValueError):
    """Geometrically or physically infeasible input parameters."""


class MeshTopologyError(CardiotwinError):
    """Mesh connectivity or boundary classification failure."""


class ValidationError(CardiotwinError, ValueError):
    """Inputs violate a documented precondition or schema."""


class CalibrationError(CardiotwinError):
    """Cell-model calibration failed to bracket or converge."""


class IntegrationError(CardiotwinError):
    """Numerical blow-up during ODE integration."""


class PlacementError(CardiotwinError):
    """Electrode placed inside or too close to the myocardium."""


class FeatureError(CardiotwinError):
    """Waveform feature extraction failed (e.g. flat record)."""
