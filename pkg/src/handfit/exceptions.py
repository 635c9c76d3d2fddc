"""Shared exception types."""


class HandfitError(Exception):
    """Base class for all handfit errors."""


class ModelFormatError(HandfitError):
    """Portable model file is missing, malformed, or fails an invariant."""


class KeypointFormatError(HandfitError):
    """Keypoint JSON could not be parsed into 21 (point, confidence) entries."""


class ConfigError(HandfitError):
    """TOML config is incomplete, has unknown keys, or bad values."""


class DegenerateDepthError(HandfitError):
    """A 3D point sits at or behind the camera plane."""


class DegenerateLightError(HandfitError):
    """Directional light direction has (near-)zero norm."""


class DegenerateGeometryError(HandfitError):
    """Point configuration too degenerate for the requested operation."""


class NumericalEnergyError(HandfitError):
    """An energy term evaluated to a non-finite value."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"energy term '{term}' is non-finite ({value})")


class FitAbortError(HandfitError):
    """Fitting aborted after repeated restarts; carries diagnostics."""
