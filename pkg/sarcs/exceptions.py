"""Shared exceptions for the sarcs pipeline."""


class ValidationError(Exception):
    """Raised when a parameter or input fails validation."""

    def __init__(self, reason: str, suggestion: str = ""):
        self.reason = reason
        self.suggestion = suggestion
        msg = f"Validation error: {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class ConfigError(Exception):
    """Raised when the experiment document is invalid or missing."""

    def __init__(self, message: str, suggestion: str = ""):
        self.message = message
        self.suggestion = suggestion
        full = message
        if suggestion:
            full += f"\n  Try: {suggestion}"
        super().__init__(full)


class GeometryError(Exception):
    """Raised when a scatterer or image grid lies outside the illuminated swath."""

    def __init__(self, reason: str, position: tuple[float, float] | None = None,
                 suggestion: str = ""):
        self.reason = reason
        self.position = position
        self.suggestion = suggestion or "Move the scene inside the swath or enlarge the radar window."
        msg = f"Geometry error: {reason}"
        if position is not None:
            msg += f" (azimuth={position[0]:.3f} m, range={position[1]:.3f} m)"
        msg += f"\n  Try: {self.suggestion}"
        super().__init__(msg)


class MaskError(Exception):
    """Raised when a sampling mask cannot be built or applied."""

    def __init__(self, reason: str, suggestion: str = ""):
        self.reason = reason
        self.suggestion = suggestion
        msg = f"Mask error: {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class FocusingError(Exception):
    """Raised when a phase history cannot be focused with the given geometry."""

    def __init__(self, reason: str, suggestion: str = ""):
        self.reason = reason
        self.suggestion = suggestion
        msg = f"Focusing failed: {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class RasterError(Exception):
    """Base class for raster container failures."""

    label = "Raster error"

    def __init__(self, path, reason: str, suggestion: str = ""):
        self.path = str(path)
        self.reason = reason
        self.suggestion = suggestion
        msg = f"{self.label} in '{self.path}': {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class RasterFormatError(RasterError):
    """Raised on a bad magic, an unknown dtype tag, or non-finite data."""

    label = "Bad raster format"


class RasterTruncatedError(RasterError):
    """Raised when the payload length disagrees with the header dimensions."""

    label = "Truncated raster"


class RasterDtypeError(RasterError):
    """Raised when a raster holds a different element type than requested."""

    label = "Unexpected raster dtype"


class ExportError(Exception):
    """Raised when an output file cannot be written."""

    def __init__(self, path, reason: str, suggestion: str = ""):
        self.path = str(path)
        self.reason = reason
        self.suggestion = suggestion or "Check that the output directory exists and is writable."
        msg = f"Cannot write '{self.path}': {reason}"
        msg += f"\n  Try: {self.suggestion}"
        super().__init__(msg)


class ModelFormatError(Exception):
    """Raised when a patch regressor file is malformed."""

    def __init__(self, path, reason: str, suggestion: str = ""):
        self.path = str(path)
        self.reason = reason
        self.suggestion = suggestion or "Retrain with 'sarcs train' to regenerate the model file."
        msg = f"Bad model file '{self.path}': {reason}"
        msg += f"\n  Try: {self.suggestion}"
        super().__init__(msg)


class SamplingError(Exception):
    """Raised when the reverse diffusion loop cannot continue."""

    def __init__(self, step: int, reason: str, suggestion: str = ""):
        self.step = step
        self.reason = reason
        self.suggestion = suggestion
        msg = f"Sampling aborted at step t={step}: {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class TrainingError(Exception):
    """Raised when the patch regressor cannot be fitted."""

    def __init__(self, reason: str, bucket: int | None = None, suggestion: str = ""):
        self.reason = reason
        self.bucket = bucket
        self.suggestion = suggestion
        msg = "Training failed"
        if bucket is not None:
            msg += f" for bucket {bucket}"
        msg += f": {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class TilingError(Exception):
    """Raised when a tile plan or stitch is inconsistent."""

    def __init__(self, reason: str, index: int | None = None, suggestion: str = ""):
        self.reason = reason
        self.index = index
        self.suggestion = suggestion
        msg = "Tiling error"
        if index is not None:
            msg += f" at tile {index}"
        msg += f": {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)


class PipelineError(Exception):
    """Raised when a pipeline stage fails as a whole."""

    def __init__(self, stage: str, reason: str, suggestion: str = ""):
        self.stage = stage
        self.reason = reason
        self.suggestion = suggestion
        msg = f"Stage '{stage}' failed: {reason}"
        if suggestion:
            msg += f"\n  Try: {suggestion}"
        super().__init__(msg)
