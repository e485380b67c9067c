"""Exception types shared across the toolkit."""


class CompletrError(Exception):
    """Base class for all toolkit errors."""


class MalformedFileError(CompletrError):
    """Annotation file is not valid JSON or violates the schema."""


class InvariantViolationError(CompletrError):
    """Dataset contents break a structural invariant (dangling ids, duplicates)."""


class IOFailureError(CompletrError):
    """Reading or writing an artifact failed."""


class DegenerateBoxError(CompletrError):
    """Box has zero area after clamping to image bounds."""


class EmptyDatasetError(CompletrError):
    """Operation requires a dataset with at least one annotation."""


class UnknownClassError(CompletrError):
    """Requested category id is not present."""


class DimensionMismatchError(CompletrError):
    """Tensor shapes are incompatible."""


class UninitializedModelError(CompletrError):
    """Model was used before weights were initialized."""


class NoAnnotationsError(CompletrError):
    """Training step requires an image with at least one annotation."""


class EmptyDetectionsError(CompletrError):
    """Loss requires at least one detection."""


class ConfigInvalidError(CompletrError):
    """Configuration fails validation."""


class IncompatibleCheckpointError(CompletrError):
    """Checkpoint cannot be loaded into the requested model/stage."""


class EmptyPartialDatasetError(CompletrError):
    """Completion requires a nonempty partially annotated dataset."""


class UnknownPluginError(CompletrError):
    """Detector plugin name is not registered."""


class ImageSetMismatchError(CompletrError):
    """Two datasets do not cover the same image ids."""


class StageError(CompletrError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class NotReviewableError(CompletrError):
    """Verdicts may only target completed or pseudo annotations."""


class UnknownAnnotationError(CompletrError):
    """Annotation id does not exist in the served dataset."""


class BindFailureError(CompletrError):
    """Review service could not bind its address."""


class MissingImagesError(CompletrError):
    """Image files referenced by the dataset are absent from the image root."""
