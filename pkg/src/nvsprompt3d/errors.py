"""Exception hierarchy shared by all pipeline stages.

Every error raised at a module boundary is a subclass of :class:`PipelineError`
so callers (and the CLI) can map failures to exit codes without string
matching. Validation errors carry the name of the offending field in their
message.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


# -- input validation / configuration ------------------------------------

class SchemaViolation(PipelineError):
    """A manifest or config value violates its declared constraints."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DimensionMismatch(PipelineError):
    """Cross-referenced inputs disagree on a dimension."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnsupportedPlyVariant(PipelineError):
    """PLY file lacks the required properties or uses an unsupported layout."""


class MalformedHeader(PipelineError):
    """A binary file header could not be parsed."""


# -- file system ----------------------------------------------------------

class MissingFile(PipelineError):
    """A referenced input file does not exist."""

    def __init__(self, field: str, path):
        super().__init__(f"{field}: file not found: {path}")
        self.field = field
        self.path = path


class IoFailure(PipelineError):
    """Writing or reading an artifact failed."""


class MissingStageArtifact(PipelineError):
    """A staged subcommand requires an artifact a prior stage did not write."""

    def __init__(self, path):
        super().__init__(f"missing stage artifact: {path} (run the prior stage first)")
        self.path = path


# -- geometry -------------------------------------------------------------

class EmptyMask(PipelineError):
    """Instance mask has no set bits."""


class EmptyInput(PipelineError):
    """An operation that needs at least one point received none."""


class NoVisiblePose(PipelineError):
    """Every candidate pose has visibility score zero for this instance."""


class DegenerateUp(PipelineError):
    """Up reference is parallel to the viewing direction."""


class CoincidentTarget(PipelineError):
    """Look-at target coincides with the camera center."""


# -- rendering ------------------------------------------------------------

class BehindCamera(PipelineError):
    """Gaussian mean is behind the camera near plane."""


# -- prompts --------------------------------------------------------------

class NoVisiblePixels(PipelineError):
    """No masked point projects to a visible pixel in this view."""


class DegenerateCrop(PipelineError):
    """Crop region collapsed below the minimum prompt size."""


# -- fusion ---------------------------------------------------------------

class DegenerateSum(PipelineError):
    """Feature sum has vanishing norm and cannot be normalized."""


class UnnormalizedInput(PipelineError):
    """An operation requiring unit-norm vectors received one that is not."""


# -- evaluation -----------------------------------------------------------

class EmptyGroundTruth(PipelineError):
    """Metric computation requires at least one ground-truth instance."""
