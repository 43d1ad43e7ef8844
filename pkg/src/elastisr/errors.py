"""Exception hierarchy shared across the package."""


class ElastisrError(Exception):
    """Base class for all package-specific failures."""


class MeshError(ElastisrError):
    """Mesh construction could not satisfy the request."""


class FemSolveError(ElastisrError):
    """Finite element system could not be assembled or solved."""


class DatasetError(ElastisrError):
    """Dataset directory or blob content is malformed."""


class NormalizerError(ElastisrError):
    """Normalizer used before fitting, or fitted with degenerate stats."""


class TrainingError(ElastisrError):
    """Training produced a non-finite loss or invalid configuration."""


class CheckpointError(ElastisrError):
    """Checkpoint file is unreadable, truncated, or version-incompatible."""


class EvaluationError(ElastisrError):
    """Evaluation inputs are unusable (e.g. non-finite reference fields)."""


class CliUsageError(ElastisrError):
    """Invalid command-line invocation (bad flag combination or value)."""
