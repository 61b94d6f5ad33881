"""Bridge from pretrained speech/text encoders to the estimator's feature files."""

from .audio import TARGET_RATE, load_wav, normalize
from .errors import ExtractionError, SkipRecord
from .extract import (
    DEFAULT_SPEECH_MODEL,
    DEFAULT_TEXT_MODEL,
    Encoders,
    ExtractionResult,
    ExtractorConfig,
    Job,
    extract,
    read_jobs,
    resolve_layer,
    write_few1,
)

__version__ = "0.1.0"

__all__ = [
    "TARGET_RATE",
    "load_wav",
    "normalize",
    "ExtractionError",
    "SkipRecord",
    "DEFAULT_SPEECH_MODEL",
    "DEFAULT_TEXT_MODEL",
    "Encoders",
    "ExtractionResult",
    "ExtractorConfig",
    "Job",
    "extract",
    "read_jobs",
    "resolve_layer",
    "write_few1",
]
