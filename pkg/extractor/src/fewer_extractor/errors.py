"""The two ways an extraction run goes sideways.

ExtractionError is for things that are wrong (bad config, unusable
audio, a broken write); SkipRecord is for records we decline on purpose
(empty hypothesis) and carries the reason shown in the run summary.
"""


class ExtractionError(Exception):
    """Bad configuration, unusable input, or a failed write."""


class SkipRecord(Exception):
    """Record intentionally left out; str(exc) is the reason."""
