"""Exception hierarchy shared across the package.

Validation problems (bad input files, malformed prompt specs, mismatched
dimensions) map to CLI exit code 2, transport problems to exit code 3,
and partially failed scoring runs to exit code 4.
"""

from __future__ import annotations


class FlabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FlabError):
    """Invalid input data, file, or argument."""


class MissingFileError(ValidationError):
    """A required input file does not exist."""


class MalformedLineError(ValidationError):
    """A line in an input file does not match the expected format."""


class DuplicateEntryError(ValidationError):
    """An input file lists the same token or pair twice."""


class UnknownPrimitiveError(ValidationError):
    """A pair references a state or object missing from the vocabulary."""


class SplitOverlapError(ValidationError):
    """The seen and unseen splits share at least one pair."""


class PromptFormatError(ValidationError):
    """A prompt spec is internally inconsistent."""


class EmptyGuidanceError(ValidationError):
    """A guided prompt format was asked to render an empty example list."""


class OOVError(ValidationError):
    """A token has no embedding under the strict out-of-vocabulary policy."""


class TransportError(FlabError):
    """Network failure or non-2xx response that survived all retries."""

    def __init__(self, message: str, status: int | None = None, context: str | None = None):
        super().__init__(message)
        self.status = status
        self.context = context


class ResponseFormatError(FlabError):
    """The backend returned a body that does not parse as a chat completion."""


class ScoreExtractionError(FlabError):
    """A chat response could not be turned into a numeric score."""


class PartialScoringError(FlabError):
    """Some pairs failed after retries.

    Carries everything that did succeed so the caller can persist a
    partial table and resume later from the response cache.
    """

    def __init__(self, failures, partial_scores, partial_provenance):
        super().__init__(f"{len(failures)} pair(s) failed after retries")
        self.failures = list(failures)
        self.partial_scores = dict(partial_scores)
        self.partial_provenance = dict(partial_provenance)
