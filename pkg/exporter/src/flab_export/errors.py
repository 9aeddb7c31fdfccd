from __future__ import annotations


class ExportError(Exception):
    """Base class for exporter failures."""


class JobValidationError(ExportError):
    """Bad job inputs: missing files, malformed lines, bad template."""


class ImageReadError(ExportError):
    """An image file exists but cannot be decoded."""
