"""Error taxonomy for the extractor.

Kept deliberately small: anything wrong with inputs or bundles is a
DataError (CLI exit 2); bad arguments are plain ValueError (exit 1).
"""
from __future__ import annotations


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class DataError(ExtractorError):
    """A file or bundle that cannot be used: unreadable, malformed, or
    inconsistent with what the job asked for."""
