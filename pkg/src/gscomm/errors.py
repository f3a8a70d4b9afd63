"""Shared exception types."""


class CorruptFrameError(Exception):
    """Frame payload or structure is inconsistent with its declared layout."""


class UnsupportedFormatError(Exception):
    """Unknown magic or version in a serialized frame."""


class UndefinedMetricError(Exception):
    """A metric has no defined value for the given inputs (e.g. empty mask)."""


class DatasetFormatError(Exception):
    """Malformed dataset or image file; carries a byte offset where known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
