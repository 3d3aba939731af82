"""Exception types raised by the retrieval engine.

All data-level failures derive from :class:`XTRError` so callers (and the
CLI) can map them to a single exit path while tests assert on the precise
subclass.
"""


class XTRError(Exception):
    """Base class for all engine errors."""


class MalformedHeaderError(XTRError):
    """Embedding file header is invalid (bad magic, version, or sizes)."""


class TruncatedPayloadError(XTRError):
    """Declared rows x dim exceeds the bytes present in the payload."""


class NonFiniteRowError(XTRError):
    """An embedding row contains NaN or Inf."""

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"non-finite value in embedding row {row}")


class NormalizationError(XTRError):
    """Store is flagged normalized but a row norm is not within 1e-4 of 1."""

    def __init__(self, row: int, norm: float):
        self.row = row
        self.norm = norm
        super().__init__(f"row {row} has L2 norm {norm!r}, expected 1.0 +/- 1e-4")


class ManifestError(XTRError):
    """Corpus/query manifest is inconsistent (counts, ids, lengths)."""


class DimensionMismatchError(XTRError):
    """Query and corpus embedding dimensions differ."""


class RetrievalError(XTRError):
    """Invalid retrieval request (e.g. k' exceeds the corpus token count)."""
