"""Exception hierarchy shared across the package."""


class TvqError(Exception):
    """Base class for all data and format errors raised by this package."""


class FormatError(TvqError):
    """A serialized file violates the TMAP/QTV/bundle format contract."""


class MismatchError(TvqError):
    """Tensor name sets, shapes, or digests do not line up."""
