"""Exception hierarchy.

Every error raised on bad input derives from :class:`DataError`; the CLI maps
those to exit code 2.
"""


class NoduleXError(Exception):
    pass


class DataError(NoduleXError, ValueError):
    """Input data violates a documented contract."""


# ingest
class MalformedHeader(DataError):
    pass


class PayloadSizeMismatch(DataError):
    pass


class UnsupportedDType(DataError):
    pass


class XmlSyntaxError(DataError):
    pass


class RatingOutOfRange(DataError):
    pass


class EmptyPolygon(DataError):
    pass


class VertexOutOfBounds(DataError):
    pass


# consensus / qif
class EmptyMask(DataError):
    pass


class EmptyClass(DataError):
    pass


class SeedOutOfBounds(DataError):
    pass


# patchset
class CenterOutOfBounds(DataError):
    pass


class DegenerateRange(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class VersionUnsupported(DataError):
    pass


# models
class UnknownArchitecture(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class SingleClassTrainingSet(DataError):
    pass


class LengthMismatch(DataError):
    pass


# evaluation
class SingleClass(DataError):
    pass


class TooFewPatients(DataError):
    pass
