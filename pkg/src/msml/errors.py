"""Exception hierarchy shared by every module."""


class MsmlError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(MsmlError, ValueError):
    pass


class ZeroNormError(MsmlError, ValueError):
    pass


class NonFiniteError(MsmlError, ValueError):
    pass


class EmptyBatch(MsmlError, ValueError):
    pass


# sampling
class InsufficientIdentities(MsmlError, ValueError):
    pass


class InsufficientSamplesPerIdentity(MsmlError, ValueError):
    pass


class KTooSmall(MsmlError, ValueError):
    pass


class NeedThreeIdentities(MsmlError, ValueError):
    pass


# losses
class EmptyTupleList(MsmlError, ValueError):
    pass


class InvalidTuple(MsmlError, ValueError):
    pass


class IdentityWithoutPositive(MsmlError, ValueError):
    pass


class SingleIdentityBatch(MsmlError, ValueError):
    pass


class LabelOutOfRange(MsmlError, ValueError):
    pass


# model / training
class CacheMismatch(MsmlError, ValueError):
    pass


class NonFiniteLoss(MsmlError, RuntimeError):
    pass


class CheckpointError(MsmlError):
    pass


# evaluation
class EmptyGalleryAfterExclusion(MsmlError, ValueError):
    pass


class QueryWithoutMatch(MsmlError, ValueError):
    pass


class NoPositivePairs(MsmlError, ValueError):
    pass


# data io
class ParseError(MsmlError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class NonFiniteFeature(ParseError):
    pass


class InconsistentDimension(ParseError):
    pass


# cli
class ConfigError(MsmlError, ValueError):
    pass
