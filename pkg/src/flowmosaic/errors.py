"""Exception hierarchy. Every error raised by the package derives from
:class:`FlowMosaicError` so the CLI can turn it into a diagnostic."""


class FlowMosaicError(Exception):
    pass


class ValidationError(FlowMosaicError, ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


class TOutOfRange(ValidationError):
    pass


class OOutOfRange(ValidationError):
    pass


class EmptyDataset(FlowMosaicError):
    pass


class MetadataMissing(FlowMosaicError):
    pass


class DecodeError(FlowMosaicError):
    pass


class DegenerateGeometry(FlowMosaicError):
    pass


class IncompatibleIntrinsics(ValidationError):
    pass


class InsufficientMatches(FlowMosaicError):
    pass


class DegenerateConfiguration(FlowMosaicError):
    pass


class DisconnectedChain(FlowMosaicError):
    pass


class EmptyInput(FlowMosaicError):
    pass


class NoOverlap(FlowMosaicError):
    pass


class NonPositiveAltitude(ValidationError):
    pass


class MissingBand(FlowMosaicError):
    pass


class BadThresholds(ValidationError):
    pass


class FootprintTooLarge(FlowMosaicError):
    pass


class OutOfField(FlowMosaicError):
    pass


class WriteError(FlowMosaicError):
    pass
