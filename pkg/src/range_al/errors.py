"""Exception types raised by the engine."""


class RangeAlError(Exception):
    """Base class for all engine errors."""


class MalformedScan(RangeAlError):
    """Scan bytes are not a whole number of float32 quadruples, or contain non-finite values."""


class MalformedLabels(RangeAlError):
    """Label bytes are not a whole number of 32-bit words."""


class UnknownLabel(RangeAlError):
    """A raw semantic id has no entry in the label map (strict mode only)."""


class PoolTooLarge(RangeAlError):
    """Requested pool/test/init sizes exceed the available entries."""


class StorageError(RangeAlError):
    """Reading or writing a run artifact failed."""


class DegeneratePoint(RangeAlError):
    """A point sits exactly at the sensor origin (range 0)."""


class BadParam(RangeAlError):
    """A parameter is outside its permitted range."""


class MissingInstances(RangeAlError):
    """Cut-paste source image carries no instance ids."""


class MissingPredictions(RangeAlError):
    """External scorer has no stored tensor for the requested sample."""


class MalformedTensor(RangeAlError):
    """Tensor file fails magic/dimension/payload validation."""


class NoSupervision(RangeAlError):
    """Training set contains no valid, non-ignore pixel."""


class EmptyPool(RangeAlError):
    """Selection requested from an empty pool."""


class BadClassId(RangeAlError):
    """A class id lies outside [0, C)."""


class UndefinedMetric(RangeAlError):
    """Metric has no defined value (every class has zero union)."""


class LevelUnreachable(RangeAlError):
    """A learning curve never reaches the requested mIoU level."""
