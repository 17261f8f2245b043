"""Exception types shared across the codec."""


class DiffcodecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DiffcodecError):
    """A configuration value is out of its allowed range."""


class ShapeError(DiffcodecError):
    """Tensor or image dimensions violate an operation's contract."""


class FormatError(DiffcodecError):
    """A bitstream container is malformed (bad magic, version, or length)."""


class CorruptionError(DiffcodecError):
    """An entropy-coded payload is truncated or internally inconsistent."""


class ScheduleError(DiffcodecError):
    """A noise schedule violates its invariants."""


class CalibrationError(DiffcodecError):
    """Rate calibration lacks the data it needs."""


class EvalError(DiffcodecError):
    """Rate-distortion evaluation input is unusable (range, overlap, size)."""


class ModelHashError(DiffcodecError):
    """Bitstream was produced by a different model than the one loaded."""
