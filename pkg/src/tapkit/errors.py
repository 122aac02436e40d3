"""Exception hierarchy. Each class maps to a stable CLI exit code."""


class TapError(Exception):
    exit_code = 1


class FormatError(TapError):
    """Malformed container or file header."""


class UnsupportedFormatError(TapError):
    """Well-formed file using an encoding we do not read."""


class SizeError(TapError, ValueError):
    pass


class DimensionError(TapError, ValueError):
    pass


class ConfigError(TapError, ValueError):
    pass


class DegenerateInputError(TapError, ValueError):
    pass


class TrainingError(TapError, RuntimeError):
    pass


class AlignmentError(TapError):
    pass


class IntegrityError(TapError):
    exit_code = 3
