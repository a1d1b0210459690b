"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ASLError(Exception):
    exit_code = 1


class ParameterError(ASLError, ValueError):
    exit_code = 2


class ShapeError(ASLError, ValueError):
    exit_code = 2


class ConfigError(ASLError, ValueError):
    exit_code = 2


class StateError(ASLError, RuntimeError):
    exit_code = 2


class LabelError(ASLError, ValueError):
    exit_code = 2


class FormatError(ASLError, ValueError):
    exit_code = 3


class IngestionError(ASLError, OSError):
    exit_code = 3


class InputError(ASLError, ValueError):
    exit_code = 3


class SplitError(ASLError, ValueError):
    exit_code = 3


class DegenerateBatchError(ShapeError):
    pass
