"""Exception types raised across the package."""


class FvnnError(Exception):
    """Base class for all package errors."""


class ConfigError(FvnnError, ValueError):
    """Invalid configuration. ``errors`` holds one message per problem."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ParameterError(FvnnError, ValueError):
    pass


class DimensionError(FvnnError, ValueError):
    pass


class ShapeError(FvnnError, ValueError):
    pass


class GroupError(FvnnError, ValueError):
    pass


class StratificationError(GroupError):
    pass


class EmptyDataError(FvnnError, ValueError):
    pass


class SymmetryError(FvnnError, ValueError):
    pass


class SchemaError(FvnnError, ValueError):
    pass


class ParseError(FvnnError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(message)


class NumericError(FvnnError, ArithmeticError):
    def __init__(self, message, layer=None):
        self.layer = layer
        super().__init__(message)


class StateError(FvnnError, RuntimeError):
    pass


class TrainingError(FvnnError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class BatchCompositionError(FvnnError, ValueError):
    pass


class ArchitectureError(FvnnError, ValueError):
    pass
