"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for bad input or
configuration, 3 for numeric failures at runtime.
"""


class DenseTargetError(Exception):
    exit_code = 2


class InvalidBox(DenseTargetError, ValueError):
    pass


class DegenerateQuad(DenseTargetError, ValueError):
    pass


class BoxOutOfBounds(DenseTargetError, ValueError):
    pass


class FormatError(DenseTargetError, ValueError):
    pass


class ShapeMismatch(DenseTargetError, ValueError):
    pass


class DomainError(DenseTargetError, ValueError):
    pass


class ConfigError(DenseTargetError, ValueError):
    pass


class SpecError(DenseTargetError, ValueError):
    pass


class UnsortedInput(DenseTargetError, ValueError):
    pass


class ImageIdMismatch(DenseTargetError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonScalarLoss(DenseTargetError, ValueError):
    pass


class MissingGrad(DenseTargetError, RuntimeError):
    pass


class DivergenceError(DenseTargetError, ArithmeticError):
    exit_code = 3

    def __init__(self, epoch, component, value=None):
        self.epoch = epoch
        self.component = component
        self.value = value
        super().__init__(f"non-finite {component} loss at epoch {epoch}: {value}")
