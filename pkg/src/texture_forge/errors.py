"""Exception types shared across the package."""


class TextureForgeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TextureForgeError, ValueError):
    pass


class DegenerateOdfError(TextureForgeError, ValueError):
    """Raised when an ODF has no positive volume to normalize."""


class ConvergenceError(TextureForgeError, RuntimeError):
    """Newton iteration of the constitutive model failed to converge.

    ``residual`` holds the final residual norm and ``node`` the mesh node index
    (when known).
    """

    def __init__(self, message, residual=None, node=None):
        super().__init__(message)
        self.residual = residual
        self.node = node


class NumericalBlowupError(TextureForgeError, FloatingPointError):
    def __init__(self, message, substep=None, step=None):
        super().__init__(message)
        self.substep = substep
        self.step = step


class DeadOutputError(TextureForgeError, ArithmeticError):
    """The surrogate's ReLU stage produced (almost) no mass to normalize."""


class ConfigurationError(TextureForgeError):
    pass


class NotImprovableError(TextureForgeError):
    """No mode improves the objective; the search step must stop."""


class DataFormatError(TextureForgeError):
    """A file could not be parsed; ``path`` and ``line`` locate the problem."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line
