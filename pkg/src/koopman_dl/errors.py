"""Exception hierarchy shared by every module in the package."""


class KoopmanDLError(Exception):
    """Base class for errors raised by ``koopman_dl``."""


class InvalidInputError(KoopmanDLError, ValueError):
    """Input has the wrong shape, contains non-finite values, or is out of range."""


class NumericalError(KoopmanDLError, ArithmeticError):
    """Base class for failures of a numerical procedure on valid input."""


class NonDiagonalizableError(NumericalError):
    """Eigenvector matrix is numerically singular.

    Attributes
    ----------
    condition : float
        2-norm condition estimate of the (unit-column) eigenvector matrix.
    """

    def __init__(self, condition, message=None):
        self.condition = float(condition)
        if message is None:
            message = (
                f"matrix is not numerically diagonalizable "
                f"(eigenvector condition estimate {self.condition:.3e})"
            )
        super().__init__(message)


class IntegrationError(NumericalError):
    """Time integration produced a non-finite or blown-up state."""


class TrainingDivergedError(NumericalError):
    """Dictionary-learning loss became non-finite or exploded.

    Attributes
    ----------
    history : TrainingHistory
        Records up to the last finite iteration.
    """

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history
