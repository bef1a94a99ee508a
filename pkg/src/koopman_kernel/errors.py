"""Exception and warning types shared across the package."""


class KoopmanError(Exception):
    pass


# expression parsing / evaluation

class ExpressionSyntaxError(KoopmanError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifier(KoopmanError):
    pass


class IndexOutOfRange(KoopmanError):
    pass


class DomainError(KoopmanError, ArithmeticError):
    pass


# dynamical systems

class UnknownSystem(KoopmanError):
    pass


class NotAnEquilibrium(KoopmanError):
    pass


class RepeatedEigenvalue(KoopmanError):
    pass


class NonHyperbolic(KoopmanError):
    pass


class ComplexEigenvalue(UserWarning):
    """Emitted when complex eigenpairs of the linearization are skipped."""


class NearDegenerateSpectrum(UserWarning):
    pass


# collocation / metrics

class InvalidDomain(KoopmanError):
    pass


class SingularSystem(KoopmanError):
    pass


class IllConditioned(UserWarning):
    pass


class DegenerateTruth(KoopmanError):
    pass


class EmptySet(KoopmanError):
    pass


class Blowup(KoopmanError):
    pass


class ConfigError(KoopmanError):
    pass
