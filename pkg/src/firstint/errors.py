"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures to its stable exit-code contract without a lookup table.
"""


class FirstIntError(Exception):
    exit_code = 1


class ValidationError(FirstIntError):
    """Malformed input: expression text, scenario file, parameter values."""

    exit_code = 2


class ExprSyntaxError(ValidationError):
    def __init__(self, message: str, position: int, expected: str):
        super().__init__(f"{message} at position {position} (expected {expected})")
        self.position = position
        self.expected = expected


class UnknownVariable(ValidationError):
    def __init__(self, name: str, position: int | None = None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown variable or parameter {name!r}{where}")
        self.name = name
        self.position = position


class UnknownScenario(ValidationError):
    pass


class ParameterViolation(ValidationError):
    pass


class RankDeficient(ValidationError):
    """The declared integrals are not functionally independent."""


class MathError(FirstIntError):
    """The construction is undefined at the requested point."""

    exit_code = 3


class NonFinite(MathError):
    """Evaluation left the domain of a function (pole, log/sqrt of bad value, overflow)."""


class SingularLocus(MathError):
    pass


class InconsistentDrift(MathError):
    pass


class DegenerateKernel(MathError):
    pass


class OrderUndetermined(MathError):
    """Step-halving runs did not behave asymptotically; no order is claimed."""


class VerificationFailure(FirstIntError):
    exit_code = 4
