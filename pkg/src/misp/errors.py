"""Exception hierarchy.

Every error carries a short ``category`` string so the CLI can report a
machine-parseable failure class.
"""


class MispError(Exception):
    category = "error"


class ConfigurationError(MispError, ValueError):
    category = "configuration"


class DomainError(MispError, ValueError):
    category = "domain"


class InputError(MispError, ValueError):
    category = "input"


class ValidationError(InputError):
    category = "validation"


class PlanError(MispError, ValueError):
    category = "plan"


class NumericalError(MispError, ArithmeticError):
    category = "numerical"


class SamplerFailure(NumericalError):
    category = "sampler"

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
