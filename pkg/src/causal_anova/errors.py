"""Typed exceptions shared across the package.

The hierarchy mirrors how callers need to react: input problems, config
problems, degenerate data, and numerical failures map to distinct CLI exit
codes and are never collapsed into bare ValueErrors.
"""


class CausalAnovaError(Exception):
    """Base class for every error this package raises on purpose."""


class InputError(CausalAnovaError):
    """Invalid data handed to validation or ingestion."""


class LengthMismatch(InputError):
    pass


class EmptyData(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class NonFiniteOutcome(NonFiniteValue):
    pass


class UnknownLevel(InputError):
    def __init__(self, factor: str, value: object):
        self.factor = factor
        self.value = value
        super().__init__(f"value {value!r} not among declared levels of factor {factor!r}")


class TooFewObservations(InputError):
    pass


class ConfigError(CausalAnovaError):
    """Inconsistent or unsupported configuration."""


class MissingSubset(ConfigError):
    """A decomposition check needs a term that was not supplied."""


class MissingStdError(ConfigError):
    """A confidence interval was requested from a report without one."""


class UnsupportedForm(ConfigError):
    """An oracle or learner cannot handle the requested functional form."""


class NumericalError(CausalAnovaError):
    """Numerical failure that is not the caller's fault."""


class DegenerateVariance(NumericalError):
    """The plug-in outcome variance is not positive."""


class SingularDesign(NumericalError):
    """Least-squares design is singular and no ridge penalty was allowed."""
