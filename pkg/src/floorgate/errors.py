"""Exception hierarchy.

Everything raised deliberately by the package derives from
:class:`FloorgateError`; the CLI maps those to exit code 3.
"""


class FloorgateError(Exception):
    """Base class for contract and invariant violations."""


class ConfigError(FloorgateError, ValueError):
    pass


class SchemaError(FloorgateError, ValueError):
    pass


class EmptyPanelError(FloorgateError, ValueError):
    pass


class QuantileError(FloorgateError, ValueError):
    pass


class ContractError(FloorgateError, ValueError):
    """A floor policy lowered a logged floor, or a similar replay contract breach."""


class UndefinedLiftError(FloorgateError, ZeroDivisionError):
    pass


class SupportError(FloorgateError, ValueError):
    """Target action is not represented in the logged action set."""


class OverlapError(FloorgateError, ValueError):
    pass


class DomainError(FloorgateError, ValueError):
    pass


class DesignError(FloorgateError, ValueError):
    pass


class EmptyFeasibleSetError(FloorgateError):
    """No policy survived the guardrail screen; the decision layer maps this to redesign."""
