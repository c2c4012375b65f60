"""Exception hierarchy shared by every subpackage."""


class LedGfnError(Exception):
    """Base class for errors raised by ledgfn."""


class ConfigError(LedGfnError, ValueError):
    """Invalid configuration: bad dimensions, unknown keys, out-of-range values."""


class ContractError(LedGfnError, ValueError):
    """A caller violated an operation's precondition."""


class EnvironmentContractError(ContractError):
    """An environment produced an inconsistent state graph (e.g. a dead end)."""


class EnumerationTooLarge(LedGfnError):
    """Exhaustive enumeration refused because the space exceeds the guard."""

    def __init__(self, estimate, limit):
        self.estimate = estimate
        self.limit = limit
        super().__init__(
            f"terminal space too large to enumerate: ~{estimate} objects (limit {limit})"
        )


class IntegrityError(LedGfnError):
    """A checkpoint file failed validation."""


class RuntimeAbort(LedGfnError):
    """Training stopped on a numerical fault (e.g. NaN loss)."""
