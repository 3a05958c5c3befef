"""Exception hierarchy.

Every raised error carries a short machine-readable ``reason`` tag
(``"invalid-dimension"``, ``"gradient-blowup"`` ...) so callers and the
CLI can branch on it without parsing messages.
"""


class SelfsimError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 4

    def __init__(self, reason, message=None):
        self.reason = reason
        super().__init__(f"{reason}: {message}" if message else reason)


class ConfigError(SelfsimError, ValueError):
    """Invalid arguments or configuration (bad grid, bad schedule, ...)."""

    exit_code = 4


class RegimeViolation(SelfsimError):
    """Input or state left the small-Lipschitz regime the theory covers."""

    exit_code = 3


class NumericalFailure(SelfsimError):
    """Resolution, quadrature or domain-size problems."""

    exit_code = 4


class PropertyFailure(SelfsimError):
    """A checked property (self-similarity, monotone decay ...) failed."""

    exit_code = 2
