"""Exception types raised across the package."""


class IclError(Exception):
    """Base class for all package errors."""


class InstanceTooLarge(IclError):
    """An exact enumeration would exceed its configured budget."""


class InvalidSelectionVector(IclError, ValueError):
    pass


class EmptyActiveSet(IclError, ValueError):
    pass


class UninitializedHistory(IclError):
    pass


class NonFiniteGradient(IclError, FloatingPointError):
    pass


class MisalignedSubjects(IclError, ValueError):
    pass


class DegenerateDenominator(IclError, ZeroDivisionError):
    pass


class ActiveNotParticipant(IclError, ValueError):
    pass


class SeedMismatch(IclError, ValueError):
    pass


class ConfigError(IclError):
    """Configuration could not be parsed or validated.

    ``issues`` holds every problem found, each as ``(field_path, message)``;
    parse errors use the path ``"<parse>"`` and carry line/column in the message.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        lines = [f"{path}: {msg}" for path, msg in self.issues]
        super().__init__("; ".join(lines) if lines else "invalid configuration")


class SeedRunError(IclError):
    """A backend failed while running one seed; ``seed`` names it."""

    def __init__(self, seed, cause):
        self.seed = seed
        self.cause = cause
        super().__init__(f"seed {seed}: {type(cause).__name__}: {cause}")
