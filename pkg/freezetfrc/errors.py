"""
Exception hierarchy shared by the services, the simulator and the CLI.
"""
from typing import Optional


class FreezeTfrcError(Exception):
    """Base class for every error raised by this package."""


class ModelDomainError(FreezeTfrcError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class ModelInputError(FreezeTfrcError, ValueError):
    """A model or link parameter failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConvergenceError(FreezeTfrcError):
    """A numerical solver did not converge."""


class OracleMismatchError(FreezeTfrcError):
    """Closed-form and step-oracle timelines disagree."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"NFI {index}: {message}")


class OptionDecodeError(FreezeTfrcError):
    """The option area of a packet header is malformed."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"offset {offset}: {message}")


class ScenarioParseError(FreezeTfrcError):
    """A scenario file line could not be parsed."""

    def __init__(self, line_no: int, message: str, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}")


class ScenarioConfigError(FreezeTfrcError):
    """A scenario is syntactically valid but inconsistent."""


class StationarityError(FreezeTfrcError):
    """A flow never reached the stationary phase."""


class MetricsError(FreezeTfrcError):
    """A trace does not contain what a metric needs."""


class UnknownTechnologyError(FreezeTfrcError, KeyError):
    """A technology name is not one of the built-in profiles."""

    def __str__(self):
        return str(self.args[0]) if self.args else 'unknown technology'
