"""Exception hierarchy shared across the package."""


class JamlabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(JamlabError, ValueError):
    pass


class AlignmentError(JamlabError, ValueError):
    pass


class InputError(JamlabError, ValueError):
    pass


class CropError(JamlabError, ValueError):
    pass


class StatsError(JamlabError, ValueError):
    pass


class IntegrityError(JamlabError):
    pass


class ArchitectureError(JamlabError, ValueError):
    pass


class ContractError(JamlabError, RuntimeError):
    pass


class TrainingError(JamlabError, RuntimeError):
    pass


class CheckpointError(JamlabError):
    pass


class FormatError(JamlabError, ValueError):
    """Raised when a binary file header does not match its declared format."""
