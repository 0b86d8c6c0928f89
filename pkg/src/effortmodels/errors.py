"""Exception hierarchy; the CLI maps these onto exit codes."""


class EffortModelsError(Exception):
    """Base class for all package errors."""


class DataError(EffortModelsError):
    """Bad input data: missing files, schema mismatches, malformed cells."""


class ConfigError(EffortModelsError):
    """Bad configuration: invalid parameters, unknown model names."""


class NumericError(EffortModelsError):
    """Numerically meaningless request: rank deficiency, zero variance."""
