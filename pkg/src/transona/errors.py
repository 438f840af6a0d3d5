"""Exception hierarchy; ``exit_code`` is what the CLI returns for each."""


class TransonaError(Exception):
    exit_code = 1


class ConfigError(TransonaError, ValueError):
    exit_code = 2


class DataError(TransonaError, ValueError):
    exit_code = 3


class ConvergenceError(TransonaError, RuntimeError):
    exit_code = 4
