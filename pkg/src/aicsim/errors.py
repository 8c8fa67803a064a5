"""Exception hierarchy; the CLI maps these onto exit codes."""


class AicError(Exception):
    exit_code = 3


class ParseError(AicError, ValueError):
    exit_code = 2

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ValidationError(AicError, ValueError):
    exit_code = 2


class ConfigError(AicError, ValueError):
    exit_code = 2


class UndefinedMetric(AicError, ValueError):
    """A metric has no defined value for the given input (e.g. zero visits)."""


class InvariantViolation(AicError, RuntimeError):
    exit_code = 3
