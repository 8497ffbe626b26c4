"""Exception hierarchy. The CLI maps each class to an exit code."""


class ImgbkError(Exception):
    exit_code = 1


class ConfigError(ImgbkError, ValueError):
    """Invalid configuration or flag combination."""

    exit_code = 2


class DatasetError(ImgbkError, ValueError):
    """Malformed, inconsistent or missing dataset input."""

    exit_code = 3

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericalError(ImgbkError, ArithmeticError):
    """Non-finite values or divergence during computation."""

    exit_code = 4
