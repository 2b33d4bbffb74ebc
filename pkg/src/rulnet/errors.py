"""Exception types shared across the package."""


class RulnetError(Exception):
    """Base class for all package errors."""


class ParseError(RulnetError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class IntegrityError(RulnetError, ValueError):
    pass


class ValidationError(RulnetError, ValueError):
    pass


class ShapeError(RulnetError, ValueError):
    pass


class TrainingError(RulnetError, RuntimeError):
    pass
