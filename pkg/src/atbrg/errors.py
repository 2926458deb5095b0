"""Exception hierarchy shared by every atbrg module."""


class AtbrgError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class ParseError(AtbrgError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class IntegrityError(AtbrgError):
    pass


class UnknownIdError(AtbrgError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class AlignmentError(AtbrgError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ShapeError(AtbrgError, ValueError):
    pass


class NumericError(AtbrgError, FloatingPointError):
    pass


class ContractError(AtbrgError, ValueError):
    pass


class MetricError(AtbrgError, ValueError):
    pass


class SamplingError(AtbrgError):
    pass


class ValidationError(AtbrgError, ValueError):
    pass
