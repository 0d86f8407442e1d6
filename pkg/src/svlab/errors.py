"""Exception types raised across the package."""


class SvlabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SvlabError, ValueError):
    pass


class NotNearVariety(SvlabError):
    pass


class SingularPoint(SvlabError):
    pass


class InsufficientPoints(SvlabError):
    pass


class DegenerateQuadric(SvlabError):
    pass


class EmptyShading(SvlabError):
    pass


class ConfigError(SvlabError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
