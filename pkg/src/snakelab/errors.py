"""Exception types shared across the package."""


class SnakelabError(Exception):
    """Base class for all package errors."""


class ParameterError(SnakelabError, ValueError):
    """An input violates a documented precondition."""


class EnvironmentExhausted(SnakelabError):
    """A walk stepped outside the generated environment window."""

    def __init__(self, site, window):
        super().__init__(f"site {site} outside environment window {window}")
        self.site = site
        self.window = window


class IncompletePathError(SnakelabError):
    """A path is too short for the requested stopping time."""


class ResourceError(SnakelabError):
    """A simulation exceeded a resource guard (population size, memory)."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
