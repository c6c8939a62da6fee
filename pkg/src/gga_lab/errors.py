"""Exception types shared across the package."""


class GgaLabError(Exception):
    pass


class ConfigError(GgaLabError, ValueError):
    """Invalid configuration, raised before any compute happens."""


class ShapeError(GgaLabError, ValueError):
    pass


class DomainError(GgaLabError, ValueError):
    """Input outside an operation's domain (empty batch, bad labels)."""


class PreconditionError(GgaLabError, ValueError):
    pass
