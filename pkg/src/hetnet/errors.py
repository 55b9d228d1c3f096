class ConfigurationError(ValueError):
    """A network, run, or checkpoint configuration is inconsistent."""


class InputError(ValueError):
    """Data handed to an operation violates its shape or value contract."""
