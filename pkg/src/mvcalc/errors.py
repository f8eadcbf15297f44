class InputError(ValueError):
    """Malformed or inconsistent input (bad dimensions, broken invariants, ...)."""


class CapabilityError(TypeError):
    """An object lacks data an operation needs (e.g. a missing Hessian)."""


class ResourceError(RuntimeError):
    """A configured resource limit was exceeded (e.g. the particle cap)."""
