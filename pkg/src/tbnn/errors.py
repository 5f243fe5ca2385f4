"""Exception types shared across the package."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or infinity.

    ``node`` names the operation or leaf tensor that first went non-finite.
    """

    def __init__(self, node: str, detail: str = ""):
        self.node = node
        msg = f"non-finite values produced by node {node!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DataError(ValueError):
    """Malformed dataset file. The message locates the offending bytes or cell."""


class ConfigError(ValueError):
    """Invalid or unknown run-configuration content."""


class DivergenceError(RuntimeError):
    """A sampler chain left the region where the potential is finite."""
