"""Exception types shared across the package."""


class HtflError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(HtflError):
    """Tensor operation received operands with incompatible shapes."""


class DataError(HtflError):
    """Dataset construction or ingestion failed."""


class PartitionError(HtflError):
    """A partitioning scenario could not produce a valid client split."""


class ModelError(HtflError):
    """Model spec is malformed or incompatible with the input shape."""


class AggregationError(HtflError):
    """Server-side aggregation received inconsistent packets."""


class MethodInapplicableError(HtflError):
    """A method cannot run on the given model group.

    Carries structured fields so callers can report which method/group
    combination was rejected without parsing the message.
    """

    def __init__(self, method: str, group: str, reason: str):
        self.method = method
        self.group = group
        self.reason = reason
        super().__init__(f"method '{method}' not applicable to group '{group}': {reason}")


class ConfigError(HtflError):
    """Run configuration is invalid."""


class EngineError(HtflError):
    """A federated round failed. Carries the client id and stage."""

    def __init__(self, client_id: int, stage: str, cause: str):
        self.client_id = client_id
        self.stage = stage
        super().__init__(f"round aborted at stage '{stage}' for client {client_id}: {cause}")
