"""Exception types shared across the package."""


class QdaError(Exception):
    """Base class for all package errors."""


class ContractError(QdaError):
    """A caller violated an operation precondition."""


class StructureParseError(QdaError):
    """Reply text is not parseable JSON."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class SchemaError(QdaError):
    """JSON parsed but does not have the coding-structure shape."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class RenderError(QdaError):
    """A prompt template placeholder could not be bound."""


class RepairError(QdaError):
    """The reply repair ladder could not salvage parseable JSON."""


class AgentError(QdaError):
    """An agent exhausted its attempt budget without a legal result."""

    def __init__(self, message: str, raw_replies: list[str]):
        super().__init__(message)
        self.raw_replies = raw_replies


class ReplayError(QdaError):
    """An operation log references state that does not exist."""

    def __init__(self, message: str, op_index: int | None = None):
        super().__init__(message)
        self.op_index = op_index


class ReplayMissError(QdaError):
    """A replay-mode cassette has no entry for the request fingerprint."""

    def __init__(self, fingerprint: str):
        super().__init__(f"cassette miss for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class TransportError(QdaError):
    """The chat backend could not be reached after all retries."""


class BackendConfigError(QdaError):
    """The chat backend rejected the request (non-retryable 4xx)."""


class DatasetError(QdaError):
    """A dataset manifest is missing files or referentially broken."""


class StateConflictError(QdaError):
    """A pipeline state transition was requested from the wrong state."""
