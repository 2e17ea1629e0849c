"""Exception hierarchy shared across the engine."""


class ConvoKernelError(Exception):
    """Base class for all engine errors."""


class ProtocolError(ConvoKernelError):
    """Malformed turn event or API request; the session is left untouched."""


class TemplateError(ConvoKernelError):
    """Authoring bug in the template store (unknown key, missing slot, duplicate key)."""


class FlowError(ConvoKernelError):
    """A flow misbehaved at runtime (chain cap exceeded, unknown transition target)."""

    def __init__(self, message: str, flow_id: str = "", state_id: str = ""):
        super().__init__(message)
        self.flow_id = flow_id
        self.state_id = state_id


class PackValidationError(ConvoKernelError):
    """A content pack failed schema validation; carries itemized defects."""

    def __init__(self, kind: str, problems: list[str]):
        super().__init__(f"{kind} pack invalid: " + "; ".join(problems))
        self.kind = kind
        self.problems = problems


class StorageError(ConvoKernelError):
    """Persistence backend failure."""
