"""Exception hierarchy shared by the protocol engines, codecs, simulator and CLI."""


class PrefixConsensusError(Exception):
    """Base class for every error raised by this package"""


class PreconditionViolation(PrefixConsensusError, ValueError):
    """An operation was called outside its domain (empty set, k too large, ...)"""


class UnknownPartyError(PrefixConsensusError, KeyError):
    """No key material is registered for the requested party"""

    def __init__(self, party):
        super().__init__(f"unknown party: {party}")
        self.party = party


class AggregationError(PrefixConsensusError):
    """An input signature failed verification while building an aggregate"""


class EncodeError(PrefixConsensusError):
    """An object cannot be represented in the wire format"""


class DecodeError(PrefixConsensusError):
    """Truncated or garbled bytes; `field` names the part that failed"""

    def __init__(self, field: str, detail: str = ""):
        message = f"cannot decode {field}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.field = field


class ProtocolViolation(PrefixConsensusError):
    """An engine reached a state its quorum assumptions rule out"""


class MissingPreimage(PrefixConsensusError):
    """A digest was referenced whose preimage this party does not hold yet"""

    def __init__(self, digest: bytes):
        super().__init__(f"missing preimage for {digest.hex()[:16]}")
        self.digest = digest


class ScenarioError(PrefixConsensusError):
    """Scenario file failed schema validation; `path` is the offending field"""

    def __init__(self, path: str, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = path
        self.detail = detail


class InvariantViolation(PrefixConsensusError):
    """A safety or liveness property failed on a simulated run"""

    def __init__(self, name: str, detail: str, seed=None, transcript: str = None):
        message = f"{name}: {detail}"
        if seed is not None:
            message += f" (seed={seed})"
        if transcript:
            message += f" (transcript: {transcript})"
        super().__init__(message)
        self.name = name
        self.detail = detail
        self.seed = seed
        self.transcript = transcript


class EngineFault(PrefixConsensusError):
    """An engine raised while processing a simulated event"""

    def __init__(self, party: int, time, detail: str, transcript: str = None):
        message = f"party {party} at t={time}: {detail}"
        if transcript:
            message += f" (transcript: {transcript})"
        super().__init__(message)
        self.party = party
        self.time = time
        self.transcript = transcript
