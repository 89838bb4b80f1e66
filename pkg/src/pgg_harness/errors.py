"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all harness errors."""


class ConfigError(HarnessError):
    """Invalid configuration, manifest, or enum combination."""


class ValidationError(HarnessError):
    """A contribution or other input violates game preconditions."""

    def __init__(self, message: str, player_index: int | None = None) -> None:
        super().__init__(message)
        self.player_index = player_index


class GameStateError(HarnessError):
    """Operation not allowed in the current game state."""


# --- decision parsing -------------------------------------------------------


class DecisionParseError(HarnessError):
    """Agent output could not be turned into a contribution."""


class Unparseable(DecisionParseError):
    pass


class MissingKey(DecisionParseError):
    pass


class NotAnInteger(DecisionParseError):
    pass


class OutOfRange(DecisionParseError):
    pass


class AgentFailure(HarnessError):
    """An agent exhausted its retry budget; the game is aborted."""


# --- gateway ----------------------------------------------------------------


class GatewayError(HarnessError):
    transient = False


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    transient = True


class Timeout(GatewayError):
    transient = True


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str) -> None:
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body

    @property
    def transient(self) -> bool:  # type: ignore[override]
        return self.status >= 500


class FixtureMissing(GatewayError):
    pass


class HashMismatch(GatewayError):
    pass


class NetworkForbidden(GatewayError):
    """Raised by the poisoned transport on any use."""


# --- persistence ------------------------------------------------------------


class TranscriptIOError(HarnessError):
    pass


class SchemaVersionMismatch(TranscriptIOError):
    pass


class CorruptLine(TranscriptIOError):
    def __init__(self, line_number: int, reason: str) -> None:
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


# --- analysis ---------------------------------------------------------------


class InsufficientData(HarnessError):
    pass


class ShapeMismatch(HarnessError):
    pass


class JudgeUnparseable(HarnessError):
    pass
