"""Error hierarchy shared by all tokengate modules.

Every error carries a stable machine-readable ``code`` string so the CLI and
the HTTP API can surface failures without string-matching exception text.
"""


class TokenGateError(Exception):
    """Base class; ``code`` is a stable identifier like ``BAD_CRC``."""

    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


# --- OTP codec ---

class InvalidChar(TokenGateError):
    code = "INVALID_CHAR"


class OddLength(TokenGateError):
    code = "ODD_LENGTH"


class BadLength(TokenGateError):
    code = "BAD_LENGTH"


class BadFormat(TokenGateError):
    code = "BAD_FORMAT"


class BadCrc(TokenGateError):
    code = "BAD_CRC"


# --- token / HSM ---

class DuplicateSerial(TokenGateError):
    code = "DUPLICATE_SERIAL"


class AlreadyPlugged(TokenGateError):
    code = "ALREADY_PLUGGED"


class NotPlugged(TokenGateError):
    code = "NOT_PLUGGED"


class UnknownHandle(TokenGateError):
    code = "UNKNOWN_HANDLE"


class PublicIdMismatch(TokenGateError):
    code = "PUBLIC_ID_MISMATCH"


# --- registry ---

class NotIsolated(TokenGateError):
    code = "NOT_ISOLATED"


class DuplicateId(TokenGateError):
    code = "DUPLICATE_ID"


class TokenDecommissioned(TokenGateError):
    code = "TOKEN_DECOMMISSIONED"


class RejectUnknownToken(TokenGateError):
    code = "REJECT_UNKNOWN_TOKEN"


class RejectDecommissionedToken(TokenGateError):
    code = "REJECT_DECOMMISSIONED_TOKEN"


class RejectBadOtp(TokenGateError):
    code = "REJECT_BAD_OTP"


class RejectReplay(TokenGateError):
    code = "REJECT_REPLAY"


class RejectUnknownGateway(TokenGateError):
    code = "REJECT_UNKNOWN_GATEWAY"


class RejectChannelConflict(TokenGateError):
    code = "REJECT_CHANNEL_CONFLICT"


class NotAMember(TokenGateError):
    code = "NOT_A_MEMBER"


class UnknownChannel(TokenGateError):
    code = "UNKNOWN_CHANNEL"


class UnknownGateway(TokenGateError):
    code = "UNKNOWN_GATEWAY"


class UnknownToken(TokenGateError):
    code = "UNKNOWN_TOKEN"


class UnknownEvent(TokenGateError):
    code = "UNKNOWN_EVENT"


class NotRevertible(TokenGateError):
    code = "NOT_REVERTIBLE"


class CorruptSnapshot(TokenGateError):
    code = "CORRUPT_SNAPSHOT"


# --- management protocol ---

class AuthFail(TokenGateError):
    code = "AUTH_FAIL"


class DecommissionedPeer(TokenGateError):
    code = "DECOMMISSIONED_PEER"


class IntegrityFail(TokenGateError):
    code = "INTEGRITY_FAIL"


class ReplayedFrame(TokenGateError):
    code = "REPLAYED_FRAME"


class SessionClosed(TokenGateError):
    code = "SESSION_CLOSED"


# --- data plane ---

class NoChannel(TokenGateError):
    code = "NO_CHANNEL"


class CounterExhausted(TokenGateError):
    code = "COUNTER_EXHAUSTED"


class BadTag(TokenGateError):
    code = "BAD_TAG"


class FrameReplay(TokenGateError):
    code = "REPLAY"


class UnknownKeyVersion(TokenGateError):
    code = "UNKNOWN_KEY_VERSION"


class NotMember(TokenGateError):
    code = "NOT_MEMBER"


# --- gateway agent ---

class NoToken(TokenGateError):
    code = "NO_TOKEN"


class NoSession(TokenGateError):
    code = "NO_SESSION"


class ChannelConflict(TokenGateError):
    code = "CHANNEL_CONFLICT"


# --- simulator ---

class IsolatedLink(TokenGateError):
    code = "ISOLATED_LINK"


class TokenNotPresent(TokenGateError):
    code = "TOKEN_NOT_PRESENT"
