"""Exception hierarchy shared by the store, service and CLI layers."""


class PriproError(Exception):
    """Base class; `code` is the machine-readable identifier used on the wire."""

    code = "error"


class InvalidRulesError(PriproError):
    code = "invalid_rules"


class NotFoundError(PriproError):
    code = "not_found"


class UnknownDeviceError(PriproError):
    code = "unknown_device"


class UnknownAuthenticatorError(PriproError):
    code = "unknown_authenticator"


class BadRequestError(PriproError):
    code = "bad_request"


class LateEventError(PriproError):
    code = "late_event"


class TooEarlyError(PriproError):
    code = "too_early"


class ConflictError(PriproError):
    """A concurrent commit won; the caller may re-read and retry."""

    code = "conflict"
