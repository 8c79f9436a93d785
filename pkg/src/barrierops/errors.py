"""Exception types shared across components."""


class BarrierOpsError(Exception):
    """Base class for every error raised by this package."""

    code = "Error"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail


class ValidationError(BarrierOpsError):
    code = "ValidationError"


class AlreadyExists(BarrierOpsError):
    code = "AlreadyExists"


class NotFound(BarrierOpsError):
    code = "NotFound"


class FormatError(BarrierOpsError):
    code = "FormatError"


class ConfigError(BarrierOpsError):
    code = "ConfigError"


# Registry of error codes that travel over HTTP, mapped to status codes.
HTTP_STATUS = {
    "ValidationError": 400,
    "ParseError": 400,
    "FormatError": 422,
    "AlreadyExists": 409,
    "NotFound": 404,
    "UnknownDevice": 404,
    "UnknownCommand": 404,
    "UnknownComponent": 404,
    "NoProductionModel": 404,
    "EmptyRange": 400,
    "DeviceUnreachable": 502,
    "BrokerUnreachable": 502,
}


def http_status_for(code: str) -> int:
    return HTTP_STATUS.get(code, 500)
