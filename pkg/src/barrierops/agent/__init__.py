"""IoT agent: translates the device wire protocol to broker updates and back."""

from .wire import (
    Command,
    CommandResult,
    Measurement,
    ModelHeader,
    ModelChunk,
    ParseError,
    chunk_blob,
    crc32_hex,
    model_frames,
    parse_frame,
)
from .core import AgentConfig, CommandTicket, DeviceRegistration, IoTAgent
from .server import AgentServer

__all__ = [
    "AgentConfig",
    "AgentServer",
    "Command",
    "CommandResult",
    "CommandTicket",
    "DeviceRegistration",
    "IoTAgent",
    "Measurement",
    "ModelChunk",
    "ModelHeader",
    "ParseError",
    "chunk_blob",
    "crc32_hex",
    "model_frames",
    "parse_frame",
]
