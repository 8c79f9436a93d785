"""Line-oriented `|`-separated device wire protocol.

One frame per line. Frame kinds:

    Measurement: M|<deviceId>|t=<rfc3339>|<k>|<v>[|<k>|<v>...]
    Command:     C|<deviceId>|<command>|<payload-or-empty>
    ModelHeader: MH|<deviceId>|<version>|<totalChunks>|<crc32-hex>
    ModelChunk:  MC|<deviceId>|<seq>|<base64 chunk payload>
    Result:      R|<deviceId>|<command>|<OK|FAILED>|<info>

Identifier fields (device id, command, measurement keys, version) are plain
tokens; free-form value fields are escaped so `|` and newlines can never
break framing. Chunk payloads carry 768 decoded bytes each, which encodes
to 1024 base64 characters; chunk frames are therefore allowed to exceed the
1 KiB limit that applies to every other frame kind.
"""

from __future__ import annotations

import base64
import binascii
import re
import zlib
from dataclasses import dataclass
from datetime import datetime

from ..errors import BarrierOpsError
from ..timeutil import format_rfc3339, parse_rfc3339

MAX_FRAME_BYTES = 1024
MAX_CHUNK_FRAME_BYTES = 1152
CHUNK_DECODED_BYTES = 768
MAX_SINGLE_PAYLOAD_BYTES = 900

_TOKEN = re.compile(r"[A-Za-z0-9_.:-]+\Z")


class ParseError(BarrierOpsError):
    code = "ParseError"


def escape_value(value: str) -> str:
    return value.replace("%", "%25").replace("|", "%7C").replace("\n", "%0A")


def unescape_value(value: str) -> str:
    return value.replace("%0A", "\n").replace("%7C", "|").replace("%25", "%")


def _token(value: str, what: str) -> str:
    if not _TOKEN.match(value or ""):
        raise ParseError(f"{what} is not a valid token: {value!r}")
    return value


@dataclass
class Measurement:
    device_id: str
    pairs: dict[str, str]
    observed_at: datetime | None = None


@dataclass
class Command:
    device_id: str
    command: str
    payload: str


@dataclass
class ModelHeader:
    device_id: str
    version: str
    total_chunks: int
    crc32_hex: str


@dataclass
class ModelChunk:
    device_id: str
    seq: int
    payload: bytes


@dataclass
class CommandResult:
    device_id: str
    command: str
    status: str  # OK | FAILED
    info: str


Frame = Measurement | Command | ModelHeader | ModelChunk | CommandResult


# -- encoding ----------------------------------------------------------------


def _check_length(line: str, limit: int = MAX_FRAME_BYTES) -> str:
    if len(line.encode()) > limit:
        raise ParseError(f"frame exceeds {limit} bytes")
    return line


def measurement_frame(device_id: str, pairs: dict[str, str], observed_at: datetime | None = None) -> str:
    if not pairs:
        raise ParseError("measurement needs at least one key/value pair")
    fields = ["M", _token(device_id, "deviceId")]
    if observed_at is not None:
        fields.append("t=" + format_rfc3339(observed_at))
    for key, value in pairs.items():
        fields.append(_token(key, "measurement key"))
        fields.append(escape_value(str(value)))
    return _check_length("|".join(fields))


def command_frame(device_id: str, command: str, payload: str = "") -> str:
    line = "|".join(["C", _token(device_id, "deviceId"), _token(command, "command"), escape_value(payload)])
    return _check_length(line)


def result_frame(device_id: str, command: str, status: str, info: str = "") -> str:
    if status not in ("OK", "FAILED"):
        raise ParseError(f"result status must be OK or FAILED, got {status!r}")
    line = "|".join(["R", _token(device_id, "deviceId"), _token(command, "command"), status, escape_value(info)])
    return _check_length(line)


def header_frame(device_id: str, version: str, total_chunks: int, crc_hex: str) -> str:
    line = "|".join(
        ["MH", _token(device_id, "deviceId"), _token(version, "version"), str(total_chunks), crc_hex]
    )
    return _check_length(line)


def chunk_frame(device_id: str, seq: int, chunk: bytes) -> str:
    if len(chunk) > CHUNK_DECODED_BYTES:
        raise ParseError(f"chunk payload exceeds {CHUNK_DECODED_BYTES} decoded bytes")
    encoded = base64.b64encode(chunk).decode("ascii")
    line = "|".join(["MC", _token(device_id, "deviceId"), str(seq), encoded])
    return _check_length(line, MAX_CHUNK_FRAME_BYTES)


def crc32_hex(blob: bytes) -> str:
    return f"{zlib.crc32(blob) & 0xFFFFFFFF:08x}"


def chunk_blob(blob: bytes) -> list[bytes]:
    return [blob[i : i + CHUNK_DECODED_BYTES] for i in range(0, len(blob), CHUNK_DECODED_BYTES)]


def model_frames(device_id: str, version: str, blob: bytes) -> list[str]:
    """Header frame plus ceil(len/768) chunk frames for one model blob."""
    chunks = chunk_blob(blob)
    frames = [header_frame(device_id, version, len(chunks), crc32_hex(blob))]
    for seq, chunk in enumerate(chunks):
        frames.append(chunk_frame(device_id, seq, chunk))
    return frames


# -- parsing -----------------------------------------------------------------


def parse_frame(line: str) -> Frame:
    line = line.rstrip("\n")
    if not line:
        raise ParseError("empty frame")
    kind = line.split("|", 1)[0]
    limit = MAX_CHUNK_FRAME_BYTES if kind == "MC" else MAX_FRAME_BYTES
    if len(line.encode()) > limit:
        raise ParseError(f"frame exceeds {limit} bytes")
    fields = line.split("|")
    if kind == "M":
        return _parse_measurement(fields)
    if kind == "C":
        if len(fields) != 4:
            raise ParseError(f"command frame needs 4 fields, got {len(fields)}")
        return Command(_token(fields[1], "deviceId"), _token(fields[2], "command"), unescape_value(fields[3]))
    if kind == "MH":
        if len(fields) != 5:
            raise ParseError(f"model header needs 5 fields, got {len(fields)}")
        try:
            total = int(fields[3])
        except ValueError:
            raise ParseError(f"bad chunk count {fields[3]!r}") from None
        if total < 0:
            raise ParseError("chunk count must be >= 0")
        if not re.fullmatch(r"[0-9a-fA-F]{8}", fields[4]):
            raise ParseError(f"bad crc32 {fields[4]!r}")
        return ModelHeader(_token(fields[1], "deviceId"), _token(fields[2], "version"), total, fields[4].lower())
    if kind == "MC":
        if len(fields) != 4:
            raise ParseError(f"model chunk needs 4 fields, got {len(fields)}")
        try:
            seq = int(fields[2])
            payload = base64.b64decode(fields[3], validate=True)
        except (ValueError, binascii.Error):
            raise ParseError("bad chunk frame") from None
        if seq < 0:
            raise ParseError("chunk sequence must be >= 0")
        return ModelChunk(_token(fields[1], "deviceId"), seq, payload)
    if kind == "R":
        if len(fields) != 5:
            raise ParseError(f"result frame needs 5 fields, got {len(fields)}")
        if fields[3] not in ("OK", "FAILED"):
            raise ParseError(f"bad result status {fields[3]!r}")
        return CommandResult(
            _token(fields[1], "deviceId"), _token(fields[2], "command"), fields[3], unescape_value(fields[4])
        )
    raise ParseError(f"unknown frame kind {kind!r}")


def _parse_measurement(fields: list[str]) -> Measurement:
    if len(fields) < 2:
        raise ParseError("measurement frame too short")
    device_id = _token(fields[1], "deviceId")
    rest = fields[2:]
    observed_at = None
    if rest and rest[0].startswith("t="):
        try:
            observed_at = parse_rfc3339(rest[0][2:])
        except ValueError:
            raise ParseError(f"bad timestamp {rest[0]!r}") from None
        rest = rest[1:]
    if not rest or len(rest) % 2:
        raise ParseError("measurement key/value pairs are unbalanced")
    pairs: dict[str, str] = {}
    for i in range(0, len(rest), 2):
        key = _token(rest[i], "measurement key")
        value = unescape_value(rest[i + 1])
        if not value:
            raise ParseError(f"measurement {key} has an empty value")
        pairs[key] = value
    return Measurement(device_id, pairs, observed_at)
