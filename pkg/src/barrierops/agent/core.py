"""Protocol middleware between the wire protocol and the context broker.

Measurements flow device -> agent -> broker attribute update; commands flow
broker -> agent -> device frame(s), with results coming back as R frames.
Binary payloads (model blobs) always travel as a header frame plus chunk
frames so the device can verify integrity before swapping models.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import socket
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from ..broker.client import BrokerClient
from ..broker.core import Attribute
from ..broker.core import Subscription
from ..errors import AlreadyExists, BarrierOpsError, NotFound, ValidationError
from ..timeutil import utcnow
from . import wire

log = logging.getLogger(__name__)


class UnknownDevice(BarrierOpsError):
    code = "UnknownDevice"


class UnknownCommand(BarrierOpsError):
    code = "UnknownCommand"


class DeviceUnreachable(BarrierOpsError):
    code = "DeviceUnreachable"


class BrokerUnreachable(BarrierOpsError):
    code = "BrokerUnreachable"


@dataclass
class DeviceRegistration:
    device_id: str
    entity_id: str
    entity_type: str
    attribute_map: dict[str, str] = field(default_factory=dict)
    commands: frozenset[str] = frozenset()
    transport: str = ""  # host:port the device listens on for command frames

    def to_json(self) -> dict:
        return {
            "deviceId": self.device_id,
            "entityId": self.entity_id,
            "entityType": self.entity_type,
            "attributeMap": dict(self.attribute_map),
            "commands": sorted(self.commands),
            "transport": self.transport,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DeviceRegistration":
        return cls(
            device_id=doc.get("deviceId", ""),
            entity_id=doc.get("entityId", ""),
            entity_type=doc.get("entityType", ""),
            attribute_map=dict(doc.get("attributeMap") or {}),
            commands=frozenset(doc.get("commands") or ()),
            transport=doc.get("transport", ""),
        )


@dataclass
class CommandTicket:
    ticket_id: str
    device_id: str
    entity_id: str
    command: str
    status: str = "PENDING"  # PENDING | OK | FAILED
    info: str = ""
    version: str | None = None
    done: threading.Event = field(default_factory=threading.Event, repr=False)

    def wait(self, timeout_s: float | None = None) -> bool:
        return self.done.wait(timeout_s)


@dataclass
class AgentConfig:
    command_timeout_s: float = 5.0
    device_connect_timeout_s: float = 2.0
    fetch_timeout_s: float = 10.0


class IoTAgent:
    def __init__(self, broker: BrokerClient, config: AgentConfig | None = None, now_fn=utcnow):
        self.broker = broker
        self.config = config or AgentConfig()
        self.now_fn = now_fn
        self.notify_url: str | None = None  # set by AgentServer before registrations
        self._registrations: dict[str, DeviceRegistration] = {}
        self._by_entity: dict[str, str] = {}
        self._lock = threading.Lock()
        self._ticket_seq = 0
        self._tickets: dict[str, CommandTicket] = {}
        self._active: dict[str, CommandTicket] = {}  # deviceId -> unresolved ticket
        self._timers: dict[str, threading.Timer] = {}
        self._dispatch_locks: dict[str, threading.Lock] = {}
        self._seen_deliveries: set[str] = set()
        self._seen_order: deque[str] = deque(maxlen=10_000)
        self._executor = ThreadPoolExecutor(max_workers=4, thread_name_prefix="agent")
        self._session = requests.Session()
        self.dropped_frames = 0

    # -- registration ---------------------------------------------------------

    def register_device(self, reg: DeviceRegistration) -> str:
        if not reg.device_id or not reg.entity_id or not reg.entity_type:
            raise ValidationError("deviceId, entityId, and entityType are required")
        with self._lock:
            if reg.device_id in self._registrations:
                raise AlreadyExists(f"device {reg.device_id} already registered")
            self._registrations[reg.device_id] = reg
            self._by_entity[reg.entity_id] = reg.device_id
            self._dispatch_locks[reg.device_id] = threading.Lock()
        try:
            self._ensure_entity(reg)
            if reg.commands and self.notify_url:
                self.broker.create_subscription(
                    Subscription(
                        id="",
                        entity_type=reg.entity_type,
                        id_pattern=reg.entity_id,
                        watched_attributes=frozenset(reg.commands),
                        endpoint=self.notify_url,
                    )
                )
        except requests.RequestException as exc:
            with self._lock:
                self._registrations.pop(reg.device_id, None)
                self._by_entity.pop(reg.entity_id, None)
            raise BrokerUnreachable(str(exc)) from exc
        return reg.entity_id

    def _ensure_entity(self, reg: DeviceRegistration) -> None:
        from ..broker.core import Entity

        attrs: dict[str, Attribute] = {}
        for attr_name in reg.attribute_map.values():
            attrs[attr_name] = Attribute(kind="Property", value=None)
        for cmd in sorted(reg.commands):
            attrs[cmd] = Attribute(kind="Command", value=None, status="NONE")
            attrs[f"{cmd}_status"] = Attribute(kind="Property", value="NONE")
            attrs[f"{cmd}_info"] = Attribute(kind="Property", value="")
        try:
            self.broker.create_entity(Entity(id=reg.entity_id, type=reg.entity_type, attributes=attrs))
        except AlreadyExists:
            # Bind to the existing entity: add only the attributes it is missing.
            existing = self.broker.get_entity(reg.entity_id)
            missing = {k: v for k, v in attrs.items() if k not in existing.attributes}
            if missing:
                self.broker.update_attributes(reg.entity_id, missing)

    def get_registration(self, device_id: str) -> DeviceRegistration:
        with self._lock:
            reg = self._registrations.get(device_id)
        if reg is None:
            raise UnknownDevice(f"device {device_id} is not registered")
        return reg

    def list_registrations(self) -> list[DeviceRegistration]:
        with self._lock:
            return list(self._registrations.values())

    # -- uplink: measurements and results --------------------------------------

    def handle_device_line(self, line: str) -> None:
        """Route one raw frame from a device; malformed frames are logged and dropped."""
        try:
            frame = wire.parse_frame(line)
        except wire.ParseError as exc:
            self.dropped_frames += 1
            log.warning("dropping malformed frame %r: %s", line[:80], exc.detail)
            return
        try:
            if isinstance(frame, wire.Measurement):
                self.ingest_measurement(frame)
            elif isinstance(frame, wire.CommandResult):
                self.handle_command_result(frame)
            else:
                self.dropped_frames += 1
                log.warning("unexpected %s frame from device side", type(frame).__name__)
        except UnknownDevice as exc:
            self.dropped_frames += 1
            log.warning("%s", exc.detail)

    def ingest_measurement(self, frame: wire.Measurement) -> dict[str, Attribute]:
        reg = self.get_registration(frame.device_id)
        observed = frame.observed_at or self.now_fn()
        fragment: dict[str, Attribute] = {}
        for key, raw in frame.pairs.items():
            name = reg.attribute_map.get(key)
            if name is None:
                log.debug("device %s sent unmapped key %s", frame.device_id, key)
                continue
            fragment[name] = Attribute(kind="Property", value=_coerce(raw), observed_at=observed)
        if not fragment:
            raise wire.ParseError(f"measurement from {frame.device_id} has no mapped keys")
        self.broker.update_attributes(reg.entity_id, fragment)
        return fragment

    def handle_command_result(self, frame: wire.CommandResult) -> None:
        with self._lock:
            ticket = self._active.get(frame.device_id)
        if ticket is None or ticket.command != frame.command or ticket.done.is_set():
            log.info(
                "ignoring result for unknown or resolved ticket: %s/%s", frame.device_id, frame.command
            )
            return
        self._resolve(ticket, frame.status, frame.info)

    # -- downlink: commands -----------------------------------------------------

    def dispatch_command(
        self,
        entity_id: str,
        command: str,
        payload: str | bytes = "",
        version: str | None = None,
    ) -> CommandTicket:
        with self._lock:
            device_id = self._by_entity.get(entity_id)
        if device_id is None:
            raise UnknownDevice(f"no device bound to entity {entity_id}")
        reg = self.get_registration(device_id)
        if command not in reg.commands:
            raise UnknownCommand(f"device {device_id} has no command {command!r}")

        dispatch_lock = self._dispatch_locks[device_id]
        with dispatch_lock:
            # One outstanding command per device: wait out the previous ticket.
            with self._lock:
                previous = self._active.get(device_id)
            if previous is not None and not previous.done.is_set():
                previous.wait(self.config.command_timeout_s * 2)
            with self._lock:
                self._ticket_seq += 1
                ticket = CommandTicket(
                    ticket_id=f"t{self._ticket_seq:06d}",
                    device_id=device_id,
                    entity_id=entity_id,
                    command=command,
                    version=version,
                )
                self._tickets[ticket.ticket_id] = ticket
                self._active[device_id] = ticket

            self._set_command_state(ticket, "PENDING", "")
            try:
                frames = self._frames_for(reg, command, payload, version)
                self._send_frames(reg, frames)
            except DeviceUnreachable as exc:
                self._resolve(ticket, "FAILED", exc.detail or "unreachable")
                raise
            except wire.ParseError:
                self._resolve(ticket, "FAILED", "bad payload")
                raise
            timer = threading.Timer(
                self.config.command_timeout_s, self._resolve, args=(ticket, "FAILED", "timeout")
            )
            timer.daemon = True
            self._timers[ticket.ticket_id] = timer
            timer.start()
        return ticket

    def _frames_for(
        self, reg: DeviceRegistration, command: str, payload: str | bytes, version: str | None
    ) -> list[str]:
        if isinstance(payload, bytes):
            # Binary payloads always take the chunked path so the device gets
            # a version label and a checksum regardless of size.
            return wire.model_frames(reg.device_id, version or "-", payload)
        escaped = wire.escape_value(payload)
        if len(escaped.encode()) > wire.MAX_SINGLE_PAYLOAD_BYTES:
            raise ValidationError(
                f"text payload exceeds {wire.MAX_SINGLE_PAYLOAD_BYTES} bytes; send bytes for chunking"
            )
        return [wire.command_frame(reg.device_id, command, payload)]

    def _send_frames(self, reg: DeviceRegistration, frames: list[str]) -> None:
        host, _, port = reg.transport.rpartition(":")
        try:
            with socket.create_connection((host, int(port)), timeout=self.config.device_connect_timeout_s) as sock:
                data = "".join(f + "\n" for f in frames).encode()
                sock.sendall(data)
        except (OSError, ValueError) as exc:
            raise DeviceUnreachable(f"{reg.device_id} at {reg.transport}: {exc}") from exc

    def _resolve(self, ticket: CommandTicket, status: str, info: str) -> None:
        with self._lock:
            if ticket.done.is_set():
                return
            ticket.status = status
            ticket.info = info
            ticket.done.set()
            timer = self._timers.pop(ticket.ticket_id, None)
        if timer is not None:
            timer.cancel()
        self._set_command_state(ticket, status, info)

    def _set_command_state(self, ticket: CommandTicket, status: str, info: str) -> None:
        try:
            entity = self.broker.get_entity(ticket.entity_id)
            current = entity.attributes.get(ticket.command)
            value = current.value if current is not None else None
            fragment = {
                ticket.command: Attribute(kind="Command", value=value, status=status),
                f"{ticket.command}_status": Attribute(kind="Property", value=status),
                f"{ticket.command}_info": Attribute(kind="Property", value=info),
            }
            self.broker.update_attributes(ticket.entity_id, fragment)
        except (requests.RequestException, NotFound, ValidationError) as exc:
            log.error("failed to write %s state for %s: %s", ticket.command, ticket.entity_id, exc)

    # -- broker notifications ---------------------------------------------------

    def handle_notification(self, payload: dict) -> None:
        """Process a broker notification that a command attribute changed."""
        delivery_id = payload.get("deliveryId")
        with self._lock:
            if delivery_id and delivery_id in self._seen_deliveries:
                return
            if delivery_id:
                if len(self._seen_order) == self._seen_order.maxlen:
                    self._seen_deliveries.discard(self._seen_order[0])
                self._seen_order.append(delivery_id)
                self._seen_deliveries.add(delivery_id)
        for fragment in payload.get("data", []):
            entity_id = fragment.get("id", "")
            with self._lock:
                device_id = self._by_entity.get(entity_id)
            if device_id is None:
                continue
            reg = self.get_registration(device_id)
            for name, doc in fragment.items():
                if name in ("id", "type") or name not in reg.commands:
                    continue
                value = doc.get("value") if isinstance(doc, dict) else doc
                if value is None:
                    continue
                self._executor.submit(self._issue_from_value, entity_id, name, value)

    def _issue_from_value(self, entity_id: str, command: str, value) -> None:
        try:
            payload: str | bytes
            version = None
            if isinstance(value, dict):
                version = value.get("version")
                if "blob_b64" in value:
                    payload = base64.b64decode(value["blob_b64"])
                elif "source" in value:
                    payload = self._fetch_blob(value["source"], value.get("sha256"))
                else:
                    payload = str(value)
            else:
                payload = str(value)
            self.dispatch_command(entity_id, command, payload, version=version)
        except BarrierOpsError as exc:
            log.warning("command %s on %s failed to dispatch: %s", command, entity_id, exc.detail)

    def _fetch_blob(self, source: str, sha256_hex: str | None) -> bytes:
        resp = self._session.get(source, timeout=self.config.fetch_timeout_s)
        resp.raise_for_status()
        doc = resp.json()
        import base64
        import hashlib

        blob = base64.b64decode(doc["blob_b64"]) if "blob_b64" in doc else resp.content
        if sha256_hex and hashlib.sha256(blob).hexdigest() != sha256_hex:
            raise ValidationError(f"model blob from {source} does not match expected sha256")
        return blob

    def close(self) -> None:
        self._executor.shutdown(wait=True)
        for timer in list(self._timers.values()):
            timer.cancel()
        self._session.close()


def _coerce(raw: str):
    try:
        return float(raw)
    except ValueError:
        return raw
