"""Entity store, validation, and subscription matching.

The broker keeps everything in memory behind per-entity locks; an optional
append-only journal file makes state recoverable after a restart. Durable
history is the ingest sink's job, not the broker's.
"""

from __future__ import annotations

import copy
import fnmatch
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable
from urllib.parse import urlparse

from ..errors import AlreadyExists, NotFound, ValidationError
from ..timeutil import format_rfc3339, parse_rfc3339

DEFAULT_CONTEXT = "https://uri.etsi.org/ngsi-ld/v1/ngsi-ld-core-context-v1.8.jsonld"

ATTRIBUTE_KINDS = ("Property", "Relationship", "Command")
COMMAND_STATES = ("NONE", "PENDING", "OK", "FAILED")

# <cmd> status field walks NONE -> PENDING -> {OK, FAILED} -> PENDING (re-issue).
_STATUS_TRANSITIONS = {
    "NONE": {"NONE", "PENDING"},
    "PENDING": {"PENDING", "OK", "FAILED"},
    "OK": {"OK", "PENDING"},
    "FAILED": {"FAILED", "PENDING"},
}


@dataclass
class Attribute:
    kind: str = "Property"
    value: Any = None
    observed_at: datetime | None = None
    unit_code: str | None = None
    status: str | None = None  # Command kind only

    def to_json(self) -> dict:
        doc: dict[str, Any] = {"type": self.kind, "value": self.value}
        if self.observed_at is not None:
            doc["observedAt"] = format_rfc3339(self.observed_at)
        if self.unit_code is not None:
            doc["unitCode"] = self.unit_code
        if self.status is not None:
            doc["status"] = self.status
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Attribute":
        if not isinstance(doc, dict):
            raise ValidationError("attribute must be a JSON object")
        observed = doc.get("observedAt")
        return cls(
            kind=doc.get("type", "Property"),
            value=doc.get("value"),
            observed_at=parse_rfc3339(observed) if observed else None,
            unit_code=doc.get("unitCode"),
            status=doc.get("status"),
        )


@dataclass
class Entity:
    id: str
    type: str
    attributes: dict[str, Attribute] = field(default_factory=dict)

    def to_json(self) -> dict:
        doc: dict[str, Any] = {"id": self.id, "type": self.type}
        for name, attr in self.attributes.items():
            doc[name] = attr.to_json()
        doc["@context"] = DEFAULT_CONTEXT
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Entity":
        if not isinstance(doc, dict):
            raise ValidationError("entity must be a JSON object")
        attrs = {
            name: Attribute.from_json(value)
            for name, value in doc.items()
            if name not in ("id", "type", "@context")
        }
        return cls(id=doc.get("id", ""), type=doc.get("type", ""), attributes=attrs)


@dataclass
class Subscription:
    id: str
    entity_type: str
    endpoint: str
    id_pattern: str | None = None
    watched_attributes: frozenset[str] = frozenset()
    active: bool = True

    def matches(self, entity: Entity, changed: set[str]) -> bool:
        if not self.active or entity.type != self.entity_type:
            return False
        if self.id_pattern and not fnmatch.fnmatchcase(entity.id, self.id_pattern):
            return False
        if self.watched_attributes and not (self.watched_attributes & changed):
            return False
        return True

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "entityType": self.entity_type,
            "idPattern": self.id_pattern,
            "watchedAttributes": sorted(self.watched_attributes),
            "endpoint": self.endpoint,
            "active": self.active,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Subscription":
        return cls(
            id=doc.get("id", ""),
            entity_type=doc.get("entityType", ""),
            endpoint=doc.get("endpoint", ""),
            id_pattern=doc.get("idPattern"),
            watched_attributes=frozenset(doc.get("watchedAttributes") or ()),
            active=doc.get("active", True),
        )


def _require_urn(value: str, what: str) -> None:
    if not isinstance(value, str) or not value.startswith("urn:") or len(value) <= 4:
        raise ValidationError(f"{what} must be a URN, got {value!r}")


def _validate_attribute(name: str, attr: Attribute) -> None:
    if not name or name in ("id", "type"):
        raise ValidationError(f"invalid attribute name {name!r}")
    if attr.kind not in ATTRIBUTE_KINDS:
        raise ValidationError(f"attribute {name}: unknown kind {attr.kind!r}")
    if attr.kind == "Relationship":
        _require_urn(attr.value, f"attribute {name}: Relationship value")
    if attr.kind == "Command":
        if attr.status is not None and attr.status not in COMMAND_STATES:
            raise ValidationError(f"attribute {name}: bad command status {attr.status!r}")
    elif attr.status is not None:
        raise ValidationError(f"attribute {name}: status is only valid on Command attributes")


class _EntitySlot:
    __slots__ = ("entity", "lock")

    def __init__(self, entity: Entity):
        self.entity = entity
        self.lock = threading.Lock()


class ContextBroker:
    """Entity CRUD plus subscription bookkeeping.

    Notification fan-out is delegated to an observer callable so the store
    itself stays synchronous and testable; see :class:`Notifier`.
    """

    def __init__(self, journal_path: str | None = None):
        self._slots: dict[str, _EntitySlot] = {}
        self._subscriptions: list[Subscription] = []
        self._lock = threading.Lock()
        self._sub_seq = 0
        self._observers: list[Callable[[Subscription, Entity, dict[str, Attribute]], None]] = []
        self._journal_path = journal_path
        self._journal_file = None
        self._journal_lock = threading.Lock()
        if journal_path:
            self._replay_journal(journal_path)
            self._journal_file = open(journal_path, "a", encoding="utf-8")

    # -- observers ----------------------------------------------------------

    def add_observer(self, fn: Callable[[Subscription, Entity, dict[str, Attribute]], None]) -> None:
        """Register a callback invoked once per (matching subscription, change)."""
        self._observers.append(fn)

    def _emit(self, entity: Entity, changed: dict[str, Attribute]) -> None:
        with self._lock:
            subs = list(self._subscriptions)
        names = set(changed)
        for sub in subs:
            if sub.matches(entity, names):
                for fn in self._observers:
                    fn(sub, entity, changed)

    # -- entity operations --------------------------------------------------

    def create_entity(self, entity: Entity) -> str:
        self._validate_entity(entity)
        slot = _EntitySlot(copy.deepcopy(entity))
        with self._lock:
            if entity.id in self._slots:
                raise AlreadyExists(f"entity {entity.id} already exists")
            self._slots[entity.id] = slot
        self._journal({"op": "create_entity", "entity": entity.to_json()})
        self._emit(copy.deepcopy(slot.entity), dict(slot.entity.attributes))
        return entity.id

    def get_entity(self, entity_id: str) -> Entity:
        slot = self._slot(entity_id)
        with slot.lock:
            return copy.deepcopy(slot.entity)

    def entity_exists(self, entity_id: str) -> bool:
        with self._lock:
            return entity_id in self._slots

    def update_attributes(self, entity_id: str, fragment: dict[str, Attribute]) -> Entity:
        """Upsert the named attributes atomically and notify matching subscribers."""
        if not fragment:
            raise ValidationError("empty attribute fragment")
        slot = self._slot(entity_id)
        with slot.lock:
            # Validate the whole fragment against current state before touching it.
            normalized: dict[str, Attribute] = {}
            for name, attr in fragment.items():
                _validate_attribute(name, attr)
                current = slot.entity.attributes.get(name)
                normalized[name] = self._normalize_command(name, current, attr)
            for name, attr in normalized.items():
                slot.entity.attributes[name] = attr
            snapshot = copy.deepcopy(slot.entity)
            fragment = normalized
        self._journal(
            {
                "op": "update_attributes",
                "id": entity_id,
                "fragment": {k: v.to_json() for k, v in fragment.items()},
            }
        )
        self._emit(snapshot, copy.deepcopy(fragment))
        return snapshot

    @staticmethod
    def _normalize_command(name: str, current: Attribute | None, new: Attribute) -> Attribute:
        """Enforce the command status state machine; return the attribute to store.

        Writing a Command attribute without a status keeps the current status
        (a plain value write issues the command without touching its state).
        """
        stored = copy.deepcopy(new)
        if current is not None and current.kind == "Command" and new.kind != "Command":
            raise ValidationError(f"attribute {name}: cannot change a Command attribute to {new.kind}")
        if new.kind != "Command":
            return stored
        old_status = (current.status or "NONE") if current and current.kind == "Command" else None
        if old_status is None:
            if (new.status or "NONE") != "NONE":
                raise ValidationError(f"attribute {name}: new command must start in NONE, not {new.status}")
            stored.status = "NONE"
            return stored
        new_status = new.status if new.status is not None else old_status
        if new_status not in _STATUS_TRANSITIONS[old_status]:
            raise ValidationError(f"attribute {name}: illegal command transition {old_status} -> {new_status}")
        stored.status = new_status
        return stored

    # -- subscriptions ------------------------------------------------------

    def create_subscription(self, sub: Subscription) -> str:
        self._validate_subscription(sub)
        with self._lock:
            taken = {s.id for s in self._subscriptions}
            if not sub.id:
                while True:
                    self._sub_seq += 1
                    sub.id = f"urn:ngsi-ld:Subscription:{self._sub_seq:04d}"
                    if sub.id not in taken:
                        break
            elif sub.id in taken:
                raise AlreadyExists(f"subscription {sub.id} already exists")
            self._subscriptions.append(sub)
        self._journal({"op": "create_subscription", "sub": sub.to_json()})
        return sub.id

    def list_subscriptions(self) -> list[Subscription]:
        with self._lock:
            return [copy.deepcopy(s) for s in self._subscriptions]

    # -- validation ---------------------------------------------------------

    @staticmethod
    def _validate_entity(entity: Entity) -> None:
        _require_urn(entity.id, "entity id")
        if not entity.type:
            raise ValidationError("entity type must be non-empty")
        for name, attr in entity.attributes.items():
            _validate_attribute(name, attr)
            if attr.kind == "Command" and (attr.status or "NONE") != "NONE":
                raise ValidationError(f"attribute {name}: new command must start in NONE")

    @staticmethod
    def _validate_subscription(sub: Subscription) -> None:
        if not sub.entity_type:
            raise ValidationError("subscription entityType must be non-empty")
        parsed = urlparse(sub.endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValidationError(f"subscription endpoint is not an absolute URL: {sub.endpoint!r}")
        for name in sub.watched_attributes:
            if not name or name in ("id", "type"):
                raise ValidationError(f"subscription watches invalid attribute name {name!r}")

    # -- journal ------------------------------------------------------------

    def _journal(self, record: dict) -> None:
        if self._journal_file is None:
            return
        with self._journal_lock:
            self._journal_file.write(json.dumps(record) + "\n")
            self._journal_file.flush()

    def _replay_journal(self, path: str) -> None:
        try:
            fh = open(path, encoding="utf-8")
        except FileNotFoundError:
            return
        with fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                op = record.get("op")
                if op == "create_entity":
                    entity = Entity.from_json(record["entity"])
                    self._slots[entity.id] = _EntitySlot(entity)
                elif op == "update_attributes":
                    slot = self._slots.get(record["id"])
                    if slot is not None:
                        for name, doc in record["fragment"].items():
                            slot.entity.attributes[name] = Attribute.from_json(doc)
                elif op == "create_subscription":
                    sub = Subscription.from_json(record["sub"])
                    self._subscriptions.append(sub)
                    self._sub_seq = max(self._sub_seq, len(self._subscriptions))

    def close(self) -> None:
        if self._journal_file is not None:
            self._journal_file.close()
            self._journal_file = None

    # -- helpers ------------------------------------------------------------

    def _slot(self, entity_id: str) -> _EntitySlot:
        with self._lock:
            slot = self._slots.get(entity_id)
        if slot is None:
            raise NotFound(f"entity {entity_id} not found")
        return slot
