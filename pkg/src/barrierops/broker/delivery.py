"""Asynchronous notification delivery with bounded retries.

Delivery is decoupled from the update call: updates enqueue work on a
thread pool and return immediately, so updater latency never depends on
subscriber health. Semantics are at-least-once; the ``deliveryId`` token is
generated once per notification and reused on every retry so receivers can
deduplicate.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import requests

from ..timeutil import format_rfc3339, utcnow
from .core import Attribute, ContextBroker, DEFAULT_CONTEXT, Entity, Subscription

log = logging.getLogger(__name__)


@dataclass
class Notification:
    subscription_id: str
    endpoint: str
    delivery_id: str
    notified_at: str
    data: list[dict]

    def to_json(self) -> dict:
        return {
            "subscriptionId": self.subscription_id,
            "notifiedAt": self.notified_at,
            "deliveryId": self.delivery_id,
            "data": self.data,
            "@context": DEFAULT_CONTEXT,
        }


@dataclass
class DeliveryResult:
    delivery_id: str
    subscription_id: str
    endpoint: str
    attempts: int
    ok: bool
    error: str | None = None


@dataclass
class DeliveryStats:
    enqueued: int = 0
    delivered: int = 0
    exhausted: list[DeliveryResult] = field(default_factory=list)


class Notifier:
    """Thread-pool notification dispatcher for a :class:`ContextBroker`."""

    def __init__(
        self,
        max_retries: int = 3,
        backoff_s: float = 0.2,
        workers: int = 8,
        request_timeout_s: float = 5.0,
    ):
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.request_timeout_s = request_timeout_s
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="notify")
        self._session = requests.Session()
        self._pending = 0
        self._cv = threading.Condition()
        self.stats = DeliveryStats()
        self._closed = False

    def attach(self, broker: ContextBroker) -> None:
        broker.add_observer(self.on_change)

    # Called by the broker once per (matching subscription, change).
    def on_change(self, sub: Subscription, entity: Entity, changed: dict[str, Attribute]) -> None:
        fragment: dict[str, Any] = {"id": entity.id, "type": entity.type}
        for name, attr in changed.items():
            fragment[name] = attr.to_json()
        notification = Notification(
            subscription_id=sub.id,
            endpoint=sub.endpoint,
            delivery_id=uuid.uuid4().hex,
            notified_at=format_rfc3339(utcnow()),
            data=[fragment],
        )
        with self._cv:
            if self._closed:
                return
            self._pending += 1
            self.stats.enqueued += 1
        self._pool.submit(self._run, notification)

    def _run(self, notification: Notification) -> None:
        try:
            result = self.deliver(notification)
            with self._cv:
                if result.ok:
                    self.stats.delivered += 1
                else:
                    self.stats.exhausted.append(result)
        finally:
            with self._cv:
                self._pending -= 1
                self._cv.notify_all()

    def deliver(self, notification: Notification) -> DeliveryResult:
        """Attempt one notification: initial POST plus up to ``max_retries`` retries."""
        payload = notification.to_json()
        attempts = 0
        error: str | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            attempts += 1
            try:
                resp = self._session.post(
                    notification.endpoint, json=payload, timeout=self.request_timeout_s
                )
                if 200 <= resp.status_code < 300:
                    return DeliveryResult(
                        notification.delivery_id, notification.subscription_id,
                        notification.endpoint, attempts, True,
                    )
                error = f"HTTP {resp.status_code}"
            except requests.RequestException as exc:
                error = type(exc).__name__
        log.warning(
            "notification %s to %s exhausted after %d attempts: %s",
            notification.delivery_id, notification.endpoint, attempts, error,
        )
        return DeliveryResult(
            notification.delivery_id, notification.subscription_id,
            notification.endpoint, attempts, False, error,
        )

    def pending(self) -> int:
        with self._cv:
            return self._pending

    def drain(self, timeout_s: float = 60.0) -> bool:
        """Block until every enqueued notification has finished (delivered or exhausted)."""
        deadline = time.monotonic() + timeout_s
        with self._cv:
            while self._pending:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._cv.wait(remaining)
        return True

    def stop(self) -> None:
        with self._cv:
            self._closed = True
        self._pool.shutdown(wait=True)
        self._session.close()
