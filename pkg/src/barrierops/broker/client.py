"""Requests-based client for the broker HTTP API."""

from __future__ import annotations

from typing import Iterable

import requests

from ..errors import AlreadyExists, BarrierOpsError, FormatError, NotFound, ValidationError
from .core import Attribute, Entity, Subscription

_ERRORS = {
    "ValidationError": ValidationError,
    "AlreadyExists": AlreadyExists,
    "NotFound": NotFound,
    "FormatError": FormatError,
}


def raise_for_api_error(resp: requests.Response) -> None:
    if 200 <= resp.status_code < 300:
        return
    try:
        doc = resp.json()
    except ValueError:
        doc = {}
    code = doc.get("error", "Error")
    detail = doc.get("detail", f"HTTP {resp.status_code}")
    exc_type = _ERRORS.get(code)
    if exc_type is None:
        exc = BarrierOpsError(detail)
        exc.code = code
        raise exc
    raise exc_type(detail)


class BrokerClient:
    def __init__(self, base_url: str, timeout_s: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def create_entity(self, entity: Entity) -> str:
        resp = self._session.post(f"{self.base_url}/entities", json=entity.to_json(), timeout=self.timeout_s)
        raise_for_api_error(resp)
        return resp.json()["id"]

    def get_entity(self, entity_id: str) -> Entity:
        resp = self._session.get(f"{self.base_url}/entities/{entity_id}", timeout=self.timeout_s)
        raise_for_api_error(resp)
        return Entity.from_json(resp.json())

    def update_attributes(self, entity_id: str, fragment: dict[str, Attribute]) -> Entity:
        body = {name: attr.to_json() for name, attr in fragment.items()}
        resp = self._session.patch(
            f"{self.base_url}/entities/{entity_id}/attrs", json=body, timeout=self.timeout_s
        )
        raise_for_api_error(resp)
        return Entity.from_json(resp.json())

    def create_subscription(self, sub: Subscription) -> str:
        resp = self._session.post(f"{self.base_url}/subscriptions", json=sub.to_json(), timeout=self.timeout_s)
        raise_for_api_error(resp)
        return resp.json()["id"]

    def list_subscriptions(self) -> list[Subscription]:
        resp = self._session.get(f"{self.base_url}/subscriptions", timeout=self.timeout_s)
        raise_for_api_error(resp)
        return [Subscription.from_json(doc) for doc in resp.json()]

    def stats(self) -> dict:
        resp = self._session.get(f"{self.base_url}/stats", timeout=self.timeout_s)
        raise_for_api_error(resp)
        return resp.json()

    def wait_for_drain(self, timeout_s: float = 120.0, poll_s: float = 0.05) -> bool:
        """Poll /stats until no notification deliveries are pending."""
        import time

        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if self.stats()["pendingDeliveries"] == 0:
                return True
            time.sleep(poll_s)
        return False

    def close(self) -> None:
        self._session.close()
