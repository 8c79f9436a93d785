"""HTTP surface of the context broker."""

from __future__ import annotations

from ..errors import ValidationError
from ..httpkit import JsonHttpServer
from .core import Attribute, ContextBroker, Entity, Subscription
from .delivery import Notifier


class BrokerServer:
    """Serves entity CRUD and subscription endpoints over HTTP+JSON."""

    def __init__(
        self,
        broker: ContextBroker | None = None,
        notifier: Notifier | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.broker = broker or ContextBroker()
        self.notifier = notifier or Notifier()
        self.notifier.attach(self.broker)
        self._http = JsonHttpServer(host, port, name="broker")
        self._http.add_route("POST", r"/entities", self._post_entity)
        self._http.add_route("GET", r"/entities/([^/]+)", self._get_entity)
        self._http.add_route("PATCH", r"/entities/([^/]+)/attrs", self._patch_attrs)
        self._http.add_route("POST", r"/subscriptions", self._post_subscription)
        self._http.add_route("GET", r"/subscriptions", self._get_subscriptions)
        self._http.add_route("GET", r"/health", self._health)
        self._http.add_route("GET", r"/stats", self._stats)

    @property
    def url(self) -> str:
        return self._http.url

    def start(self) -> "BrokerServer":
        self._http.start()
        return self

    def stop(self) -> None:
        self._http.stop()
        self.notifier.stop()
        self.broker.close()

    # -- handlers -----------------------------------------------------------

    def _post_entity(self, body=None):
        if body is None:
            raise ValidationError("entity body required")
        entity_id = self.broker.create_entity(Entity.from_json(body))
        return 201, {"id": entity_id}

    def _get_entity(self, entity_id, body=None):
        return self.broker.get_entity(entity_id).to_json()

    def _patch_attrs(self, entity_id, body=None):
        if not body:
            raise ValidationError("attribute fragment required")
        fragment = {name: Attribute.from_json(doc) for name, doc in body.items() if name != "@context"}
        entity = self.broker.update_attributes(entity_id, fragment)
        return entity.to_json()

    def _post_subscription(self, body=None):
        if body is None:
            raise ValidationError("subscription body required")
        sub_id = self.broker.create_subscription(Subscription.from_json(body))
        return 201, {"id": sub_id}

    def _get_subscriptions(self, body=None):
        return [s.to_json() for s in self.broker.list_subscriptions()]

    def _health(self, body=None):
        return {"status": "ok"}

    def _stats(self, body=None):
        return {
            "entities": len(self.broker._slots),
            "subscriptions": len(self.broker.list_subscriptions()),
            "pendingDeliveries": self.notifier.pending(),
            "enqueued": self.notifier.stats.enqueued,
            "delivered": self.notifier.stats.delivered,
            "exhausted": len(self.notifier.stats.exhausted),
        }
