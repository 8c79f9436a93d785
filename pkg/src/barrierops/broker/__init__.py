"""Minimal NGSI-LD-subset context broker.

Holds current entity state, validates attribute updates, and fans out
change notifications to HTTP subscribers. This is the single source of
real-time context for every other component.
"""

from .core import Attribute, ContextBroker, Entity, Subscription, DEFAULT_CONTEXT
from .delivery import DeliveryResult, Notifier
from .server import BrokerServer
from .client import BrokerClient

__all__ = [
    "Attribute",
    "BrokerClient",
    "BrokerServer",
    "ContextBroker",
    "DEFAULT_CONTEXT",
    "DeliveryResult",
    "Entity",
    "Notifier",
    "Subscription",
]
