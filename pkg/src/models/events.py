"""
Event Models

Canonical in-memory records for interaction logs (purchases and views) and
push-impression logs.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class EventKind(Enum):
    """Interaction kind; the value is the lowercase wire spelling."""

    PURCHASE = "purchase"
    VIEW = "view"


@dataclass(frozen=True)
class InteractionEvent:
    """One user-product purchase or view."""

    user_id: str
    item_id: str
    category_id: str
    kind: EventKind
    timestamp: int

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if not isinstance(self.kind, EventKind):
            raise ValueError(f"kind must be an EventKind, got {self.kind!r}")


@dataclass(frozen=True)
class PushImpression:
    """One sent push message: the anchor purchase, the pushed item and its open label."""

    user_id: str
    anchor_item_id: str
    pushed_item_id: str
    opened: int
    timestamp: int

    def __post_init__(self):
        if self.opened not in (0, 1):
            raise ValueError(f"opened must be 0 or 1, got {self.opened}")
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")


@dataclass(frozen=True)
class CatalogItem:
    """Item metadata; price may be missing."""

    item_id: str
    category_id: str
    price: Optional[float] = None
