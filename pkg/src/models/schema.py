"""
Feature Schema Model

Defines the ordered feature slots of the four feature families and how they
split into the assignment vector x_hat (user + product slots) and the
prediction vector x (product + user-product + product-product slots).
Both vectors start with a constant bias slot.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from config.settings import FEATURE_CONFIG, format_error_message

logger = logging.getLogger(__name__)

BIAS_SLOT = "bias"


class Family(Enum):
    USER = "user"
    PRODUCT = "product"
    USER_PRODUCT = "user_product"
    PRODUCT_PRODUCT = "product_product"


class Window(Enum):
    D1 = "1d"
    D2 = "2d"
    D7 = "7d"
    D28 = "28d"
    NONE = "none"

    @property
    def days(self) -> Optional[int]:
        return None if self is Window.NONE else int(self.value[:-1])

    @classmethod
    def from_days(cls, days: int) -> "Window":
        return cls(f"{days}d")


ASSIGNMENT_FAMILIES = (Family.USER, Family.PRODUCT)
PREDICTION_FAMILIES = (Family.PRODUCT, Family.USER_PRODUCT, Family.PRODUCT_PRODUCT)

# Assignment-feature subsets used by the context-count ablation
FEATURE_SETS = {
    "full": (Family.USER, Family.PRODUCT),
    "user-only": (Family.USER,),
    "product-only": (Family.PRODUCT,),
}


@dataclass(frozen=True)
class FeatureSlot:
    name: str
    family: Family
    window: Window = Window.NONE

    def to_dict(self) -> Dict[str, str]:
        return {"name": self.name, "family": self.family.value, "window": self.window.value}

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "FeatureSlot":
        return cls(str(data["name"]), Family(data["family"]), Window(data.get("window", "none")))


@dataclass(frozen=True)
class FeatureSchema:
    """
    Ordered slot list plus the parameters the slots were generated from.

    The vectors are laid out family by family (bias first), keeping the
    schema's slot order within each family.
    """

    slots: Tuple[FeatureSlot, ...]
    user_clusters: int = FEATURE_CONFIG["user_clusters"]
    demographics: Dict[str, int] = field(default_factory=lambda: dict(FEATURE_CONFIG["demographics"]))

    def __post_init__(self):
        names = [slot.name for slot in self.slots]
        if len(set(names)) != len(names):
            raise ValueError("Feature slot names must be unique")
        if BIAS_SLOT in names:
            raise ValueError(f"'{BIAS_SLOT}' is reserved for the constant slot")

    def _names(self, families: Sequence[Family]) -> List[str]:
        ordered = [BIAS_SLOT]
        for family in families:
            ordered.extend(slot.name for slot in self.slots if slot.family is family)
        return ordered

    @property
    def assignment_names(self) -> List[str]:
        return self._names(ASSIGNMENT_FAMILIES)

    @property
    def prediction_names(self) -> List[str]:
        return self._names(PREDICTION_FAMILIES)

    @property
    def assignment_dims(self) -> int:
        """m, bias included."""
        return len(self.assignment_names)

    @property
    def prediction_dims(self) -> int:
        """n, bias included."""
        return len(self.prediction_names)

    def slot(self, name: str) -> FeatureSlot:
        for slot in self.slots:
            if slot.name == name:
                return slot
        raise KeyError(format_error_message("unknown_slot", name=name))

    def slots_in(self, family: Family) -> List[FeatureSlot]:
        return [slot for slot in self.slots if slot.family is family]

    def assignment_indices(self, feature_set: str = "full") -> List[int]:
        """Column indices of x_hat kept by an ablation feature set (bias always kept)."""
        if feature_set not in FEATURE_SETS:
            raise ValueError(format_error_message("unknown_feature_set", name=feature_set))
        keep = set(self._names(FEATURE_SETS[feature_set]))
        return [idx for idx, name in enumerate(self.assignment_names) if name in keep]

    def prediction_indices(self, family: Family) -> List[int]:
        names = {slot.name for slot in self.slots_in(family)}
        return [idx for idx, name in enumerate(self.prediction_names) if name in names]

    @property
    def schema_hash(self) -> str:
        payload = json.dumps([slot.to_dict() for slot in self.slots], sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_dict(self) -> Dict:
        return {
            "user_clusters": self.user_clusters,
            "demographics": dict(self.demographics),
            "slots": [slot.to_dict() for slot in self.slots],
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureSchema":
        schema = cls(
            slots=tuple(FeatureSlot.from_dict(item) for item in data["slots"]),
            user_clusters=int(data.get("user_clusters", FEATURE_CONFIG["user_clusters"])),
            demographics={str(k): int(v) for k, v in data.get("demographics", {}).items()},
        )
        stored = data.get("schema_hash")
        if stored and stored != schema.schema_hash:
            logger.warning(f"Schema file hash {stored[:12]} does not match its slots; using {schema.schema_hash[:12]}")
        return schema


def default_schema(user_clusters: int = None, demographics: Dict[str, int] = None,
                   windows: Sequence[int] = None) -> FeatureSchema:
    """
    Build the standard schema covering every feature row of the four families.

    Args:
        user_clusters: K_u, the number of k-means user clusters
        demographics: bucket count per demographic group, e.g. {"age": 5, "income": 4}
        windows: look-back windows in days

    Returns:
        FeatureSchema
    """
    user_clusters = FEATURE_CONFIG["user_clusters"] if user_clusters is None else user_clusters
    demographics = dict(FEATURE_CONFIG["demographics"] if demographics is None else demographics)
    windows = [Window.from_days(d) for d in (windows or FEATURE_CONFIG["windows_days"])]

    slots = [FeatureSlot(f"cluster_{k}", Family.USER) for k in range(user_clusters)]
    slots.append(FeatureSlot("active_score", Family.USER))
    slots.append(FeatureSlot("cold_start", Family.USER))
    for group, buckets in demographics.items():
        slots.extend(FeatureSlot(f"{group}_{b}", Family.USER) for b in range(buckets))

    slots.extend(FeatureSlot(f"sales_{w.value}", Family.PRODUCT, w) for w in windows)
    slots.extend(FeatureSlot(f"views_{w.value}", Family.PRODUCT, w) for w in windows)
    slots.append(FeatureSlot("price", Family.PRODUCT))
    slots.append(FeatureSlot("price_missing", Family.PRODUCT))

    slots.extend(FeatureSlot(f"pref_item_{w.value}", Family.USER_PRODUCT, w) for w in windows)
    slots.extend(FeatureSlot(f"pref_category_{w.value}", Family.USER_PRODUCT, w) for w in windows)

    slots.append(FeatureSlot("s_product", Family.PRODUCT_PRODUCT))
    slots.append(FeatureSlot("s_category", Family.PRODUCT_PRODUCT))

    return FeatureSchema(tuple(slots), user_clusters=user_clusters, demographics=demographics)


def save_schema(schema: FeatureSchema, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2)
    logger.info(f"Saved feature schema ({schema.assignment_dims} assignment / {schema.prediction_dims} prediction dims) to {path}")
    return path


def load_schema(path) -> FeatureSchema:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(format_error_message("file_not_found", path=path))
    with open(path, "r", encoding="utf-8") as f:
        schema = FeatureSchema.from_dict(json.load(f))
    logger.info(f"Loaded feature schema {schema.schema_hash[:12]} from {path}")
    return schema
