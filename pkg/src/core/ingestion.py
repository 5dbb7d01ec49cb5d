"""
Ingestion Module

Parses, validates and windows raw interaction logs and push-impression logs.
Both logs are JSON-lines: one object per line with exactly the documented
fields. Lenient mode skips and counts malformed lines; strict mode stops at
the first one.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Generic, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar

from config.settings import INGESTION_CONFIG, format_error_message
from models.events import CatalogItem, EventKind, InteractionEvent, PushImpression

from .file_utils import iter_lines, write_lines

# Configure logging
logger = logging.getLogger(__name__)

T = TypeVar("T")


class IngestionError(ValueError):
    """A malformed record in strict mode."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(format_error_message("malformed_line", line_no=line_no, reason=reason))
        self.line_no = line_no
        self.reason = reason


@dataclass
class ParseResult(Generic[T]):
    """Parsed records in input order plus the skipped-line report."""

    records: List[T] = field(default_factory=list)
    errors: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.errors)

    @property
    def total(self) -> int:
        return len(self.records) + self.skipped


def _require_string(record: dict, key: str) -> str:
    value = record[key]
    if not isinstance(value, str) or not value:
        raise ValueError(f"field '{key}' must be a non-empty string")
    return value


def _require_timestamp(record: dict) -> int:
    value = record["timestamp"]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError("field 'timestamp' must be an integer")
    if value <= 0:
        raise ValueError("field 'timestamp' must be positive")
    return value


def _load_object(line: str, fields: Sequence[str]) -> dict:
    if not line.strip():
        raise ValueError("blank line")
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"invalid JSON ({e.msg})")
    if not isinstance(record, dict):
        raise ValueError("record is not a JSON object")
    keys = set(record)
    missing = [name for name in fields if name not in keys]
    if missing:
        raise ValueError(f"missing fields {missing}")
    extra = sorted(keys - set(fields))
    if extra:
        raise ValueError(f"unexpected fields {extra}")
    return record


def event_from_record(record: dict) -> InteractionEvent:
    kind_value = record["kind"]
    valid_kinds = {kind.value: kind for kind in EventKind}
    if kind_value not in valid_kinds:
        raise ValueError(f"kind {kind_value!r} is not one of {sorted(valid_kinds)}")
    return InteractionEvent(
        user_id=_require_string(record, "user_id"),
        item_id=_require_string(record, "item_id"),
        category_id=_require_string(record, "category_id"),
        kind=valid_kinds[kind_value],
        timestamp=_require_timestamp(record),
    )


def impression_from_record(record: dict) -> PushImpression:
    opened = record["opened"]
    if isinstance(opened, bool) or opened not in (0, 1):
        raise ValueError(f"opened {opened!r} is not 0 or 1")
    return PushImpression(
        user_id=_require_string(record, "user_id"),
        anchor_item_id=_require_string(record, "anchor_item_id"),
        pushed_item_id=_require_string(record, "pushed_item_id"),
        opened=int(opened),
        timestamp=_require_timestamp(record),
    )


def catalog_from_record(record: dict) -> CatalogItem:
    price = record["price"]
    if price is not None:
        if isinstance(price, bool) or not isinstance(price, (int, float)) or price < 0:
            raise ValueError(f"price {price!r} must be a non-negative number or null")
        price = float(price)
    return CatalogItem(
        item_id=_require_string(record, "item_id"),
        category_id=_require_string(record, "category_id"),
        price=price,
    )


def demographics_from_record(record: dict) -> Tuple[str, Dict[str, int]]:
    groups = record["groups"]
    if not isinstance(groups, dict):
        raise ValueError("field 'groups' must be an object")
    for group, bucket in groups.items():
        if isinstance(bucket, bool) or not isinstance(bucket, int) or bucket < 0:
            raise ValueError(f"bucket {bucket!r} of group {group!r} must be a non-negative integer")
    return _require_string(record, "user_id"), {str(group): int(bucket) for group, bucket in groups.items()}


def _parse_stream(lines: Iterable[str], fields: Sequence[str], build: Callable[[dict], T],
                  strict: bool, label: str) -> ParseResult[T]:
    result: ParseResult[T] = ParseResult()
    for line_no, line in enumerate(lines, start=1):
        try:
            result.records.append(build(_load_object(line, fields)))
        except (ValueError, KeyError, TypeError) as e:
            if strict:
                logger.error(f"Strict {label} parsing stopped at line {line_no}: {e}")
                raise IngestionError(line_no, str(e))
            result.errors.append((line_no, str(e)))

    for line_no, reason in result.errors[:INGESTION_CONFIG["max_reported_errors"]]:
        logger.warning(f"Skipped {label} line {line_no}: {reason}")
    if result.skipped > INGESTION_CONFIG["max_reported_errors"]:
        logger.warning(f"... {result.skipped - INGESTION_CONFIG['max_reported_errors']} more skipped {label} lines")
    logger.info(f"Parsed {len(result.records)} {label} records, skipped {result.skipped}")
    return result


def parse_events(lines: Iterable[str], strict: bool = False) -> ParseResult[InteractionEvent]:
    """
    Parse interaction-log lines into InteractionEvents, preserving order.

    Args:
        lines: iterable of JSON-lines text lines
        strict: raise IngestionError on the first malformed line instead of skipping it

    Returns:
        ParseResult with the events and the skipped-line report
    """
    return _parse_stream(lines, INGESTION_CONFIG["event_fields"], event_from_record, strict, "event")


def parse_impressions(lines: Iterable[str], strict: bool = False) -> ParseResult[PushImpression]:
    """Parse push-impression lines; same contract as parse_events."""
    return _parse_stream(lines, INGESTION_CONFIG["impression_fields"], impression_from_record, strict, "impression")


def parse_catalog(lines: Iterable[str], strict: bool = False) -> ParseResult[CatalogItem]:
    return _parse_stream(lines, INGESTION_CONFIG["catalog_fields"], catalog_from_record, strict, "catalog")


def parse_demographics(lines: Iterable[str], strict: bool = False) -> ParseResult[Tuple[str, Dict[str, int]]]:
    """One {"user_id", "groups": {group: bucket}} object per line; a later line for a user wins."""
    return _parse_stream(lines, INGESTION_CONFIG["demographic_fields"], demographics_from_record, strict, "demographics")


def read_events(path, strict: bool = False) -> ParseResult[InteractionEvent]:
    return parse_events(iter_lines(path), strict)


def read_impressions(path, strict: bool = False) -> ParseResult[PushImpression]:
    return parse_impressions(iter_lines(path), strict)


def read_catalog(path, strict: bool = False) -> ParseResult[CatalogItem]:
    return parse_catalog(iter_lines(path), strict)


def read_demographics(path, strict: bool = False) -> Dict[str, Dict[str, int]]:
    return dict(parse_demographics(iter_lines(path), strict).records)


def serialize_event(event: InteractionEvent) -> str:
    return json.dumps({
        "user_id": event.user_id,
        "item_id": event.item_id,
        "category_id": event.category_id,
        "kind": event.kind.value,
        "timestamp": event.timestamp,
    }, separators=(",", ":"))


def serialize_impression(impression: PushImpression) -> str:
    return json.dumps({
        "user_id": impression.user_id,
        "anchor_item_id": impression.anchor_item_id,
        "pushed_item_id": impression.pushed_item_id,
        "opened": impression.opened,
        "timestamp": impression.timestamp,
    }, separators=(",", ":"))


def serialize_catalog_item(item: CatalogItem) -> str:
    return json.dumps({"item_id": item.item_id, "category_id": item.category_id, "price": item.price},
                      separators=(",", ":"))


def write_events(events: Iterable[InteractionEvent], path) -> int:
    return write_lines((serialize_event(e) for e in events), path)


def write_impressions(impressions: Iterable[PushImpression], path) -> int:
    return write_lines((serialize_impression(i) for i in impressions), path)


def write_catalog(items: Iterable[CatalogItem], path) -> int:
    return write_lines((serialize_catalog_item(i) for i in items), path)


def write_demographics(demographics: Mapping[str, Mapping[str, int]], path) -> int:
    return write_lines((json.dumps({"user_id": user, "groups": dict(sorted(demographics[user].items()))},
                                   separators=(",", ":")) for user in sorted(demographics)), path)


def filter_window(events: Sequence[T], start: int, end: int) -> List[T]:
    """
    Keep the records with start <= timestamp < end, in their original order.

    Raises:
        ValueError: If start > end
    """
    if start > end:
        raise ValueError(format_error_message("bad_window", start=start, end=end))
    return [event for event in events if start <= event.timestamp < end]


def time_range(events: Sequence, default: Optional[Tuple[int, int]] = None) -> Tuple[int, int]:
    """Half-open [min, max + 1) covering every record, or default when empty."""
    if not events:
        return default if default is not None else (0, 0)
    stamps = [event.timestamp for event in events]
    return min(stamps), max(stamps) + 1
