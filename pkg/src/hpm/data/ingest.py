"""Amazon-style JSON-lines ingestion and k-core filtering."""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .records import UNKNOWN_CATEGORY, Catalog, InteractionSequence

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01


class IngestionError(ValueError):
    pass


class Event(NamedTuple):
    user: str
    item: str
    timestamp: int


@dataclass
class ItemMeta:
    category: str = UNKNOWN_CATEGORY
    brand: str | None = None
    price: float | None = None
    also_buy: list[str] = field(default_factory=list)
    also_view: list[str] = field(default_factory=list)


@dataclass
class ReviewParse:
    events: list[Event]
    skipped: int
    bad_lines: list[int]


def parse_reviews(lines: Iterable[str]) -> ReviewParse:
    """Read ``reviewerID``/``asin``/``unixReviewTime`` records in file order.

    Malformed lines are skipped and counted; more than 1% malformed raises
    :class:`IngestionError` listing the offending line numbers.
    """
    events, bad = [], []
    total = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        try:
            rec = json.loads(line)
            user, item, ts = rec["reviewerID"], rec["asin"], rec["unixReviewTime"]
            if not isinstance(user, str) or not isinstance(item, str):
                raise TypeError("ids must be strings")
            if isinstance(ts, bool) or not isinstance(ts, int):
                raise TypeError("timestamp must be an integer")
        except (ValueError, KeyError, TypeError):
            bad.append(lineno)
            continue
        events.append(Event(user, item, ts))
    if total and len(bad) > MAX_MALFORMED_FRACTION * total:
        raise IngestionError(
            f"{len(bad)} of {total} review lines malformed (lines {bad[:20]}{'...' if len(bad) > 20 else ''})"
        )
    return ReviewParse(events, len(bad), bad)


def leaf_category(raw) -> str:
    """Most specific element of the first category path."""
    if not raw:
        return UNKNOWN_CATEGORY
    first = raw[0] if isinstance(raw[0], list) else raw
    first = [c for c in first if isinstance(c, str) and c.strip()]
    return first[-1].strip() if first else UNKNOWN_CATEGORY


def _parse_price(raw) -> float | None:
    if raw is None or isinstance(raw, bool):
        return None
    if isinstance(raw, (int, float)):
        return float(raw) if raw > 0 else None
    if isinstance(raw, str):
        s = raw.strip().lstrip("$").replace(",", "")
        try:
            v = float(s)
        except ValueError:
            return None
        return v if v > 0 else None
    return None


def parse_metadata(lines: Iterable[str]) -> dict[str, ItemMeta]:
    """Per-item category leaf, brand, price and also_buy/also_view lists.

    Accepts both ``category`` (one path) and the older ``categories`` (list of
    paths) layouts. Lines that are not JSON objects with an ``asin`` are
    ignored.
    """
    meta: dict[str, ItemMeta] = {}
    skipped = 0
    for line in lines:
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            asin = rec["asin"]
        except (ValueError, KeyError, TypeError):
            skipped += 1
            continue
        raw_cat = rec.get("category", rec.get("categories"))
        brand = rec.get("brand")
        brand = brand.strip() if isinstance(brand, str) and brand.strip() else None
        related = rec.get("related") or {}
        meta[asin] = ItemMeta(
            category=leaf_category(raw_cat if isinstance(raw_cat, list) else None),
            brand=brand,
            price=_parse_price(rec.get("price")),
            also_buy=list(rec.get("also_buy") or related.get("also_bought") or []),
            also_view=list(rec.get("also_view") or related.get("also_viewed") or []),
        )
    if skipped:
        log.warning("skipped %d malformed metadata lines", skipped)
    return meta


def five_core_filter(events: list[Event], k: int = 5) -> list[Event]:
    """Drop users and items with fewer than ``k`` interactions, to a fixpoint."""
    current = list(events)
    while True:
        ucount = Counter(e.user for e in current)
        icount = Counter(e.item for e in current)
        kept = [e for e in current if ucount[e.user] >= k and icount[e.item] >= k]
        if len(kept) == len(current):
            break
        current = kept
    if not current and events:
        log.warning("%d-core filter removed every interaction", k)
    return current


def build_sequences(events: list[Event], catalog: Catalog) -> tuple[list[str], list[InteractionSequence]]:
    """Group events per user (users in sorted id order), stable-sorted by time."""
    per_user: dict[str, list[tuple[int, int, int]]] = defaultdict(list)
    for order, e in enumerate(events):
        per_user[e.user].append((e.timestamp, order, catalog.item_index[e.item]))
    users = sorted(per_user)
    seqs = []
    for u, uid in enumerate(users):
        rows = sorted(per_user[uid])
        items = [r[2] for r in rows]
        seqs.append(InteractionSequence(
            user=u,
            items=items,
            categories=catalog.item_category[items],
            timestamps=[r[0] for r in rows],
        ))
    return users, seqs
