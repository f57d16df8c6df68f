"""End-to-end construction of a dataset from Amazon-format files."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable

from .ingest import Event, ItemMeta, build_sequences, five_core_filter, parse_metadata, parse_reviews
from .records import Catalog
from .relations import DEFAULT_PRICE_TOLERANCE, build_relation_graph
from .splits import MAX_LEN
from .store import Dataset

log = logging.getLogger(__name__)


def dataset_from_events(events: list[Event], metadata: dict[str, ItemMeta],
                        price_tolerance: float = DEFAULT_PRICE_TOLERANCE, max_len: int = MAX_LEN,
                        core: int = 5, max_users: int | None = None) -> tuple[Dataset, dict]:
    """k-core filter, optional subsample, index, derive relations, split.

    ``max_users`` keeps the first users in sorted id order after filtering;
    the catalog is then rebuilt from their interactions only.
    """
    filtered = five_core_filter(events, core) if core > 0 else list(events)
    stats = {"events_in": len(events), "events_core": len(filtered)}
    if max_users is not None:
        keep = set(sorted({e.user for e in filtered})[:max_users])
        filtered = [e for e in filtered if e.user in keep]
    catalog = Catalog.build([e.item for e in filtered], metadata)
    user_ids, sequences = build_sequences(filtered, catalog)
    graph = build_relation_graph(metadata, catalog, price_tolerance, sequences=sequences, window=max_len)
    stats["events_kept"] = len(filtered)
    stats["items_without_metadata"] = sum(1 for i in catalog.item_ids[1:] if i not in metadata)
    return Dataset(catalog, sequences, graph, user_ids, max_len), stats


def ingest_files(reviews: str | Path, metadata: str | Path, **kw) -> tuple[Dataset, dict]:
    """Parse both JSON-lines files and build the dataset; see :func:`dataset_from_events`."""
    with open(reviews, encoding="utf-8") as fh:
        parsed = parse_reviews(fh)
    with open(metadata, encoding="utf-8") as fh:
        meta = parse_metadata(fh)
    ds, stats = dataset_from_events(parsed.events, meta, **kw)
    stats["malformed_review_lines"] = parsed.skipped
    return ds, stats


def to_amazon_lines(dataset: Dataset, metadata: dict[str, ItemMeta]) -> tuple[list[str], list[str]]:
    """Render a dataset back to review and metadata JSON lines (for fixtures)."""
    cat = dataset.catalog
    reviews = []
    for s in dataset.sequences:
        for item, ts in zip(s.items.tolist(), s.timestamps.tolist()):
            reviews.append(json.dumps({"reviewerID": dataset.user_ids[s.user], "asin": cat.item_ids[item],
                                       "unixReviewTime": int(ts), "overall": 5.0}, sort_keys=True))
    meta_lines = []
    for asin in sorted(metadata):
        m = metadata[asin]
        rec = {"asin": asin, "category": ["Root", m.category], "also_buy": m.also_buy, "also_view": m.also_view}
        if m.brand is not None:
            rec["brand"] = m.brand
        if m.price is not None:
            rec["price"] = f"${m.price:.2f}"
        meta_lines.append(json.dumps(rec, sort_keys=True))
    return reviews, meta_lines


def write_lines(path: str | Path, lines: Iterable[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path
