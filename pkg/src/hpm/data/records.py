"""Core data records shared by ingestion, splits and the model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAD = 0
UNKNOWN_CATEGORY = "unknown"
SECONDS_PER_DAY = 86_400.0


class DataIntegrityError(ValueError):
    """An index or record violates the catalog invariants."""


@dataclass
class Catalog:
    """Dense item and category vocabularies; index 0 is padding in both.

    ``item_ids[0]`` and ``category_names[0]`` are placeholders for padding.
    """

    item_ids: list[str]
    category_names: list[str]
    item_category: np.ndarray
    brand: list[str | None]
    price: list[float | None]
    item_index: dict[str, int] = field(init=False, repr=False)
    category_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.item_category = np.asarray(self.item_category, dtype=np.int64)
        self.item_index = {iid: i for i, iid in enumerate(self.item_ids) if i > 0}
        self.category_index = {c: i for i, c in enumerate(self.category_names) if i > 0}
        if len(self.item_category) != len(self.item_ids):
            raise DataIntegrityError("item_category must cover every item index")
        if self.item_category[0] != PAD:
            raise DataIntegrityError("padding item must map to padding category")
        cats = self.item_category[1:]
        if len(cats) and (cats.min() < 1 or cats.max() >= len(self.category_names)):
            raise DataIntegrityError("every item needs a category in [1, |C|]")

    @property
    def n_items(self) -> int:
        return len(self.item_ids) - 1

    @property
    def n_categories(self) -> int:
        return len(self.category_names) - 1

    @classmethod
    def build(cls, item_ids, item_meta: dict | None = None) -> "Catalog":
        """Assign dense indices in sorted id order.

        ``item_meta`` maps item id to an object with ``category``, ``brand``
        and ``price`` attributes; items without metadata get the reserved
        unknown category.
        """
        item_meta = item_meta or {}
        ids = sorted(set(item_ids))
        cat_of = {}
        for iid in ids:
            meta = item_meta.get(iid)
            cat_of[iid] = meta.category if meta is not None else UNKNOWN_CATEGORY
        cats = sorted(set(cat_of.values()))
        cindex = {c: i + 1 for i, c in enumerate(cats)}
        brand = [None] + [getattr(item_meta.get(i), "brand", None) for i in ids]
        price = [None] + [getattr(item_meta.get(i), "price", None) for i in ids]
        return cls(
            item_ids=["<pad>"] + ids,
            category_names=["<pad>"] + cats,
            item_category=np.array([PAD] + [cindex[cat_of[i]] for i in ids], dtype=np.int64),
            brand=brand,
            price=price,
        )


@dataclass
class InteractionSequence:
    """One user's chronological interactions (item, category, unix seconds)."""

    user: int
    items: np.ndarray
    categories: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.categories = np.asarray(self.categories, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if not (len(self.items) == len(self.categories) == len(self.timestamps)):
            raise DataIntegrityError(f"user {self.user}: ragged sequence")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) < 0):
            raise DataIntegrityError(f"user {self.user}: timestamps not sorted")

    def __len__(self) -> int:
        return len(self.items)


ROLES = ("train", "validation", "test")


@dataclass
class SplitExample:
    """A left-padded history window plus the single target it predicts."""

    user: int
    history_items: np.ndarray
    history_categories: np.ndarray
    history_times: np.ndarray
    target_item: int
    target_category: int
    target_time: int
    role: str
    target_position: int = -1

    @property
    def history_length(self) -> int:
        return int(np.count_nonzero(self.history_items))
