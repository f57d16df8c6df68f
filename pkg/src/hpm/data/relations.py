"""Typed item-item relations and their category-level projection."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

import numpy as np

from .records import Catalog, InteractionSequence

RELATIONS = ("also_buy", "also_view", "same_brand", "same_cat_similar_price")
COMPLEMENT = "complement"
SUBSTITUTE = "substitute"
FAMILY = {
    "also_buy": COMPLEMENT,
    "same_brand": COMPLEMENT,
    "also_view": SUBSTITUTE,
    "same_cat_similar_price": SUBSTITUTE,
}
LEVELS = ("item", "category")

DEFAULT_PRICE_TOLERANCE = 0.10


def _edge_array(pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    arr = np.array(sorted(set(pairs)), dtype=np.int64)
    return arr.reshape(-1, 2)


@dataclass
class RelationGraph:
    """Directed edge sets per relation at item and category level.

    An edge ``(a, b)`` reads "history entity a relates to target entity b".
    """

    n_items: int
    n_categories: int
    item_edges: dict[str, np.ndarray]
    category_edges: dict[str, np.ndarray]
    relations: tuple[str, ...] = RELATIONS
    _csr: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in self.relations:
            self.item_edges[name] = np.asarray(self.item_edges.get(name, np.zeros((0, 2))), dtype=np.int64).reshape(-1, 2)
            self.category_edges[name] = np.asarray(self.category_edges.get(name, np.zeros((0, 2))), dtype=np.int64).reshape(-1, 2)
        for level, edges, n in (("item", self.item_edges, self.n_items), ("category", self.category_edges, self.n_categories)):
            for name, e in edges.items():
                if len(e) and (e.min() < 1 or e.max() > n):
                    raise ValueError(f"{level} edge for {name} outside [1, {n}]")

    def family(self, relation: str) -> str:
        return FAMILY[relation]

    @property
    def families(self) -> tuple[str, ...]:
        return tuple(FAMILY[r] for r in self.relations)

    def edges(self, level: str) -> dict[str, np.ndarray]:
        return self.item_edges if level == "item" else self.category_edges

    def n_nodes(self, level: str) -> int:
        return self.n_items if level == "item" else self.n_categories

    def has_edge(self, level: str, relation: str, src: int, dst: int) -> bool:
        indptr, indices = self.csr(level)[self.relations.index(relation)]
        lo, hi = indptr[src], indptr[src + 1]
        return bool(np.any(indices[lo:hi] == dst))

    def csr(self, level: str) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per relation ``(indptr, indices)`` over source nodes, targets sorted."""
        if level not in self._csr:
            n = self.n_nodes(level)
            out = []
            for name in self.relations:
                e = self.edges(level)[name]
                order = np.lexsort((e[:, 1], e[:, 0])) if len(e) else np.zeros(0, dtype=np.int64)
                e = e[order]
                counts = np.bincount(e[:, 0], minlength=n + 1) if len(e) else np.zeros(n + 1, dtype=np.int64)
                indptr = np.zeros(n + 2, dtype=np.int64)
                np.cumsum(counts, out=indptr[1:])
                out.append((indptr, np.ascontiguousarray(e[:, 1], dtype=np.int64)))
            self._csr[level] = out
        return self._csr[level]

    def summary(self) -> dict[str, dict[str, int]]:
        return {
            name: {"item_edges": int(len(self.item_edges[name])), "category_edges": int(len(self.category_edges[name]))}
            for name in self.relations
        }


def project_to_categories(item_edges: dict[str, np.ndarray], catalog: Catalog) -> dict[str, np.ndarray]:
    out = {}
    for name, e in item_edges.items():
        if len(e):
            out[name] = _edge_array(map(tuple, catalog.item_category[e].tolist()))
        else:
            out[name] = np.zeros((0, 2), dtype=np.int64)
    return out


def cooccurring_pairs(sequences: Iterable[InteractionSequence], window: int) -> set[tuple[int, int]]:
    """Unordered item pairs (a < b) appearing within ``window`` positions in a user's sequence."""
    pairs: set[tuple[int, int]] = set()
    for seq in sequences:
        items = seq.items.tolist()
        for i, a in enumerate(items):
            for b in items[i + 1:i + 1 + window]:
                if a != b:
                    pairs.add((a, b) if a < b else (b, a))
    return pairs


def similar_price(p1: float, p2: float, tolerance: float) -> bool:
    return abs(p1 - p2) / max(p1, p2) <= tolerance


def build_relation_graph(metadata: dict, catalog: Catalog,
                         price_tolerance: float = DEFAULT_PRICE_TOLERANCE,
                         sequences: list[InteractionSequence] | None = None,
                         window: int = 20) -> RelationGraph:
    """Derive the four relation edge sets from item metadata.

    also_buy / also_view edges are copied for in-catalog endpoints. Brand and
    price edges are symmetric; when ``sequences`` is given they are limited to
    pairs co-occurring within ``window`` positions of one user's sequence,
    otherwise every pair is considered.
    """
    idx = catalog.item_index
    buy, view = set(), set()
    for asin, meta in metadata.items():
        a = idx.get(asin)
        if a is None:
            continue
        for other in meta.also_buy:
            b = idx.get(other)
            if b is not None and b != a:
                buy.add((a, b))
        for other in meta.also_view:
            b = idx.get(other)
            if b is not None and b != a:
                view.add((a, b))

    if sequences is not None:
        candidates = sorted(cooccurring_pairs(sequences, window))
    else:
        candidates = combinations(range(1, catalog.n_items + 1), 2)
    brand, price = set(), set()
    for a, b in candidates:
        ba, bb = catalog.brand[a], catalog.brand[b]
        if ba is not None and ba == bb:
            brand.update(((a, b), (b, a)))
        pa, pb = catalog.price[a], catalog.price[b]
        if (pa is not None and pb is not None and catalog.item_category[a] == catalog.item_category[b]
                and similar_price(pa, pb, price_tolerance)):
            price.update(((a, b), (b, a)))

    item_edges = {
        "also_buy": _edge_array(buy),
        "also_view": _edge_array(view),
        "same_brand": _edge_array(brand),
        "same_cat_similar_price": _edge_array(price),
    }
    return RelationGraph(
        n_items=catalog.n_items,
        n_categories=catalog.n_categories,
        item_edges=item_edges,
        category_edges=project_to_categories(item_edges, catalog),
    )
