"""Processed-dataset directory (schema ``hpm-data-v1``).

Layout::

    catalog.json    items (index, id, category index, brand, price) and categories
    sequences.json  per user: index, id, items, categories, timestamps (unix s)
    relations.json  per relation: name, family, item_edges, category_edges
    splits.json     max_len and [user, role, target_position] triples
    manifest.json   counts and provenance

Every file carries ``"schema": "hpm-data-v1"``. JSON is written with sorted
keys and fixed separators so regeneration is byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .records import ROLES, Catalog, InteractionSequence, SplitExample
from .relations import FAMILY, RelationGraph
from .splits import MAX_LEN, _window, build_splits

SCHEMA = "hpm-data-v1"


class SchemaError(ValueError):
    pass


@dataclass
class Dataset:
    catalog: Catalog
    sequences: list[InteractionSequence]
    graph: RelationGraph
    user_ids: list[str]
    max_len: int = MAX_LEN
    examples: list[SplitExample] = field(default=None)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.examples is None:
            self.examples = build_splits(self.sequences, self.max_len)

    def split(self, role: str) -> list[SplitExample]:
        return [e for e in self.examples if e.role == role]

    def user_histories(self) -> list[set[int]]:
        return [set(s.items.tolist()) for s in self.sequences]

    def summary(self) -> dict:
        return {
            "users": len(self.sequences),
            "items": self.catalog.n_items,
            "categories": self.catalog.n_categories,
            "interactions": int(sum(len(s) for s in self.sequences)),
            "edges": self.graph.summary(),
            "splits": {r: len(self.split(r)) for r in ROLES},
        }

    def subsample_users(self, n: int) -> "Dataset":
        keep = self.sequences[:n]
        seqs = [InteractionSequence(i, s.items, s.categories, s.timestamps) for i, s in enumerate(keep)]
        return Dataset(self.catalog, seqs, self.graph, self.user_ids[:n], self.max_len)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _load(path: Path) -> dict:
    obj = json.loads(path.read_text())
    if obj.get("schema") != SCHEMA:
        raise SchemaError(f"{path}: expected schema {SCHEMA!r}, got {obj.get('schema')!r}")
    return obj


def save_dataset(ds: Dataset, out_dir: str | Path, manifest_extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cat = ds.catalog
    _dump(out / "catalog.json", {
        "schema": SCHEMA,
        "categories": cat.category_names[1:],
        "items": [
            {"index": i, "id": cat.item_ids[i], "category": int(cat.item_category[i]),
             "brand": cat.brand[i], "price": cat.price[i]}
            for i in range(1, cat.n_items + 1)
        ],
    })
    _dump(out / "sequences.json", {
        "schema": SCHEMA,
        "users": [
            {"index": s.user, "id": ds.user_ids[s.user], "items": s.items.tolist(),
             "categories": s.categories.tolist(), "timestamps": s.timestamps.tolist()}
            for s in ds.sequences
        ],
    })
    _dump(out / "relations.json", {
        "schema": SCHEMA,
        "relations": [
            {"name": r, "family": FAMILY[r],
             "item_edges": ds.graph.item_edges[r].tolist(),
             "category_edges": ds.graph.category_edges[r].tolist()}
            for r in ds.graph.relations
        ],
    })
    _dump(out / "splits.json", {
        "schema": SCHEMA,
        "max_len": ds.max_len,
        "examples": [[e.user, e.role, e.target_position] for e in ds.examples],
    })
    manifest = {"schema": SCHEMA, "summary": ds.summary()}
    manifest.update(manifest_extra or {})
    _dump(out / "manifest.json", manifest)
    return out


def load_dataset(data_dir: str | Path) -> Dataset:
    d = Path(data_dir)
    for name in ("catalog.json", "sequences.json", "relations.json", "splits.json"):
        if not (d / name).is_file():
            raise FileNotFoundError(d / name)
    cat_obj = _load(d / "catalog.json")
    items = cat_obj["items"]
    catalog = Catalog(
        item_ids=["<pad>"] + [it["id"] for it in items],
        category_names=["<pad>"] + list(cat_obj["categories"]),
        item_category=[0] + [it["category"] for it in items],
        brand=[None] + [it["brand"] for it in items],
        price=[None] + [it["price"] for it in items],
    )
    seq_obj = _load(d / "sequences.json")
    sequences, user_ids = [], []
    for u in seq_obj["users"]:
        sequences.append(InteractionSequence(u["index"], u["items"], u["categories"], u["timestamps"]))
        user_ids.append(u["id"])
    rel_obj = _load(d / "relations.json")
    graph = RelationGraph(
        n_items=catalog.n_items,
        n_categories=catalog.n_categories,
        item_edges={r["name"]: np.array(r["item_edges"], dtype=np.int64).reshape(-1, 2) for r in rel_obj["relations"]},
        category_edges={r["name"]: np.array(r["category_edges"], dtype=np.int64).reshape(-1, 2) for r in rel_obj["relations"]},
    )
    split_obj = _load(d / "splits.json")
    max_len = int(split_obj["max_len"])
    examples = [_window(sequences[u], pos, max_len, role) for u, role, pos in split_obj["examples"]]
    return Dataset(catalog, sequences, graph, user_ids, max_len, examples)
