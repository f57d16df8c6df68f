"""TransE pretraining of item, category and relation embeddings.

Item triples and category triples are trained in one run; the two levels
have separate entity tables but share the relation table.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data.records import PAD
from .data.relations import RelationGraph
from .numeric import Adam, DimensionError
from .serialization import load_arrays, save_arrays

log = logging.getLogger(__name__)

SCHEMA = "hpm-emb-v1"
LEVELS = ("item", "category")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int
    level: str = "item"


def transe_score(head, rel, tail) -> float:
    """||head + rel - tail||^2; lower means more plausible."""
    head, rel, tail = (np.asarray(x, dtype=float) for x in (head, rel, tail))
    if not head.shape == rel.shape == tail.shape:
        raise DimensionError(f"transe_score shapes {head.shape}, {rel.shape}, {tail.shape}")
    diff = head + rel - tail
    return float(diff @ diff)


@dataclass
class EmbeddingTables:
    item: np.ndarray
    category: np.ndarray
    relation: np.ndarray
    position: np.ndarray

    @property
    def d(self) -> int:
        return self.item.shape[1]

    @classmethod
    def random(cls, n_items: int, n_categories: int, n_relations: int, d: int, max_len: int,
               rng: np.random.Generator) -> "EmbeddingTables":
        b = 1.0 / math.sqrt(d)
        t = cls(
            item=rng.uniform(-b, b, (n_items + 1, d)),
            category=rng.uniform(-b, b, (n_categories + 1, d)),
            relation=rng.uniform(-b, b, (n_relations, d)),
            position=rng.uniform(-b, b, (max_len, d)),
        )
        t.item[PAD] = 0.0
        t.category[PAD] = 0.0
        return t

    def entity(self, level: str) -> np.ndarray:
        return self.item if level == "item" else self.category

    def copy(self) -> "EmbeddingTables":
        return EmbeddingTables(self.item.copy(), self.category.copy(), self.relation.copy(), self.position.copy())

    def as_params(self) -> dict[str, np.ndarray]:
        return {"item_emb": self.item, "cat_emb": self.category, "rel_emb": self.relation, "pos_emb": self.position}

    def save(self, path: str | Path, meta: dict | None = None) -> Path:
        m = {"d": self.d, "n_items": self.item.shape[0] - 1, "n_categories": self.category.shape[0] - 1,
             "n_relations": self.relation.shape[0], "max_len": self.position.shape[0]}
        m.update(meta or {})
        return save_arrays(path, SCHEMA, {"item": self.item, "category": self.category,
                                          "relation": self.relation, "position": self.position}, m)

    @classmethod
    def load(cls, path: str | Path) -> tuple["EmbeddingTables", dict]:
        arrays, meta = load_arrays(path, SCHEMA)
        return cls(arrays["item"], arrays["category"], arrays["relation"], arrays["position"]), meta


def graph_triples(graph: RelationGraph) -> list[Triple]:
    out = []
    for level in LEVELS:
        for r, name in enumerate(graph.relations):
            for h, t in graph.edges(level)[name].tolist():
                out.append(Triple(h, r, t, level))
    return out


def corrupt_triple(rng: np.random.Generator, triple: Triple, vocab_size: int,
                   known: set | None = None, max_tries: int = 20) -> Triple:
    """Replace head or tail (probability 1/2 each) by a different entity in ``1..vocab_size``.

    Draws that hit a known positive are retried; after ``max_tries`` the last
    draw is returned.
    """
    if vocab_size < 2:
        raise ValueError("corruption needs at least two entities")
    replace_head = rng.random() < 0.5
    orig = triple.head if replace_head else triple.tail
    cand = triple
    for _ in range(max_tries):
        e = int(rng.integers(1, vocab_size))
        if e >= orig:
            e += 1
        cand = triple._replace(head=e) if replace_head else triple._replace(tail=e)
        if known is None or (cand.head, cand.relation, cand.tail, cand.level) not in known:
            break
    return cand


@dataclass
class PretrainConfig:
    epochs: int = 100
    lr: float = 1e-5
    batch_size: int = 128
    margin: float = 1.0
    eval_sample: int = 512


@dataclass
class PretrainResult:
    tables: EmbeddingTables
    epoch_loss: list[float] = field(default_factory=list)
    fixed_sample_loss: list[float] = field(default_factory=list)


def _renorm(table: np.ndarray) -> None:
    # Adam momentum moves rows outside the batch too, so project every row
    norms = np.linalg.norm(table, axis=1)
    big = norms > 1.0
    if big.any():
        table[big] /= norms[big, None]


def _scores(tables: EmbeddingTables, h, r, t, lv) -> tuple[np.ndarray, np.ndarray]:
    """Per-triple ||h + r - t||^2 and the residual, for mixed-level arrays."""
    E_h = np.where(lv[:, None], tables.category[np.where(lv, h, 0)], tables.item[np.where(lv, 0, h)])
    E_t = np.where(lv[:, None], tables.category[np.where(lv, t, 0)], tables.item[np.where(lv, 0, t)])
    diff = E_h + tables.relation[r] - E_t
    return (diff * diff).sum(axis=1), diff


def _margin_loss(tables, pos, neg, margin) -> float:
    fp, _ = _scores(tables, *pos)
    fn, _ = _scores(tables, *neg)
    return float(np.maximum(0.0, margin + fp - fn).mean())


def _arrays(triples: list[Triple]):
    h = np.array([t.head for t in triples], dtype=np.int64)
    r = np.array([t.relation for t in triples], dtype=np.int64)
    t_ = np.array([t.tail for t in triples], dtype=np.int64)
    lv = np.array([t.level == "category" for t in triples], dtype=bool)
    return h, r, t_, lv


def corrupt_batch(rng, triples: list[Triple], vocab: dict[str, int], known: set) -> list[Triple]:
    return [corrupt_triple(rng, t, vocab[t.level], known) for t in triples]


def pretrain(triples: list[Triple], tables: EmbeddingTables, config: PretrainConfig,
             rng: np.random.Generator) -> PretrainResult:
    """Margin-ranking TransE with Adam and entity-norm projection after each step.

    Padding rows (index 0) are never touched. ``fixed_sample_loss`` tracks
    the loss on one fixed set of (positive, corrupted) pairs after each epoch.
    """
    tables = tables.copy()
    result = PretrainResult(tables)
    if config.epochs == 0 or not triples:
        return result
    vocab = {"item": tables.item.shape[0] - 1, "category": tables.category.shape[0] - 1}
    levels = {t.level for t in triples}
    for lvl in levels:
        if vocab[lvl] < 2:
            raise ValueError(f"{lvl} vocabulary too small for corruption")
    known = set(triples)
    sample_idx = rng.choice(len(triples), size=min(config.eval_sample, len(triples)), replace=False)
    sample = [triples[i] for i in sorted(sample_idx)]
    fixed_pos = _arrays(sample)
    fixed_neg = _arrays(corrupt_batch(rng, sample, vocab, known))

    params = {"item": tables.item, "category": tables.category, "relation": tables.relation}
    opt = Adam(lr=config.lr)
    n = len(triples)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = [triples[i] for i in order[start:start + config.batch_size]]
            pos = _arrays(batch)
            neg = _arrays(corrupt_batch(rng, batch, vocab, known))
            fp, dp = _scores(tables, *pos)
            fn, dn = _scores(tables, *neg)
            active = (config.margin + fp - fn) > 0
            losses.append(float(np.maximum(0.0, config.margin + fp - fn).mean()))
            w = active[:, None] * (2.0 / len(batch))
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for (h, r, t, lv), diff, sign in ((pos, dp, 1.0), (neg, dn, -1.0)):
                g = sign * w * diff
                np.add.at(grads["relation"], r, g)
                for level, sel in (("item", ~lv), ("category", lv)):
                    if sel.any():
                        np.add.at(grads[level], h[sel], g[sel])
                        np.add.at(grads[level], t[sel], -g[sel])
            grads["item"][PAD] = 0.0
            grads["category"][PAD] = 0.0
            opt.step(params, grads)
            _renorm(tables.item)
            _renorm(tables.category)
        result.epoch_loss.append(float(np.mean(losses)))
        result.fixed_sample_loss.append(_margin_loss(tables, fixed_pos, fixed_neg, config.margin))
    log.info("pretrain: %d epochs, final loss %.4f", config.epochs, result.epoch_loss[-1])
    return result
