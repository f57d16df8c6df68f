"""Synthetic interaction generator with a known hierarchical structure.

Each user walks a latent category Markov chain (stay with probability
``1 - p_switch``) and draws items inside the current category. Two kinds of
item structure are planted on top:

* complement pairs ``a -> comp(a)``: right after ``a`` the user often takes
  ``comp(a)`` within hours;
* substitute pairs ``b <-> sub(b)``: about ``substitute_lag_days`` after
  consuming ``b`` the user often replaces it with ``sub(b)``.

The generator also emits Amazon-like metadata so relation extraction runs
through the same code path as real data.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .ingest import Event, ItemMeta, build_sequences, five_core_filter
from .records import SECONDS_PER_DAY, Catalog, InteractionSequence
from .relations import RelationGraph, build_relation_graph


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_users: int = 500
    n_categories: int = 8
    items_per_category: int = 25
    min_length: int = 10
    max_length: int = 25
    p_switch: float = 0.1
    complement_rate: float = 0.35
    substitute_rate: float = 0.25
    substitute_lag_days: float = 30.0
    mean_gap_days: float = 3.0
    complement_gap_days: float = 0.3
    brand_size: int = 5
    price_tolerance: float = 0.10
    max_len: int = 20

    def validate(self) -> None:
        if self.items_per_category < 2:
            raise SynthConfigError("items_per_category must be at least 2")
        if self.n_categories < 1 or self.n_users < 1:
            raise SynthConfigError("need at least one user and one category")
        if not 0.0 <= self.p_switch <= 1.0:
            raise SynthConfigError("p_switch must be a probability")
        if self.p_switch > 0 and self.n_categories < 2:
            raise SynthConfigError("switching needs at least two categories")
        if not 1 <= self.min_length <= self.max_length:
            raise SynthConfigError("need 1 <= min_length <= max_length")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SynthConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthData:
    catalog: Catalog
    sequences: list[InteractionSequence]
    graph: RelationGraph
    trace: dict
    metadata: dict[str, ItemMeta]
    user_ids: list[str]


def _item_id(i: int) -> str:
    return f"I{i:05d}"


def synth_generate(config: SynthConfig, rng: np.random.Generator, apply_five_core: bool = True) -> SynthData:
    config.validate()
    C, K = config.n_categories, config.items_per_category
    # global item g in [0, C*K): category g // K
    items_of = [np.arange(c * K, (c + 1) * K) for c in range(C)]
    popularity = [1.0 + 0.5 * rng.random(K) for _ in range(C)]
    popularity = [p / p.sum() for p in popularity]

    comp = np.empty(C * K, dtype=np.int64)
    sub = np.empty(C * K, dtype=np.int64)
    for c in range(C):
        perm = rng.permutation(items_of[c])
        comp[perm] = np.roll(perm, -1)
        perm = rng.permutation(items_of[c])
        for a, b in zip(perm[0::2], perm[1::2]):
            sub[a], sub[b] = b, a
        if K % 2:
            sub[perm[-1]] = perm[0]

    base_time = 1_420_070_400  # 2015-01-01
    events: list[Event] = []
    trace_users = {}
    for u in range(config.n_users):
        uid = f"U{u:05d}"
        n = int(rng.integers(config.min_length, config.max_length + 1))
        t = base_time + rng.random() * 365 * SECONDS_PER_DAY
        c = int(rng.integers(C))
        cats, kinds = [], []
        hist: list[tuple[int, float]] = []
        for step in range(n):
            if step > 0 and rng.random() < config.p_switch:
                if C == 2:
                    c = 1 - c
                else:
                    c = int((c + rng.integers(1, C)) % C)
            kind = "uniform"
            prev = hist[-1][0] if hist else None
            r = rng.random()
            if prev is not None and prev // K == c and r < config.complement_rate:
                item = int(comp[prev])
                gap = rng.exponential(config.complement_gap_days)
                kind = "complement"
            else:
                gap = rng.exponential(config.mean_gap_days)
                due = [b for b, tb in hist
                       if b // K == c and abs((t + gap * SECONDS_PER_DAY - tb) / SECONDS_PER_DAY
                                              - config.substitute_lag_days) < 10.0]
                if due and rng.random() < config.substitute_rate:
                    item = int(sub[due[-1]])
                    kind = "substitute"
                else:
                    item = int(rng.choice(items_of[c], p=popularity[c]))
            t += gap * SECONDS_PER_DAY
            hist.append((item, t))
            cats.append(c)
            kinds.append(kind)
            events.append(Event(uid, _item_id(item), int(t)))
        trace_users[uid] = {"latent_categories": cats, "step_kinds": kinds}

    metadata = {}
    for g in range(C * K):
        c, k = divmod(g, K)
        metadata[_item_id(g)] = ItemMeta(
            category=f"cat{c:02d}",
            brand=f"brand{c:02d}_{k // config.brand_size:02d}",
            price=round(float(np.exp(rng.normal(3.0, 0.5))), 2),
            also_buy=[_item_id(int(comp[g]))],
            also_view=[_item_id(int(sub[g]))],
        )

    if apply_five_core:
        events = five_core_filter(events)
    catalog = Catalog.build([e.item for e in events], metadata)
    user_ids, sequences = build_sequences(events, catalog)
    graph = build_relation_graph(metadata, catalog, config.price_tolerance,
                                 sequences=sequences, window=config.max_len)
    trace = {
        "config": config.to_dict(),
        "users": {uid: trace_users[uid] for uid in user_ids},
    }
    return SynthData(catalog, sequences, graph, trace, metadata, user_ids)
