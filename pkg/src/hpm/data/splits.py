"""Leave-one-out splits, batch stacking and negative sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import PAD, ROLES, InteractionSequence, SplitExample

MAX_LEN = 20
N_EVAL_NEGATIVES = 99


class EvaluationError(RuntimeError):
    pass


def _window(seq: InteractionSequence, end: int, max_len: int, role: str) -> SplitExample:
    start = max(0, end - max_len)
    n = end - start
    pad = max_len - n
    hi = np.zeros(max_len, dtype=np.int64)
    hc = np.zeros(max_len, dtype=np.int64)
    ht = np.zeros(max_len, dtype=np.int64)
    hi[pad:] = seq.items[start:end]
    hc[pad:] = seq.categories[start:end]
    ht[pad:] = seq.timestamps[start:end]
    return SplitExample(
        user=seq.user,
        history_items=hi,
        history_categories=hc,
        history_times=ht,
        target_item=int(seq.items[end]),
        target_category=int(seq.categories[end]),
        target_time=int(seq.timestamps[end]),
        role=role,
        target_position=end,
    )


def build_splits(sequences: list[InteractionSequence], max_len: int = MAX_LEN) -> list[SplitExample]:
    """Per user: test = last item, validation = second last, train = every
    earlier position with at least one context step."""
    out = []
    for seq in sequences:
        n = len(seq)
        if n < 3:
            continue
        for end in range(1, n - 2):
            out.append(_window(seq, end, max_len, "train"))
        out.append(_window(seq, n - 2, max_len, "validation"))
        out.append(_window(seq, n - 1, max_len, "test"))
    return out


@dataclass
class ExampleBatch:
    """Column-stacked split examples; row ``i`` is one window."""

    users: np.ndarray
    items: np.ndarray
    categories: np.ndarray
    times: np.ndarray
    target_items: np.ndarray
    target_categories: np.ndarray
    target_times: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    @property
    def mask(self) -> np.ndarray:
        return self.items != PAD

    @classmethod
    def stack(cls, examples: list[SplitExample]) -> "ExampleBatch":
        return cls(
            users=np.array([e.user for e in examples], dtype=np.int64),
            items=np.stack([e.history_items for e in examples]),
            categories=np.stack([e.history_categories for e in examples]),
            times=np.stack([e.history_times for e in examples]),
            target_items=np.array([e.target_item for e in examples], dtype=np.int64),
            target_categories=np.array([e.target_category for e in examples], dtype=np.int64),
            target_times=np.array([e.target_time for e in examples], dtype=np.int64),
        )

    def take(self, idx) -> "ExampleBatch":
        return ExampleBatch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def sample_train_negative(rng: np.random.Generator, history: set[int], n_items: int) -> int:
    """Uniform draw over items ``1..n_items`` the user never interacted with."""
    if n_items - len(history) < 1:
        raise EvaluationError("no item outside the user's history")
    while True:
        j = int(rng.integers(1, n_items + 1))
        if j not in history:
            return j


def sample_train_negatives(rng: np.random.Generator, users: np.ndarray,
                           histories: list[set[int]], n_items: int) -> np.ndarray:
    return np.array([sample_train_negative(rng, histories[u], n_items) for u in users], dtype=np.int64)


def sample_eval_negatives(rng: np.random.Generator, history: set[int], n_items: int,
                          n: int = N_EVAL_NEGATIVES) -> np.ndarray:
    """``n`` distinct items outside ``history``; raises if fewer exist."""
    pool = np.setdiff1d(np.arange(1, n_items + 1, dtype=np.int64),
                        np.fromiter(history, dtype=np.int64, count=len(history)))
    if len(pool) < n:
        raise EvaluationError(f"only {len(pool)} negatives available, need {n}")
    return rng.choice(pool, size=n, replace=False)


def role_code(role: str) -> int:
    return ROLES.index(role)
