"""Leave-one-out ranking evaluation against 99 sampled negatives."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data.splits import N_EVAL_NEGATIVES, EvaluationError, ExampleBatch, role_code, sample_eval_negatives
from .data.store import Dataset
from .model import ModelConfig, as_leaves
from .numeric import no_grad
from .pipeline import TargetInputs, build_target_inputs, candidate_scores
from .rng import substream

log = logging.getLogger(__name__)

KS = (5, 10, 20, 50)


def hr_at_k(rank: int, k: int) -> int:
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def rank_of_positive(scores: np.ndarray, pos_index: np.ndarray) -> np.ndarray:
    """1-based rank of ``scores[i, pos_index[i]]``; ties go to the earlier column."""
    scores = np.atleast_2d(scores)
    pos_index = np.asarray(pos_index)
    rows = np.arange(len(scores))
    s_pos = scores[rows, pos_index][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    ahead = (scores > s_pos) | ((scores == s_pos) & (cols < pos_index[:, None]))
    return 1 + ahead.sum(axis=1)


def aggregate(ranks: np.ndarray, ks=KS) -> dict[str, float]:
    ranks = np.asarray(ranks)
    out = {}
    if len(ranks) == 0:
        return {f"{m}@{k}": 0.0 for k in ks for m in ("HR", "NDCG")}
    for k in ks:
        hit = ranks <= k
        out[f"HR@{k}"] = float(hit.mean())
        out[f"NDCG@{k}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1), 0.0).mean())
    return out


@dataclass
class EvalSet:
    """Fixed candidate lists for one split: column ``pos_index[i]`` is the positive."""

    role: str
    batch: ExampleBatch
    candidates: np.ndarray
    pos_index: np.ndarray
    targets: TargetInputs
    skipped: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.batch)


def build_eval_set(dataset: Dataset, role: str, seed: int, n_negatives: int = N_EVAL_NEGATIVES) -> EvalSet:
    """Sample negatives and a tie-breaking shuffle per (user, role) from ``seed``."""
    examples = dataset.split(role)
    histories = dataset.user_histories()
    keep, cands, pos_idx, skipped = [], [], [], []
    for ex in examples:
        rng = substream(seed, "eval", ex.user, role_code(role))
        try:
            neg = sample_eval_negatives(rng, histories[ex.user], dataset.catalog.n_items, n_negatives)
        except EvaluationError as err:
            log.warning("user %d skipped in %s: %s", ex.user, role, err)
            skipped.append(ex.user)
            continue
        c = np.concatenate([[ex.target_item], neg])
        perm = rng.permutation(len(c))
        c = c[perm]
        keep.append(ex)
        cands.append(c)
        pos_idx.append(int(np.flatnonzero(perm == 0)[0]))
    if not keep:
        raise EvaluationError(f"no evaluable users in split {role!r}")
    batch = ExampleBatch.stack(keep)
    candidates = np.array(cands, dtype=np.int64)
    ti = build_target_inputs(batch, candidates, dataset.catalog, dataset.graph)
    return EvalSet(role, batch, candidates, np.array(pos_idx, dtype=np.int64), ti, skipped)


@dataclass
class RankedEvaluation:
    role: str
    users: np.ndarray
    candidates: np.ndarray
    scores: np.ndarray
    ranks: np.ndarray
    metrics: dict[str, float]
    skipped: list[int]

    def report(self) -> dict:
        return {
            "role": self.role,
            "metrics": self.metrics,
            "n_users": int(len(self.users)),
            "skipped_users": list(self.skipped),
            "ranks": {str(int(u)): int(r) for u, r in zip(self.users, self.ranks)},
        }


def score_eval_set(params: dict[str, np.ndarray], cfg: ModelConfig, families, es: EvalSet,
                   chunk: int = 256) -> np.ndarray:
    P = as_leaves(params, requires_grad=False)
    out = np.empty(es.candidates.shape)
    with no_grad():
        for lo in range(0, len(es), chunk):
            sl = slice(lo, lo + chunk)
            out[sl] = candidate_scores(P, es.batch.take(sl), es.targets.take(sl), cfg, families)
    return out


def evaluate_split(params: dict[str, np.ndarray], cfg: ModelConfig, dataset: Dataset, role: str = "test",
                   seed: int = 0, eval_set: EvalSet | None = None) -> RankedEvaluation:
    es = eval_set if eval_set is not None else build_eval_set(dataset, role, seed)
    scores = score_eval_set(params, cfg, dataset.graph.families, es)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite candidate scores")
    ranks = rank_of_positive(scores, es.pos_index)
    return RankedEvaluation(es.role, es.batch.users, es.candidates, scores, ranks, aggregate(ranks), es.skipped)
