"""Ranking, contrastive and joint losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import VARIANTS
from .numeric import ConfigError, Tensor, as_tensor, logsumexp_rows, matmul

COSINE_EPS = 1e-12


def cosine_sim(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + COSINE_EPS))


def cosine_matrix(users: Tensor, targets: Tensor) -> Tensor:
    """(B, B) cosine similarity of every user vector with every target."""
    users, targets = as_tensor(users), as_tensor(targets)
    nu = (users * users).sum(axis=-1, keepdims=True).sqrt()
    nt = (targets * targets).sum(axis=-1, keepdims=True).sqrt()
    return matmul(users, targets.T) / (matmul(nu, nt.T) + COSINE_EPS)


def dcl_loss(users, targets, temperature: float = 1.0) -> Tensor:
    """In-batch InfoNCE: user i's positive is target i, the other targets are negatives.

    Returns the batch mean of ``-log softmax(sim_i / tau)[i]``.
    """
    sim = cosine_matrix(users, targets) * (1.0 / temperature)
    B = sim.shape[0]
    diag = sim[np.arange(B), np.arange(B)]
    return (logsumexp_rows(sim) - diag).mean()


def score(v_f, c_f, item_target, cat_target) -> Tensor:
    """item_target . v_f + cat_target . c_f, broadcasting user vectors over candidates.

    ``v_f``/``c_f`` are (B, d); targets (B, d) or (B, M, d).
    """
    v_f, c_f = as_tensor(v_f), as_tensor(c_f)
    item_target, cat_target = as_tensor(item_target), as_tensor(cat_target)
    if item_target.ndim == 3:
        B, d = v_f.shape
        v_f, c_f = v_f.reshape(B, 1, d), c_f.reshape(B, 1, d)
    return (item_target * v_f).sum(axis=-1) + (cat_target * c_f).sum(axis=-1)


def bpr_loss(pos, neg) -> Tensor:
    """Mean of -log sigmoid(pos - neg)."""
    return -((as_tensor(pos) - as_tensor(neg)).log_sigmoid().mean())


@dataclass
class LossBreakdown:
    rec: float
    cl_item: float
    cl_cate: float
    cl: float
    joint: float
    lam: float

    def to_dict(self) -> dict:
        return asdict(self)


def joint_loss(rec, cl_item, cl_cate, lam: float = 1.0) -> tuple[Tensor, LossBreakdown]:
    if lam < 0:
        raise ConfigError("contrastive coefficient must be non-negative")
    rec, cl_item, cl_cate = as_tensor(rec), as_tensor(cl_item), as_tensor(cl_cate)
    cl = cl_item + cl_cate
    total = rec + cl * lam if lam != 0 else rec
    bd = LossBreakdown(rec.item(), cl_item.item(), cl_cate.item(), cl.item(), total.item(), lam)
    return total, bd


@dataclass(frozen=True)
class Ablation:
    variant: str
    use_scel: bool
    use_dcl: bool
    dual_stream: bool


def ablation_mask(variant: str) -> Ablation:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return Ablation(
        variant=variant,
        use_scel=variant != "no-scel",
        use_dcl=variant != "no-dcl",
        dual_stream=variant != "single-stream",
    )
