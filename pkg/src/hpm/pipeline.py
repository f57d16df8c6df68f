"""Forward pass from a batch of windows to scores and the joint loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.records import Catalog
from .data.relations import RelationGraph
from .data.splits import ExampleBatch
from .kernels import relation_indicators
from .model import ModelConfig, forward_dual
from .numeric import Tensor, gather_rows
from .objective import LossBreakdown, ablation_mask, bpr_loss, dcl_loss, joint_loss, score
from .scel import EnhancedTarget, delta_days, enhance_target, intensities, kernel_matrix, kernel_tensors


@dataclass
class TargetInputs:
    """Candidate targets for each window plus their static relation indicators."""

    items: np.ndarray        # (B, M)
    categories: np.ndarray   # (B, M)
    ind_item: np.ndarray     # (B, M, L, R) uint8
    ind_cat: np.ndarray      # (B, M, L, R) uint8
    dt_days: np.ndarray      # (B, L)

    def take(self, idx) -> "TargetInputs":
        return TargetInputs(self.items[idx], self.categories[idx], self.ind_item[idx], self.ind_cat[idx], self.dt_days[idx])


def build_target_inputs(batch: ExampleBatch, targets: np.ndarray, catalog: Catalog,
                        graph: RelationGraph) -> TargetInputs:
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    tcats = np.ascontiguousarray(catalog.item_category[targets])
    return TargetInputs(
        items=targets,
        categories=tcats,
        ind_item=relation_indicators(np.ascontiguousarray(batch.items), targets, graph.csr("item")),
        ind_cat=relation_indicators(np.ascontiguousarray(batch.categories), tcats, graph.csr("category")),
        dt_days=delta_days(batch.target_times, batch.times, batch.mask),
    )


def enhanced_targets(P: dict[str, Tensor], ti: TargetInputs, families: tuple[str, ...],
                     use_scel: bool = True) -> EnhancedTarget:
    base_v = gather_rows(P["item_emb"], ti.items)
    base_c = gather_rows(P["cat_emb"], ti.categories)
    if not use_scel:
        return EnhancedTarget(base_v, base_c)
    sv, mv = kernel_tensors(P, "item")
    sc, mc = kernel_tensors(P, "category")
    f_item = intensities(ti.ind_item, kernel_matrix(ti.dt_days, sv, mv, families))
    f_cat = intensities(ti.ind_cat, kernel_matrix(ti.dt_days, sc, mc, families))
    return enhance_target(base_v, base_c, f_item, f_cat, P["rel_emb"])


def batch_loss(P: dict[str, Tensor], batch: ExampleBatch, ti: TargetInputs, cfg: ModelConfig,
               families: tuple[str, ...], lam: float = 1.0, training: bool = True,
               rng: np.random.Generator | None = None) -> tuple[Tensor, LossBreakdown]:
    """Joint loss for windows whose ``ti`` targets are ``[positive, negative]``."""
    ab = ablation_mask(cfg.variant)
    v_f, c_f = forward_dual(batch.items, batch.categories, P, cfg, training, rng)
    enh = enhanced_targets(P, ti, families, ab.use_scel)
    s = score(v_f, c_f, enh.item, enh.category)
    rec = bpr_loss(s[:, 0], s[:, 1])
    cl_item = dcl_loss(v_f, enh.item[:, 0])
    cl_cate = dcl_loss(c_f, enh.category[:, 0])
    return joint_loss(rec, cl_item, cl_cate, lam if ab.use_dcl else 0.0)


def candidate_scores(P: dict[str, Tensor], batch: ExampleBatch, ti: TargetInputs, cfg: ModelConfig,
                     families: tuple[str, ...]) -> np.ndarray:
    """(B, M) scores in evaluation mode."""
    ab = ablation_mask(cfg.variant)
    v_f, c_f = forward_dual(batch.items, batch.categories, P, cfg, training=False)
    enh = enhanced_targets(P, ti, families, ab.use_scel)
    return score(v_f, c_f, enh.item, enh.category).data
