"""Seeded comparison of the model variants on planted synthetic data."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data.store import Dataset
from .data.synth import SynthConfig, synth_generate
from .evaluate import evaluate_split
from .kge import EmbeddingTables, PretrainConfig, graph_triples, pretrain
from .model import VARIANTS
from .rng import substream
from .train import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class AblationRun:
    variant: str
    seed: int
    test: dict[str, float]
    best_epoch: int
    epochs_run: int
    seconds: float
    log: list[dict] = field(default_factory=list)


@dataclass
class AblationResult:
    runs: list[AblationRun] = field(default_factory=list)

    def mean(self, variant: str, metric: str = "HR@5") -> float:
        vals = [r.test[metric] for r in self.runs if r.variant == variant]
        return float(np.mean(vals)) if vals else float("nan")

    def table(self, metric: str = "HR@5") -> dict[str, float]:
        return {v: self.mean(v, metric) for v in VARIANTS if any(r.variant == v for r in self.runs)}

    def to_dict(self) -> dict:
        return {
            "runs": [vars(r) for r in self.runs],
            "mean": {m: self.table(m) for m in ("HR@5", "HR@10", "NDCG@5", "NDCG@10")},
        }


def synthetic_dataset(config: SynthConfig, seed: int) -> Dataset:
    sd = synth_generate(config, substream(seed, "synth"))
    return Dataset(sd.catalog, sd.sequences, sd.graph, sd.user_ids, max_len=config.max_len)


def pretrained_tables(dataset: Dataset, config: TrainConfig) -> EmbeddingTables:
    cat = dataset.catalog
    tables = EmbeddingTables.random(cat.n_items, cat.n_categories, len(dataset.graph.relations), config.d,
                                    dataset.max_len, substream(config.seed, "kge-init"))
    pc = PretrainConfig(epochs=config.pretrain_epochs, lr=config.pretrain_lr)
    return pretrain(graph_triples(dataset.graph), tables, pc, substream(config.seed, "kge")).tables


def run_ablation(base: TrainConfig, seeds=(0, 1, 2), variants=VARIANTS, synth: SynthConfig | None = None,
                 use_pretrain: bool = True) -> AblationResult:
    """Train every variant on the same data and initial tables for each seed.

    The seed drives data generation, pretraining, initialisation, batching
    and evaluation negatives; within one seed only the variant differs.
    """
    synth = synth or SynthConfig()
    result = AblationResult()
    for seed in seeds:
        ds = synthetic_dataset(synth, seed)
        cfg_seed = replace(base, seed=seed)
        tables = pretrained_tables(ds, cfg_seed) if use_pretrain else None
        for variant in variants:
            t0 = time.process_time()
            tr = train(replace(cfg_seed, variant=variant), ds, tables=tables)
            test = evaluate_split(tr.params, tr.model_config, ds, "test", seed=seed).metrics
            run = AblationRun(variant, seed, test, tr.best_epoch, tr.epochs_run, time.process_time() - t0,
                              tr.log)
            log.info("seed %d %s: test HR@5 %.4f (best epoch %d)", seed, variant, test["HR@5"], tr.best_epoch)
            result.runs.append(run)
    return result
