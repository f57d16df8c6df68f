"""Mini-batch training with validation-based early stopping."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .data.records import PAD
from .data.splits import ExampleBatch, sample_train_negatives
from .data.store import Dataset
from .evaluate import EvalSet, build_eval_set, evaluate_split
from .kge import EmbeddingTables
from .model import ModelConfig, as_leaves, init_params
from .numeric import Adam, ConfigError, backward
from .pipeline import batch_loss, build_target_inputs
from .rng import substream
from .serialization import load_arrays, save_arrays

log = logging.getLogger(__name__)

MODEL_SCHEMA = "hpm-model-v1"
SELECTION_METRIC = "HR@5"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    epochs: int = 200
    patience: int = 10
    batch_size: int = 64
    lr: float = 1e-6
    pretrain_lr: float = 1e-5
    pretrain_epochs: int = 100
    lam: float = 1.0
    d: int = 64
    heads: int = 4
    layers: int = 1
    dropout: float = 0.2
    max_len: int = 20
    seed: int = 0
    variant: str = "full"
    sigma_init: float = 7.0
    mu_init: float = 30.0
    log_initial_loss: bool = True

    def __post_init__(self):
        for name in ("epochs", "patience", "batch_size", "d", "heads", "layers", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.patience > self.epochs:
            raise ConfigError("patience cannot exceed epochs")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown train config keys: {sorted(bad)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, dataset: Dataset) -> ModelConfig:
        return ModelConfig(
            n_items=dataset.catalog.n_items,
            n_categories=dataset.catalog.n_categories,
            n_relations=len(dataset.graph.relations),
            d=self.d, heads=self.heads, layers=self.layers, dropout=self.dropout,
            max_len=dataset.max_len, variant=self.variant,
            sigma_init=self.sigma_init, mu_init=self.mu_init,
        )


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    model_config: ModelConfig
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_value: float = -1.0
    epochs_run: int = 0


def save_model(path: str | Path, params: dict[str, np.ndarray], cfg: ModelConfig, meta: dict | None = None) -> Path:
    m = {"model_config": cfg.to_dict()}
    m.update(meta or {})
    return save_arrays(path, MODEL_SCHEMA, params, m)


def load_model(path: str | Path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    arrays, meta = load_arrays(path, MODEL_SCHEMA)
    return arrays, ModelConfig.from_dict(meta["model_config"]), meta


def _loss_and_grads(params, batch, ti, cfg, families, lam, rng):
    P = as_leaves(params)
    loss, bd = batch_loss(P, batch, ti, cfg, families, lam, training=True, rng=rng)
    backward(loss)
    # parameters unused by the variant (e.g. the category stack) get no gradient
    grads = {k: t.grad for k, t in P.items() if t.grad is not None}
    grads["item_emb"][PAD] = 0.0
    grads["cat_emb"][PAD] = 0.0
    return loss, bd, grads


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, size):
        yield order[lo:lo + size]


def train(config: TrainConfig, dataset: Dataset, tables: EmbeddingTables | None = None,
          log_path: str | Path | None = None, val_set: EvalSet | None = None,
          validator: Callable[[dict], dict] | None = None) -> TrainResult:
    """Optimise the joint loss; keep the parameters with the best validation HR@5.

    Each epoch shuffles the training windows, pairs every positive with one
    uniformly sampled unseen item, and takes one Adam step per batch. The
    epoch log has one dict per epoch (epoch 0 = loss at initialisation when
    ``log_initial_loss``). ``validator`` replaces the validation-split
    evaluation (it receives the current parameters and returns metrics).
    """
    cfg = config.model_config(dataset)
    init_rng = substream(config.seed, "init")
    params = init_params(cfg, init_rng, tables.as_params() if tables is not None else None)
    families = dataset.graph.families
    train_ex = ExampleBatch.stack(dataset.split("train"))
    histories = dataset.user_histories()
    n_items = dataset.catalog.n_items
    if validator is None:
        if val_set is None:
            val_set = build_eval_set(dataset, "validation", config.seed)

        def validator(p):
            return evaluate_split(p, cfg, dataset, eval_set=val_set).metrics
    rng = substream(config.seed, "train")
    opt = Adam(lr=config.lr)
    result = TrainResult(params={k: v.copy() for k, v in params.items()}, model_config=cfg)
    log_fh = open(log_path, "w") if log_path else None

    def emit(entry: dict) -> None:
        result.log.append(entry)
        if log_fh:
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log_fh.flush()

    def epoch_pass(update: bool) -> dict:
        sums = {"rec": 0.0, "cl_item": 0.0, "cl_cate": 0.0, "cl": 0.0, "joint": 0.0}
        count = 0
        for idx in _batches(len(train_ex), config.batch_size, rng):
            b = train_ex.take(idx)
            neg = sample_train_negatives(rng, b.users, histories, n_items)
            ti = build_target_inputs(b, np.stack([b.target_items, neg], axis=1), dataset.catalog, dataset.graph)
            loss, bd, grads = _loss_and_grads(params, b, ti, cfg, families, config.lam, rng)
            if not np.isfinite(bd.joint):
                raise NonFiniteLossError(
                    f"non-finite loss {bd.to_dict()}",
                    {"users": b.users.tolist(), "items": b.items.tolist(), "negatives": neg.tolist(),
                     "targets": b.target_items.tolist()},
                )
            if update:
                opt.step(params, grads)
            for k in sums:
                sums[k] += getattr(bd, k) * len(idx)
            count += len(idx)
        out = {k: v / max(count, 1) for k, v in sums.items()}
        lam_eff = bd.lam
        out["lam"] = lam_eff
        out["lam_cl"] = lam_eff * out["cl"]
        return out

    try:
        if config.log_initial_loss:
            entry = {"epoch": 0, **epoch_pass(update=False)}
            entry["val"] = validator(params)
            emit(entry)
        since_best = 0
        for epoch in range(1, config.epochs + 1):
            entry = {"epoch": epoch, **epoch_pass(update=True)}
            metrics = validator(params)
            entry["val"] = metrics
            value = metrics[SELECTION_METRIC]
            improved = value > result.best_value
            if improved:
                result.best_value = value
                result.best_epoch = epoch
                result.params = {k: v.copy() for k, v in params.items()}
                since_best = 0
            else:
                since_best += 1
            entry["best"] = improved
            emit(entry)
            result.epochs_run = epoch
            log.info("epoch %d joint %.4f val %s %.4f", epoch, entry["joint"], SELECTION_METRIC, value)
            if since_best >= config.patience:
                break
    finally:
        if log_fh:
            log_fh.close()
    return result

