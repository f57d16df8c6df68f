"""Finite-difference check of the end-to-end joint-loss gradient."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data.records import PAD
from .data.splits import ExampleBatch, sample_train_negatives
from .data.store import Dataset
from .data.synth import SynthConfig, synth_generate
from .model import ModelConfig, as_leaves, init_params
from .numeric import backward, finite_difference, relative_error
from .pipeline import TargetInputs, batch_loss, build_target_inputs
from .rng import substream

TOLERANCE = 1e-4
STEP = 1e-4
GRAD_FLOOR = 1e-8
PAD_ROWS = {"item_emb": PAD, "cat_emb": PAD}


@dataclass
class GroupResult:
    name: str
    shape: tuple
    checked: int
    max_rel_err: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "shape": list(self.shape), "checked": self.checked,
                "max_rel_err": self.max_rel_err, "passed": self.passed}


@dataclass
class GradcheckReport:
    seed: int
    variant: str
    tolerance: float
    loss: float
    groups: list[GroupResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "variant": self.variant, "tolerance": self.tolerance, "loss": self.loss,
                "passed": self.passed, "seconds": round(self.seconds, 3),
                "groups": [g.to_dict() for g in self.groups]}


@dataclass
class MicroProblem:
    dataset: Dataset
    batch: ExampleBatch
    targets: TargetInputs
    cfg: ModelConfig
    params: dict[str, np.ndarray]


def micro_problem(seed: int = 0, n_examples: int = 4, d: int = 8, max_len: int = 6, heads: int = 2,
                  variant: str = "full", dropout: float = 0.2) -> MicroProblem:
    """A tiny synthetic dataset and one batch of training windows.

    The batch mixes full windows with left-padded ones so both code paths
    contribute to the gradient.
    """
    sc = SynthConfig(n_users=24, n_categories=3, items_per_category=6, min_length=6, max_length=10,
                     max_len=max_len, brand_size=3)
    sd = synth_generate(sc, substream(seed, "gradcheck-data"), apply_five_core=False)
    ds = Dataset(sd.catalog, sd.sequences, sd.graph, sd.user_ids, max_len=max_len)
    train = ds.split("train")
    full = [e for e in train if len(e.history_items) == max_len and e.history_items[0] != PAD]
    padded = [e for e in train if e.history_items[0] == PAD and np.count_nonzero(e.history_items) >= 2]
    rng = substream(seed, "gradcheck-pick")
    half = n_examples // 2
    picks = [full[i] for i in rng.choice(len(full), size=n_examples - half, replace=False)]
    picks += [padded[i] for i in rng.choice(len(padded), size=half, replace=False)]
    batch = ExampleBatch.stack(picks)
    neg = sample_train_negatives(rng, batch.users, ds.user_histories(), ds.catalog.n_items)
    ti = build_target_inputs(batch, np.stack([batch.target_items, neg], axis=1), ds.catalog, ds.graph)
    cfg = ModelConfig(n_items=ds.catalog.n_items, n_categories=ds.catalog.n_categories,
                      n_relations=len(ds.graph.relations), d=d, heads=heads, layers=1, dropout=dropout,
                      max_len=max_len, variant=variant)
    params = init_params(cfg, substream(seed, "gradcheck-init"))
    # move kernel widths off their defaults so the check is not at a special point
    for k in params:
        if k.startswith("kernel."):
            params[k] = params[k] * (1.0 + 0.1 * rng.standard_normal(params[k].shape))
        elif k.endswith(("ln_g", "ln_b", "b1", "b2")):
            params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    return MicroProblem(ds, batch, ti, cfg, params)


def gradcheck(seed: int = 0, variant: str = "full", tolerance: float = TOLERANCE, h: float = STEP,
              lam: float = 1.0, **problem_kw) -> GradcheckReport:
    """Compare analytic and central-difference gradients for every parameter tensor.

    Dropout masks are reproduced exactly by reseeding before every loss
    evaluation. Padding rows of the item and category tables are skipped.
    """
    t0 = time.perf_counter()
    mp = micro_problem(seed, variant=variant, **problem_kw)
    families = mp.dataset.graph.families
    params = mp.params

    def loss_value(requires_grad: bool):
        P = as_leaves(params, requires_grad=requires_grad)
        loss, _ = batch_loss(P, mp.batch, mp.targets, mp.cfg, families, lam, training=True,
                             rng=substream(seed, "gradcheck-dropout"))
        return P, loss

    P, loss = loss_value(True)
    backward(loss)
    report = GradcheckReport(seed, variant, tolerance, float(loss.data))

    def f() -> float:
        return float(loss_value(False)[1].data)

    for name in sorted(params):
        g = P[name].grad
        if g is None:
            g = np.zeros_like(params[name])
        entries = list(np.ndindex(*params[name].shape))
        if name in PAD_ROWS:
            entries = [ix for ix in entries if ix[0] != PAD_ROWS[name]]
        num = finite_difference(f, params[name], h, entries)
        mask = np.zeros(g.shape, dtype=bool)
        for ix in entries:
            mask[ix] = True
        a, n = np.where(mask, g, 0.0), np.where(mask, num, 0.0)
        err = relative_error(a, n, GRAD_FLOOR)
        checked = int((np.abs(a) > GRAD_FLOOR).sum())
        report.groups.append(GroupResult(name, params[name].shape, checked, err, err < tolerance))
    report.seconds = time.perf_counter() - t0
    return report
