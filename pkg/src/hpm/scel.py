"""Relation-aware target enhancement driven by temporal kernels.

Complement relations decay with a zero-mean Gaussian density of the elapsed
time; substitute relations use the difference of a Gaussian at a lag ``mu``
and one at zero; the result is negative right after a purchase and positive about
``mu`` days later. Time is measured in days.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data.records import PAD, SECONDS_PER_DAY
from .data.relations import COMPLEMENT, FAMILY, RelationGraph
from .numeric import SQRT_2PI, Tensor, as_tensor

DEFAULT_SIGMA_DAYS = 7.0
DEFAULT_MU_DAYS = 30.0

KERNEL_KEYS = ("sigma_item", "sigma_category", "mu_item", "mu_category")


def gaussian_density(x, mean, sigma):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * ((x - mean) / sigma) ** 2) / (sigma * SQRT_2PI)


def kernel_complement(dt, sigma):
    """N(dt | 0, sigma)."""
    return gaussian_density(dt, 0.0, sigma)


def kernel_substitute(dt, sigma, mu):
    """-N(dt | 0, sigma) + N(dt | mu, sigma)."""
    return gaussian_density(dt, mu, sigma) - gaussian_density(dt, 0.0, sigma)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    return float(y + math.log(-math.expm1(-y)))


@dataclass
class KernelParams:
    """Positive kernel widths/lags stored as unconstrained raw values."""

    sigma_item: float
    sigma_category: float
    mu_item: float
    mu_category: float

    @classmethod
    def from_raw(cls, params: dict) -> "KernelParams":
        return cls(*(float(softplus(params[f"kernel.{k}"]).reshape(-1)[0]) for k in KERNEL_KEYS))

    def raw(self) -> dict[str, np.ndarray]:
        return {f"kernel.{k}": np.array([inverse_softplus(getattr(self, k))]) for k in KERNEL_KEYS}

    def for_level(self, level: str) -> tuple[float, float]:
        return (self.sigma_item, self.mu_item) if level == "item" else (self.sigma_category, self.mu_category)


def relation_intensity(history_entities, history_times, target: int, t: int, relation: str,
                       graph: RelationGraph, kernels: KernelParams, level: str) -> float:
    """Sum of the relation's kernel over history entries related to ``target``.

    Reference implementation for a single target; timestamps in seconds.
    """
    sigma, mu = kernels.for_level(level)
    total = 0.0
    for ent, tt in zip(np.asarray(history_entities).tolist(), np.asarray(history_times).tolist()):
        if ent == PAD or not graph.has_edge(level, relation, ent, target):
            continue
        dt = (t - tt) / SECONDS_PER_DAY
        if FAMILY[relation] == COMPLEMENT:
            total += float(kernel_complement(dt, sigma))
        else:
            total += float(kernel_substitute(dt, sigma, mu))
    return total


def delta_days(target_times: np.ndarray, history_times: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """(B, L) elapsed days from each history step to its target; 0 at padding."""
    dt = (np.asarray(target_times)[:, None] - history_times) / SECONDS_PER_DAY
    return np.where(mask, dt, 0.0)


def _density_t(x: np.ndarray, mean, sigma: Tensor) -> Tensor:
    z = (as_tensor(x) - mean) / sigma
    return (z * z * -0.5).exp() / (sigma * SQRT_2PI)


def kernel_matrix(dt_days: np.ndarray, sigma: Tensor, mu: Tensor, families: tuple[str, ...]) -> Tensor:
    """(B, L, R) kernel value of each history step under each relation's family."""
    comp = _density_t(dt_days, 0.0, sigma)
    subst = _density_t(dt_days, mu, sigma) - comp
    parts = np.array([f == COMPLEMENT for f in families], dtype=float)
    base_c = comp.reshape(*dt_days.shape, 1)
    base_s = subst.reshape(*dt_days.shape, 1)
    return base_c * parts + base_s * (1.0 - parts)


def intensities(indicators: np.ndarray, phi: Tensor) -> Tensor:
    """(B, M, R): sum over history of indicator(b, m, l, r) * phi(b, l, r)."""
    B, L, R = phi.shape
    return (phi.reshape(B, 1, L, R) * indicators.astype(float)).sum(axis=2)


def intensities_np(indicators: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.einsum("bmlr,blr->bmr", indicators, phi, optimize=True)


def kernel_tensors(params: dict[str, Tensor], level: str) -> tuple[Tensor, Tensor]:
    suffix = "item" if level == "item" else "category"
    return params[f"kernel.sigma_{suffix}"].softplus(), params[f"kernel.mu_{suffix}"].softplus()


@dataclass
class EnhancedTarget:
    item: Tensor
    category: Tensor
    item_intensity: Tensor | None = None
    category_intensity: Tensor | None = None


def enhance_target(item_base, category_base, item_intensity, category_intensity, rel_emb) -> EnhancedTarget:
    """Add the intensity-weighted relation embeddings to both base embeddings.

    Intensities have shape (..., R) and ``rel_emb`` (R, d). ``None``
    intensities leave that level unchanged.
    """
    item_base, category_base = as_tensor(item_base), as_tensor(category_base)
    rel_emb = as_tensor(rel_emb)
    item = item_base if item_intensity is None else item_base + as_tensor(item_intensity) @ rel_emb
    cat = category_base if category_intensity is None else category_base + as_tensor(category_intensity) @ rel_emb
    return EnhancedTarget(item, cat, item_intensity, category_intensity)
