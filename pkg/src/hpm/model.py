"""Dual self-attention encoders over item and category sequences.

Parameters live in a flat ``dict[str, np.ndarray]``:

* ``item_emb`` (|V|+1, d), ``cat_emb`` (|C|+1, d), ``rel_emb`` (R, d),
  ``pos_emb`` (L, d)
* ``{stack}.{layer}.{WQ,WK,WV,WO,W1,b1,W2,b2,ln_g,ln_b}`` for stack in
  ``item``/``cat``
* ``kernel.*`` raw (pre-softplus) temporal kernel scalars

A forward pass wraps each array in a leaf :class:`Tensor` so gradients come
back keyed by the same names.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data.records import PAD, DataIntegrityError
from .numeric import ConfigError, ContractError, Tensor, concat, dropout, gather_rows, layer_norm, linear, matmul, multihead_attention
from .scel import DEFAULT_MU_DAYS, DEFAULT_SIGMA_DAYS, KernelParams

VARIANTS = ("full", "no-scel", "single-stream", "no-dcl")
STACKS = ("item", "cat")
LAYER_KEYS = ("WQ", "WK", "WV", "WO", "W1", "b1", "W2", "b2", "ln_g", "ln_b")


@dataclass
class ModelConfig:
    n_items: int
    n_categories: int
    n_relations: int = 4
    d: int = 64
    heads: int = 4
    layers: int = 1
    dropout: float = 0.2
    max_len: int = 20
    ln_eps: float = 1e-8
    variant: str = "full"
    sigma_init: float = DEFAULT_SIGMA_DAYS
    mu_init: float = DEFAULT_MU_DAYS

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def init_params(cfg: ModelConfig, rng: np.random.Generator, tables: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Fresh parameters; ``tables`` (item/cat/rel embeddings) override the random ones."""
    d = cfg.d
    bound = 1.0 / math.sqrt(d)
    p: dict[str, np.ndarray] = {
        "item_emb": rng.uniform(-bound, bound, (cfg.n_items + 1, d)),
        "cat_emb": rng.uniform(-bound, bound, (cfg.n_categories + 1, d)),
        "rel_emb": rng.uniform(-bound, bound, (cfg.n_relations, d)),
        "pos_emb": rng.uniform(-bound, bound, (cfg.max_len, d)),
    }
    if tables:
        for k, v in tables.items():
            if k in p:
                if v.shape != p[k].shape:
                    raise DataIntegrityError(f"pretrained {k} has shape {v.shape}, model expects {p[k].shape}")
                p[k] = np.array(v, dtype=np.float64, copy=True)
    p["item_emb"][PAD] = 0.0
    p["cat_emb"][PAD] = 0.0
    w = math.sqrt(6.0 / (2 * d))
    for s in STACKS:
        for layer in range(cfg.layers):
            pre = f"{s}.{layer}."
            for k in ("WQ", "WK", "WV", "WO", "W1", "W2"):
                p[pre + k] = rng.uniform(-w, w, (d, d))
            p[pre + "b1"] = np.zeros(d)
            p[pre + "b2"] = np.zeros(d)
            p[pre + "ln_g"] = np.ones(d)
            p[pre + "ln_b"] = np.zeros(d)
    p.update(KernelParams(cfg.sigma_init, cfg.sigma_init, cfg.mu_init, cfg.mu_init).raw())
    return p


def as_leaves(params: dict[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def _check_range(idx: np.ndarray, n: int, what: str) -> None:
    if idx.size and (idx.min() < 0 or idx.max() > n):
        raise DataIntegrityError(f"{what} index outside [0, {n}]")


def embed_inputs(items: np.ndarray, categories: np.ndarray, P: dict[str, Tensor]) -> tuple[Tensor, Tensor, np.ndarray]:
    """Item and category embeddings plus position embeddings, and the validity mask."""
    items = np.asarray(items, dtype=np.int64)
    categories = np.asarray(categories, dtype=np.int64)
    L = items.shape[-1]
    if L != P["pos_emb"].shape[0]:
        raise DataIntegrityError(f"window length {L} != position table length {P['pos_emb'].shape[0]}")
    _check_range(items, P["item_emb"].shape[0] - 1, "item")
    _check_range(categories, P["cat_emb"].shape[0] - 1, "category")
    pos = P["pos_emb"]
    return gather_rows(P["item_emb"], items) + pos, gather_rows(P["cat_emb"], categories) + pos, items != PAD


def attention_mask(valid: np.ndarray) -> np.ndarray:
    """(B, 1, L, L) allowed[q, k]: causal and key not padding.

    Padding queries with no admissible key attend to themselves so every row
    stays finite; their outputs are excluded from pooling.
    """
    B, L = valid.shape
    causal = np.tril(np.ones((L, L), dtype=bool))
    allowed = causal[None] & valid[:, None, :]
    empty = ~allowed.any(axis=-1)
    allowed |= empty[:, :, None] & np.eye(L, dtype=bool)[None]
    return allowed[:, None]


def attention_bias(valid: np.ndarray) -> np.ndarray:
    """Additive form of :func:`attention_mask`: 0 where allowed, -inf elsewhere."""
    return np.where(attention_mask(valid), 0.0, -np.inf)


def attention_block(x: Tensor, P: dict[str, Tensor], prefix: str, valid: np.ndarray, heads: int,
                    dropout_rate: float = 0.0, training: bool = False, rng=None, ln_eps: float = 1e-8,
                    bias: np.ndarray | None = None) -> Tensor:
    """One encoder block: multi-head attention -> FFN -> dropout -> residual -> layer norm.

    ``x`` is (B, L, d); the residual is taken from the block input.
    """
    if bias is None:
        bias = attention_bias(valid)
    w_qkv = concat([P[prefix + "WQ"], P[prefix + "WK"], P[prefix + "WV"]], axis=1)
    a = linear(multihead_attention(linear(x, w_qkv), heads, bias), P[prefix + "WO"])
    inner = linear(a, P[prefix + "W1"], P[prefix + "b1"]).relu()
    ffn = linear(inner, P[prefix + "W2"], P[prefix + "b2"])
    ffn = dropout(ffn, dropout_rate, training, rng)
    return layer_norm(x + ffn, P[prefix + "ln_g"], P[prefix + "ln_b"], ln_eps)


def encode(x: Tensor, P: dict[str, Tensor], stack: str, valid: np.ndarray, cfg: ModelConfig,
           training: bool = False, rng=None, bias: np.ndarray | None = None) -> Tensor:
    if bias is None:
        bias = attention_bias(valid)
    h = x
    for layer in range(cfg.layers):
        h = attention_block(h, P, f"{stack}.{layer}.", valid, cfg.heads, cfg.dropout, training, rng, cfg.ln_eps,
                            bias)
    return h


def pool(hidden: Tensor, valid: np.ndarray) -> Tensor:
    """Mean of hidden states over valid positions: (B, L, d) -> (B, d)."""
    counts = valid.sum(axis=-1)
    if np.any(counts == 0):
        raise ContractError("cannot pool a window with no valid positions")
    w = (valid / counts[:, None])[:, None, :]
    return matmul(w, hidden).reshape(len(valid), hidden.shape[-1])


def forward_dual(items: np.ndarray, categories: np.ndarray, P: dict[str, Tensor], cfg: ModelConfig,
                 training: bool = False, rng=None, valid: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Pooled item-level and category-level preference vectors, each (B, d).

    The single-stream variant encodes the summed item+category embeddings
    with the item stack and returns that vector for both levels.
    """
    xi, xc, mask = embed_inputs(items, categories, P)
    if valid is None:
        valid = mask
    bias = attention_bias(valid)
    if cfg.variant == "single-stream":
        s = pool(encode(xi + xc - P["pos_emb"], P, "item", valid, cfg, training, rng, bias), valid)
        return s, s
    v_f = pool(encode(xi, P, "item", valid, cfg, training, rng, bias), valid)
    c_f = pool(encode(xc, P, "cat", valid, cfg, training, rng, bias), valid)
    return v_f, c_f
