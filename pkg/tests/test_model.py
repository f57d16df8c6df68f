import math

import numpy as np
import pytest

from hpm.data import DataIntegrityError
from hpm.model import (ModelConfig, as_leaves, attention_block, attention_mask, embed_inputs, encode, forward_dual,
                       init_params, pool)
from hpm.numeric import ConfigError, ContractError, Tensor, no_grad


def model(variant="full", d=8, heads=2, L=6, n_items=15, n_cats=4, seed=0):
    cfg = ModelConfig(n_items=n_items, n_categories=n_cats, d=d, heads=heads, max_len=L, variant=variant)
    params = init_params(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for k, v in params.items():
        if k.endswith(("b1", "b2", "ln_b")):
            v[:] = rng.normal(size=v.shape) * 0.1
    return cfg, params


def run(cfg, params, items, cats):
    with no_grad():
        v, c = forward_dual(np.asarray(items), np.asarray(cats), as_leaves(params, False), cfg)
    return v.data, c.data


def batch(rng, B=3, L=6, n_items=15, n_cats=4, pads=(0, 2, 4)):
    items = rng.integers(1, n_items + 1, size=(B, L))
    cats = rng.integers(1, n_cats + 1, size=(B, L))
    for b, p in enumerate(pads[:B]):
        items[b, :p] = 0
        cats[b, :p] = 0
    return items, cats


# -- embedding --------------------------------------------------------------------

def test_all_padding_embeds_to_positions():
    cfg, p = model()
    P = as_leaves(p, False)
    xi, xc, mask = embed_inputs(np.zeros((1, 6), int), np.zeros((1, 6), int), P)
    np.testing.assert_array_equal(xi.data[0], p["pos_emb"])
    np.testing.assert_array_equal(xc.data[0], p["pos_emb"])
    assert not mask.any()


def test_zero_positions_give_raw_rows():
    cfg, p = model()
    p["pos_emb"][:] = 0.0
    items, cats = np.array([[3, 1, 7, 2, 2, 9]]), np.array([[1, 2, 3, 4, 1, 2]])
    xi, xc, _ = embed_inputs(items, cats, as_leaves(p, False))
    np.testing.assert_array_equal(xi.data[0], p["item_emb"][items[0]])
    np.testing.assert_array_equal(xc.data[0], p["cat_emb"][cats[0]])


def test_embedding_sums_hand_checked():
    P = {"item_emb": Tensor(np.array([[0, 0], [1, 2], [3, 4]], float)),
         "cat_emb": Tensor(np.array([[0, 0], [10, 20]], float)),
         "pos_emb": Tensor(np.array([[0.5, 0.5], [1, 1], [2, 2]], float))}
    xi, xc, mask = embed_inputs(np.array([[0, 2, 1]]), np.array([[0, 1, 1]]), P)
    assert xi.data[0].tolist() == [[0.5, 0.5], [4, 5], [3, 4]]
    assert xc.data[0].tolist() == [[0.5, 0.5], [11, 21], [12, 22]]
    assert mask.tolist() == [[False, True, True]]


def test_index_out_of_range():
    cfg, p = model()
    with pytest.raises(DataIntegrityError):
        embed_inputs(np.array([[0, 0, 0, 0, 0, 16]]), np.ones((1, 6), int), as_leaves(p, False))


# -- attention block ----------------------------------------------------------------

def layer_norm_list(v, g, b, eps=1e-8):
    m = sum(v) / len(v)
    var = sum((x - m) ** 2 for x in v) / len(v)
    return [gi * (x - m) / math.sqrt(var + eps) + bi for x, gi, bi in zip(v, g, b)]


def vecmat(v, M):
    return [sum(v[i] * M[i][j] for i in range(len(v))) for j in range(len(M[0]))]


def manual_block(x, W):
    """Single-head block evaluated scalar by scalar."""
    L, d = len(x), len(x[0])
    q = [vecmat(r, W["WQ"]) for r in x]
    k = [vecmat(r, W["WK"]) for r in x]
    v = [vecmat(r, W["WV"]) for r in x]
    out = []
    for i in range(L):
        s = [sum(q[i][t] * k[j][t] for t in range(d)) / math.sqrt(d) for j in range(i + 1)]
        z = sum(math.exp(a) for a in s)
        w = [math.exp(a) / z for a in s]
        head = [sum(w[j] * v[j][t] for j in range(i + 1)) for t in range(d)]
        a = vecmat(head, W["WO"])
        inner = [max(0.0, u + b) for u, b in zip(vecmat(a, W["W1"]), W["b1"])]
        ffn = [u + b for u, b in zip(vecmat(inner, W["W2"]), W["b2"])]
        out.append(layer_norm_list([xi + f for xi, f in zip(x[i], ffn)], W["ln_g"], W["ln_b"]))
    return out


def test_two_position_block_matches_manual_computation():
    W = {"WQ": [[1.0, 0.5], [-0.5, 1.0]], "WK": [[0.3, 0.0], [0.2, 1.0]], "WV": [[1.0, -1.0], [0.5, 2.0]],
         "WO": [[0.7, 0.1], [0.0, 1.2]], "W1": [[1.0, -0.3], [0.4, 0.9]], "b1": [0.1, -0.2],
         "W2": [[0.6, 0.0], [-0.8, 1.0]], "b2": [0.05, 0.0], "ln_g": [1.5, 0.5], "ln_b": [0.0, 0.25]}
    x = [[0.2, -1.0], [1.5, 0.3]]
    P = {"b." + k: Tensor(np.array(v)) for k, v in W.items()}
    out = attention_block(Tensor(np.array([x])), P, "b.", np.array([[True, True]]), heads=1).data[0]
    np.testing.assert_allclose(out, manual_block(x, W), rtol=1e-12, atol=1e-12)


def test_single_position_attends_to_itself():
    cfg, p = model(L=1, d=4, heads=2)
    P = as_leaves(p, False)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 4)))
    pre = "item.0."
    with no_grad():
        out = attention_block(x, P, pre, np.array([[True]]), heads=2).data
        a = x.data @ p[pre + "WV"] @ p[pre + "WO"]
        ffn = np.maximum(a @ p[pre + "W1"] + p[pre + "b1"], 0) @ p[pre + "W2"] + p[pre + "b2"]
        h = x.data + ffn
        ref = (h - h.mean(-1, keepdims=True)) / np.sqrt(h.var(-1, keepdims=True) + 1e-8) * p[pre + "ln_g"] + p[pre + "ln_b"]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_mask_rows():
    valid = np.array([[False, False, True, True], [True, True, True, True]])
    m = attention_mask(valid)[:, 0]
    assert m[0, 3].tolist() == [False, False, True, True]
    assert m[0, 0].tolist() == [True, False, False, False]  # padding query attends to itself only
    assert np.array_equal(m[1], np.tril(np.ones((4, 4), bool)))
    assert m.any(axis=-1).all()


def test_padding_keys_contribute_nothing_to_first_valid_position():
    cfg, p = model()
    P = as_leaves(p, False)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 6, 8))
    valid = np.array([[True, False, False, False, False, False]])
    base = attention_block(Tensor(x), P, "item.0.", valid, 2).data
    x2 = x.copy()
    x2[0, 1:] = rng.normal(size=(5, 8)) * 10
    np.testing.assert_array_equal(attention_block(Tensor(x2), P, "item.0.", valid, 2).data[0, 0], base[0, 0])


# -- invariants ---------------------------------------------------------------------------

@pytest.mark.parametrize("k", range(6))
def test_causal_perturbation(k):
    cfg, p = model()
    P = as_leaves(p, False)
    rng = np.random.default_rng(k)
    x = rng.normal(size=(2, 6, 8))
    valid = np.ones((2, 6), bool)
    h = encode(Tensor(x), P, "item", valid, cfg).data
    x2 = x.copy()
    x2[:, k] += rng.normal(size=(2, 8))
    h2 = encode(Tensor(x2), P, "item", valid, cfg).data
    np.testing.assert_array_equal(h2[:, :k], h[:, :k])
    assert not np.allclose(h2[:, k], h[:, k])


@pytest.mark.parametrize("variant", ["full", "single-stream"])
def test_padding_inertness(variant):
    cfg, p = model(variant)
    rng = np.random.default_rng(4)
    items, cats = batch(rng)
    v, c = run(cfg, p, items, cats)
    mask = items == 0
    # the ids at masked positions are replaced by arbitrary ones, with the mask held fixed
    items2, cats2 = items.copy(), cats.copy()
    items2[mask] = rng.integers(1, 16, size=mask.sum())
    cats2[mask] = rng.integers(1, 5, size=mask.sum())
    with no_grad():
        v2, c2 = forward_dual(items2, cats2, as_leaves(p, False), cfg, valid=~mask)
    np.testing.assert_array_equal(v2.data, v)
    np.testing.assert_array_equal(c2.data, c)


def test_stack_independence():
    cfg, p = model()
    rng = np.random.default_rng(5)
    items, cats = batch(rng)
    v, c = run(cfg, p, items, cats)
    cats2 = np.where(cats > 0, rng.integers(1, 5, size=cats.shape), 0)
    items2 = np.where(items > 0, rng.integers(1, 16, size=items.shape), 0)
    v_c, c_c = run(cfg, p, items, cats2)
    v_i, c_i = run(cfg, p, items2, cats)
    np.testing.assert_array_equal(v_c, v)
    np.testing.assert_array_equal(c_i, c)
    assert not np.allclose(c_c, c) and not np.allclose(v_i, v)


def test_output_shapes_and_eval_determinism():
    cfg, p = model()
    items, cats = batch(np.random.default_rng(6))
    v, c = run(cfg, p, items, cats)
    assert v.shape == c.shape == (3, 8)
    v2, _ = run(cfg, p, items, cats)
    np.testing.assert_array_equal(v, v2)


def test_training_mode_uses_dropout():
    cfg, p = model()
    items, cats = batch(np.random.default_rng(6))
    P = as_leaves(p, False)
    with no_grad():
        a, _ = forward_dual(items, cats, P, cfg, training=True, rng=np.random.default_rng(0))
        b, _ = forward_dual(items, cats, P, cfg)
    assert not np.allclose(a.data, b.data)


# -- pooling -------------------------------------------------------------------------------

def test_pool_examples():
    rng = np.random.default_rng(7)
    h = rng.normal(size=(3, 20, 4))
    valid = np.zeros((3, 20), bool)
    valid[0, 19] = True
    valid[1, 18:] = True
    valid[2, [2, 5, 11, 12, 19]] = True
    out = pool(Tensor(h), valid).data
    np.testing.assert_allclose(out[0], h[0, 19], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out[1], (h[1, 18] + h[1, 19]) / 2, rtol=1e-15)
    np.testing.assert_allclose(out[2], h[2, valid[2]].mean(axis=0), rtol=1e-14)


def test_pool_empty_window_raises():
    with pytest.raises(ContractError):
        pool(Tensor(np.zeros((1, 3, 2))), np.zeros((1, 3), bool))


# -- parameters ------------------------------------------------------------------------------

def test_stacks_share_no_weights():
    cfg, p = model()
    keys = [k for k in p if k.startswith("item.")]
    assert len(keys) == 10
    for k in keys:
        other = "cat." + k[len("item."):]
        assert other in p and not np.shares_memory(p[other], p[k])
        if k.split(".")[-1].startswith("W"):
            assert not np.array_equal(p[other], p[k])


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(n_items=3, n_categories=2, d=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(n_items=3, n_categories=2, variant="nope")
    cfg = ModelConfig(n_items=3, n_categories=2)
    assert (cfg.d, cfg.heads, cfg.layers, cfg.dropout, cfg.max_len) == (64, 4, 1, 0.2, 20)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_pretrained_tables_are_copied_in():
    cfg = ModelConfig(n_items=5, n_categories=2, d=4, heads=2, max_len=3)
    tables = {"item_emb": np.arange(24.0).reshape(6, 4)}
    p = init_params(cfg, np.random.default_rng(0), tables)
    np.testing.assert_array_equal(p["item_emb"][1:], tables["item_emb"][1:])
    assert not p["item_emb"][0].any() and tables["item_emb"][0].any()
    with pytest.raises(DataIntegrityError):
        init_params(cfg, np.random.default_rng(0), {"item_emb": np.zeros((3, 4))})
