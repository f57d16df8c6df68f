import json
import math

import numpy as np
import pytest

from hpm.evaluate import aggregate, build_eval_set, evaluate_split, hr_at_k, ndcg_at_k, rank_of_positive
from hpm.kge import EmbeddingTables
from hpm.model import init_params
from hpm.numeric import ConfigError
from hpm.serialization import CheckpointError
from hpm.train import NonFiniteLossError, TrainConfig, load_model, save_model, train

TINY = dict(d=8, heads=2, batch_size=32, lr=1e-3)


@pytest.fixture(scope="module")
def tiny(small_dataset):
    return small_dataset.subsample_users(12)


def test_hit_rate_examples():
    assert hr_at_k(1, 5) == hr_at_k(1, 50) == 1
    assert hr_at_k(6, 5) == 0 and hr_at_k(100, 50) == 0


def test_ndcg_examples():
    assert ndcg_at_k(1, 10) == 1.0
    assert abs(ndcg_at_k(2, 10) - 0.630930) < 1e-6
    assert ndcg_at_k(11, 10) == 0.0


def test_rank_ties_go_to_earlier_column():
    s = np.array([[0.5, 0.5, 0.5], [0.1, 0.9, 0.9], [3.0, 1.0, 2.0]])
    assert rank_of_positive(s, np.array([1, 2, 0])).tolist() == [2, 2, 1]


def test_aggregate_matches_per_user_recomputation(rng):
    ranks = rng.integers(1, 101, size=500)
    agg = aggregate(ranks)
    for k in (5, 10, 20, 50):
        assert agg[f"HR@{k}"] == pytest.approx(np.mean([hr_at_k(r, k) for r in ranks]), abs=1e-15)
        assert agg[f"NDCG@{k}"] == pytest.approx(np.mean([ndcg_at_k(r, k) for r in ranks]), abs=1e-15)
    vals = [agg[f"HR@{k}"] for k in (5, 10, 20, 50)]
    assert vals == sorted(vals) and all(0 <= v <= 1 for v in agg.values())


def test_eval_set_shape_and_determinism(small_dataset):
    a = build_eval_set(small_dataset, "test", seed=3)
    b = build_eval_set(small_dataset, "test", seed=3)
    assert a.candidates.shape == (150, 100)
    np.testing.assert_array_equal(a.candidates, b.candidates)
    np.testing.assert_array_equal(a.candidates[np.arange(150), a.pos_index], a.batch.target_items)
    hist = small_dataset.user_histories()
    for u, row, p in zip(a.batch.users, a.candidates, a.pos_index):
        negs = np.delete(row, p)
        assert len(set(negs.tolist())) == 99 and not hist[u] & set(negs.tolist())
    c = build_eval_set(small_dataset, "test", seed=4)
    assert not np.array_equal(a.candidates, c.candidates)


def test_oracle_scoring_gives_perfect_metrics(small_dataset):
    es = build_eval_set(small_dataset, "test", seed=0)
    scores = np.zeros(es.candidates.shape)
    scores[np.arange(len(es)), es.pos_index] = 1.0
    agg = aggregate(rank_of_positive(scores, es.pos_index))
    assert agg["HR@5"] == agg["NDCG@5"] == 1.0


def test_evaluate_split_is_bit_identical(small_dataset):
    cfg = TrainConfig(**TINY).model_config(small_dataset)
    p = init_params(cfg, np.random.default_rng(0))
    a = evaluate_split(p, cfg, small_dataset, "validation", seed=1)
    b = evaluate_split(p, cfg, small_dataset, "validation", seed=1)
    assert a.metrics == b.metrics and a.scores.tobytes() == b.scores.tobytes()
    rep = a.report()
    assert rep["n_users"] == 150 and all(1 <= r <= 100 for r in rep["ranks"].values())


def test_users_without_enough_negatives_are_skipped(small_dataset, caplog):
    es = build_eval_set(small_dataset, "test", seed=0, n_negatives=small_dataset.catalog.n_items - 10)
    assert len(es.skipped) > 0 and len(es) + len(es.skipped) == 150
    assert "skipped" in caplog.text


def increasing_validator():
    calls = {"n": 0}

    def v(params):
        calls["n"] += 1
        return {"HR@5": calls["n"] / 1000}
    return v


def test_improving_validation_runs_every_epoch(tiny):
    cfg = TrainConfig(epochs=200, log_initial_loss=False, **TINY)
    res = train(cfg, tiny, validator=increasing_validator())
    assert res.epochs_run == 200 and res.best_epoch == 200


def test_frozen_validation_stops_after_patience(tiny):
    cfg = TrainConfig(epochs=200, patience=10, log_initial_loss=False, **TINY)
    res = train(cfg, tiny, validator=lambda p: {"HR@5": 0.25})
    assert res.best_epoch == 1 and res.epochs_run == 11


def test_best_checkpoint_is_kept(tiny):
    values = iter([0.1, 0.4, 0.2, 0.3, 0.35, 0.1])
    snaps = []

    def v(params):
        snaps.append({k: a.copy() for k, a in params.items()})
        return {"HR@5": next(values)}
    res = train(TrainConfig(epochs=6, patience=6, log_initial_loss=False, **TINY), tiny, validator=v)
    assert res.best_epoch == 2 and res.best_value == 0.4
    for k in res.params:
        np.testing.assert_array_equal(res.params[k], snaps[1][k])


def test_training_log_fields_and_file(tiny, tmp_path):
    path = tmp_path / "log.jsonl"
    res = train(TrainConfig(epochs=2, patience=2, **TINY), tiny, log_path=path)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert lines == res.log and [e["epoch"] for e in lines] == [0, 1, 2]
    for e in lines:
        assert e["cl"] == pytest.approx(e["cl_item"] + e["cl_cate"], abs=1e-12)
        assert e["joint"] == pytest.approx(e["rec"] + e["lam"] * e["cl"], rel=1e-12)
        assert "HR@5" in e["val"]


def test_no_dcl_variant_drops_contrastive_term(tiny):
    res = train(TrainConfig(epochs=1, patience=1, variant="no-dcl", **TINY), tiny)
    for e in res.log:
        assert e["lam"] == 0.0 and e["lam_cl"] == 0.0 and e["joint"] == e["rec"]


def test_padding_rows_stay_zero(tiny):
    res = train(TrainConfig(epochs=2, patience=2, **TINY), tiny)
    assert not res.params["item_emb"][0].any() and not res.params["cat_emb"][0].any()


def test_training_is_deterministic(tiny):
    a = train(TrainConfig(epochs=2, patience=2, **TINY), tiny)
    b = train(TrainConfig(epochs=2, patience=2, **TINY), tiny)
    assert a.log == b.log
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_dump(tiny):
    cat = tiny.catalog
    tables = EmbeddingTables.random(cat.n_items, cat.n_categories, 4, 8, 20, np.random.default_rng(0))
    tables.item[1:] = np.nan
    with pytest.raises(NonFiniteLossError) as err:
        train(TrainConfig(epochs=1, patience=1, **TINY), tiny, tables=tables)
    assert {"users", "items", "negatives", "targets"} <= set(err.value.dump)


def test_model_checkpoint_round_trip(tiny, tmp_path):
    cfg = TrainConfig(**TINY).model_config(tiny)
    p = init_params(cfg, np.random.default_rng(0))
    save_model(tmp_path / "m.bin", p, cfg, {"epoch": 3})
    q, cfg2, meta = load_model(tmp_path / "m.bin")
    assert cfg2 == cfg and meta["epoch"] == 3
    assert sorted(q) == sorted(p) and all(q[k].tobytes() == p[k].tobytes() for k in p)
    save_model(tmp_path / "n.bin", q, cfg2, {"epoch": 3})
    assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "n.bin").read_bytes()
    with pytest.raises(CheckpointError):
        EmbeddingTables.load(tmp_path / "m.bin")


def test_train_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.epochs, c.patience, c.batch_size, c.lr, c.pretrain_lr, c.lam, c.d, c.heads, c.layers) == \
        (200, 10, 64, 1e-6, 1e-5, 1.0, 64, 4, 1)
    for bad in ({"patience": 300}, {"lr": 0.0}, {"lam": -1.0}, {"epochs": 0}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochz": 3})
    assert math.isclose(TrainConfig.from_dict(c.to_dict()).lr, 1e-6)
