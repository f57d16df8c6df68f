import numpy as np
import pytest

from hpm.kge import (EmbeddingTables, PretrainConfig, Triple, corrupt_triple, graph_triples, pretrain,
                     transe_score)
from hpm.numeric import DimensionError
from hpm.serialization import CheckpointError


def planted_kg(n=50, per=3, shifts=(7, 19)):
    """Relation r links entity h to h + shift_r + j (mod n), j < per: 300 triples for the defaults."""
    return [Triple(h + 1, r, (h + k + j) % n + 1) for r, k in enumerate(shifts) for h in range(n) for j in range(per)]


def test_score_examples():
    h = np.array([0.3, -1.0])
    r = np.array([0.5, 2.0])
    assert transe_score(h, r, h + r) == 0.0
    assert transe_score([0, 0], [0, 0], [0, 1]) == 1.0
    assert transe_score([1, 0], [0, 1], [0, 0]) == 2.0


def test_score_symmetry_identity(rng):
    h, r, t = rng.normal(size=(3, 6))
    assert transe_score(h, r, t) == pytest.approx(transe_score(t, -r, h), abs=1e-12)


def test_score_dimension_mismatch():
    with pytest.raises(DimensionError):
        transe_score([1, 2], [1, 2, 3], [1, 2])


def test_two_entity_corruption_is_forced(rng):
    tr = Triple(1, 0, 2)
    for _ in range(20):
        c = corrupt_triple(rng, tr, 2)
        assert c in (Triple(2, 0, 2), Triple(1, 0, 1))


def test_corruption_changes_exactly_one_side_at_even_odds(rng):
    tr = Triple(3, 1, 7)
    n = 10_000
    heads = 0
    for _ in range(n):
        c = corrupt_triple(rng, tr, 50)
        assert (c.head != tr.head) + (c.tail != tr.tail) == 1
        assert c.relation == tr.relation and 1 <= c.head <= 50 and 1 <= c.tail <= 50
        heads += c.head != tr.head
    assert abs(heads - n / 2) < 3 * np.sqrt(n / 4)


def test_corruption_avoids_known_positives(rng):
    known = {(1, 0, t, "item") for t in range(2, 6)}
    for _ in range(200):
        c = corrupt_triple(rng, Triple(1, 0, 2), 6, known={*known, (3, 0, 2, "item"), (4, 0, 2, "item")})
        assert c in (Triple(2, 0, 2), Triple(5, 0, 2), Triple(6, 0, 2), Triple(1, 0, 1), Triple(1, 0, 6))


def fresh_tables(seed=0, d=16):
    return EmbeddingTables.random(50, 3, 2, d, 4, np.random.default_rng(seed))


def test_zero_epochs_returns_initial_tables():
    t = fresh_tables()
    res = pretrain(planted_kg(), t, PretrainConfig(epochs=0), np.random.default_rng(1))
    for a, b in zip(t.as_params().values(), res.tables.as_params().values()):
        np.testing.assert_array_equal(a, b)


def test_norms_bounded_and_padding_untouched():
    t = fresh_tables()
    cat_triples = [Triple(1, 0, 2, "category"), Triple(2, 1, 3, "category")]
    res = pretrain(planted_kg()[:60] + cat_triples, t, PretrainConfig(epochs=5, lr=0.05, batch_size=16),
                   np.random.default_rng(1))
    for table in (res.tables.item, res.tables.category):
        assert np.linalg.norm(table, axis=1).max() <= 1 + 1e-9
        assert not table[0].any()
    np.testing.assert_array_equal(res.tables.position, t.position)


def test_fixed_sample_loss_mostly_non_increasing():
    res = pretrain(planted_kg(), fresh_tables(d=64), PretrainConfig(epochs=100, lr=1e-3), np.random.default_rng(1))
    steps = np.diff(res.fixed_sample_loss)
    assert np.mean(steps <= 0) >= 0.8


def test_pretrain_default_learning_rate():
    assert PretrainConfig().lr == 1e-5 and PretrainConfig().margin == 1.0


def test_pretrain_is_deterministic():
    a = pretrain(planted_kg(), fresh_tables(), PretrainConfig(epochs=3, lr=1e-2), np.random.default_rng(4))
    b = pretrain(planted_kg(), fresh_tables(), PretrainConfig(epochs=3, lr=1e-2), np.random.default_rng(4))
    np.testing.assert_array_equal(a.tables.item, b.tables.item)
    assert a.epoch_loss == b.epoch_loss


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    t = fresh_tables()
    t.save(tmp_path / "e.bin", {"note": "x"})
    back, meta = EmbeddingTables.load(tmp_path / "e.bin")
    for a, b in zip(t.as_params().values(), back.as_params().values()):
        assert a.tobytes() == b.tobytes()
    assert meta["d"] == 16 and meta["n_items"] == 50 and meta["note"] == "x"
    t.save(tmp_path / "f.bin", {"note": "x"})
    assert (tmp_path / "e.bin").read_bytes() == (tmp_path / "f.bin").read_bytes()


def test_checkpoint_schema_checked(tmp_path):
    p = tmp_path / "e.bin"
    fresh_tables().save(p)
    p.write_bytes(p.read_bytes().replace(b"hpm-emb-v1", b"hpm-emb-v9", 1))
    with pytest.raises(CheckpointError):
        EmbeddingTables.load(p)


def test_graph_triples_cover_both_levels(small_dataset):
    tr = graph_triples(small_dataset.graph)
    g = small_dataset.graph
    assert len(tr) == sum(len(g.edges(lv)[r]) for lv in ("item", "category") for r in g.relations)
    assert {t.level for t in tr} == {"item", "category"}
