from collections import Counter

import numpy as np
import pytest

from oracles import central_difference
from uco.datamodel import ValidationError
from uco.encoder import (
    EmbeddingModel,
    FeaturizerConfig,
    collision_rate,
    cosine,
    encode,
    encode_backward,
    feature_strings,
    featurize,
    init_model,
    load_model,
    save_model,
)
from uco.synthgen import GenConfig, generate

SMALL = FeaturizerConfig(n_buckets=2**10, hash_seed=5)
WORDS = ["iphone", "case", "s2716dg", "barbie", "model", "3d", "printer", "filament", "cover", "doll", "i5", "gpu"]


def random_text(rng, n_words=5):
    return " ".join(WORDS[i] for i in rng.integers(len(WORDS), size=n_words))


def test_featurize_deterministic_and_case_folded():
    cfg = FeaturizerConfig()
    assert featurize("Apple iPhone 13", cfg).tolist() == featurize("Apple iPhone 13", cfg).tolist()
    assert Counter(featurize("iPhone", cfg).tolist()) == Counter(featurize("iphone", cfg).tolist())
    assert featurize("a  b", cfg).tolist() == featurize(" a b ", cfg).tolist()


def test_featurize_ngrams_by_hand():
    cfg = FeaturizerConfig(ngram_min=3, ngram_max=4)
    assert feature_strings("Ab1", cfg) == ["g:<ab", "g:ab1", "g:b1>", "g:<ab1", "g:ab1>", "w:ab1"]


def test_model_codes_differ_in_final_ngrams():
    cfg = FeaturizerConfig()
    a = Counter(feature_strings("S2716DG", cfg))
    b = Counter(feature_strings("S2716DP", cfg))
    only_a = set(a) - set(b)
    assert {"g:dg>", "g:6dg>", "g:16dg>", "w:s2716dg"} <= only_a
    assert Counter(featurize("S2716DG", cfg).tolist()) != Counter(featurize("S2716DP", cfg).tolist())


def test_featurize_empty_text():
    with pytest.raises(ValidationError):
        featurize("   ", FeaturizerConfig())


def test_feature_ids_in_range():
    cfg = FeaturizerConfig(n_buckets=64)
    ids = featurize("barbie model pointed toe shoes", cfg)
    assert ids.min() >= 0 and ids.max() < 64


def test_encode_unit_norm_and_self_similarity():
    rng = np.random.default_rng(0)
    for seed in range(20):
        model = EmbeddingModel(np.random.default_rng(seed).standard_normal((SMALL.n_buckets, 12)), SMALL)
        text = random_text(rng)
        v = encode(text, model)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-9
        assert cosine(v, encode(text, model)) == pytest.approx(1.0)


def test_encode_zero_table_falls_back_to_basis_vector():
    model = EmbeddingModel(np.zeros((SMALL.n_buckets, 4)), SMALL)
    np.testing.assert_array_equal(encode("anything", model), [1.0, 0.0, 0.0, 0.0])
    rows, grads = encode_backward("anything", model, np.ones(4))
    assert not grads.any()


def test_cosine_examples():
    e = np.eye(3)
    u = np.array([0.6, 0.8, 0.0])
    assert cosine(u, u) == pytest.approx(1.0)
    assert cosine(e[0], e[1]) == 0.0
    assert cosine(u, -u) == pytest.approx(-1.0)
    with pytest.raises(ValidationError):
        cosine(e[0], np.ones(2))


def test_init_range():
    model = init_model(8, SMALL, seed=1)
    assert np.abs(model.table).max() <= 0.5 / 8
    assert model.table.dtype == np.float32


def test_backward_radial_component_vanishes():
    model = EmbeddingModel(np.random.default_rng(1).standard_normal((SMALL.n_buckets, 8)), SMALL)
    y = encode("3d printer filament", model)
    _, grads = encode_backward("3d printer filament", model, 3.0 * y)
    assert np.abs(grads).max() < 1e-12


def test_backward_repeated_token_accumulates():
    cfg = FeaturizerConfig(n_buckets=2**16, include_whole_tokens=True)
    model = EmbeddingModel(np.random.default_rng(2).standard_normal((cfg.n_buckets, 6)), cfg)
    upstream = np.random.default_rng(3).standard_normal(6)
    rows, grads = encode_backward("case case gpu", model, upstream)
    row = featurize("case", cfg)[-1]  # whole-token feature of "case"
    counts = Counter(featurize("case case gpu", cfg).tolist())
    assert counts[row] == 2
    per_occurrence = grads[rows.tolist().index(row)] / counts[row]
    y = encode("case case gpu", model)
    ids = featurize("case case gpu", cfg)
    raw = model.table[ids].mean(axis=0)
    expected_one = (upstream - (y @ upstream) * y) / np.linalg.norm(raw) / len(ids)
    np.testing.assert_allclose(per_occurrence, expected_one, atol=1e-12)


def table_fd_check(text, model, rng):
    upstream = rng.standard_normal(model.dim)
    rows, grads = encode_backward(text, model, upstream)
    sub = model.table[rows].copy()

    def f(values):
        table = model.table.copy()
        table[rows] = values
        return float(encode(text, EmbeddingModel(table, model.featurizer)) @ upstream)

    numeric = central_difference(f, sub)
    return np.abs(grads - numeric).max() / max(np.abs(numeric).max(), 1e-8)


def test_backward_finite_difference_five_words_dim8():
    rng = np.random.default_rng(4)
    model = EmbeddingModel(rng.standard_normal((SMALL.n_buckets, 8)), SMALL)
    assert table_fd_check(random_text(rng, 5), model, rng) < 1e-4


def test_backward_finite_difference_100_draws():
    rng = np.random.default_rng(5)
    cfg = FeaturizerConfig(n_buckets=2**8, hash_seed=1)
    for _ in range(100):
        dim = int(rng.integers(2, 9))
        model = EmbeddingModel(rng.standard_normal((cfg.n_buckets, dim)), cfg)
        assert table_fd_check(random_text(rng, int(rng.integers(1, 4))), model, rng) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    model = init_model(8, FeaturizerConfig(n_buckets=2**10, hash_seed=9, ngram_max=4), seed=2)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.featurizer == model.featurizer
    np.testing.assert_array_equal(loaded.table, model.table)
    raw = path.read_bytes()
    assert raw[:8] == b"UCOEMB01"
    assert raw[-8 * 4:] == model.table[-1].astype("<f4").tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope")
    with pytest.raises(ValidationError):
        load_model(bad)


def test_collision_rate_desk_scale():
    pairs = generate(GenConfig(n_queries=2000, rng_seed=1))
    texts = sorted({p.title_text for p in pairs} | {p.query_text for p in pairs})
    rate = collision_rate(texts, FeaturizerConfig())
    print(f"collision rate over {len(texts)} texts: {rate:.4%}")
    assert rate < 0.05
