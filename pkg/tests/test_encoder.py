import threading

import numpy as np
import pytest
import torch

from patsnd.encoder import EmbeddingCache, HashedTrigramEncoder, TextEncoder, encode_pair, make_encoder
from patsnd.errors import CheckpointError, InvalidInputError
from patsnd.kb import PropertyValuePair


@pytest.fixture
def enc():
    return HashedTrigramEncoder(dim_f=64)


def test_deterministic_across_instances():
    a = HashedTrigramEncoder().encode_pooled("instance of")
    b = HashedTrigramEncoder().encode_pooled("instance of")
    assert np.array_equal(a, b)
    assert a.shape == (768,)
    assert np.isfinite(a).all()


def test_whitespace_is_normalized(enc):
    assert np.array_equal(enc.encode_pooled("  instance   of "), enc.encode_pooled("instance of"))


@pytest.mark.parametrize("text", ["", "   ", "\n\t"])
def test_empty_text_rejected(enc, text):
    with pytest.raises(InvalidInputError):
        enc.encode_pooled(text)


def test_distinct_strings_are_separated():
    enc = HashedTrigramEncoder()
    a, b = enc.encode_pooled("politician"), enc.encode_pooled("chess variant")
    cos = float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))
    assert cos < 0.99


def test_cache_hit_is_bit_identical(enc):
    first = enc.encode_pooled("composer")
    assert enc.cache.get("composer") is not None
    fresh = HashedTrigramEncoder(dim_f=64).encode_pooled("composer")
    assert np.array_equal(enc.encode_pooled("composer"), fresh)
    assert np.array_equal(first, fresh)


def test_cache_lru_capacity():
    cache = EmbeddingCache(capacity=2)
    cache.put("a", np.zeros(3))
    cache.put("b", np.ones(3))
    cache.get("a")
    cache.put("c", np.ones(3))
    assert cache.get("b") is None
    assert cache.get("a") is not None
    assert len(cache) == 2


def test_cache_persistence(tmp_path, enc):
    texts = ["alpha", "beta", "gamma delta"]
    vecs = enc.encode_many(texts)
    enc.cache.save(tmp_path / "c.bin")
    other = EmbeddingCache()
    other.load(tmp_path / "c.bin", dim=64)
    for t, v in zip(texts, vecs):
        assert np.array_equal(other.get(t), v)


def test_cache_rejects_garbage(tmp_path):
    (tmp_path / "c.bin").write_bytes(b"nonsense")
    with pytest.raises(CheckpointError):
        EmbeddingCache().load(tmp_path / "c.bin")


def test_cache_rejects_truncation(tmp_path, enc):
    enc.encode_many(["one", "two"])
    enc.cache.save(tmp_path / "c.bin")
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        EmbeddingCache().load(tmp_path / "c.bin")


def test_concurrent_encoding_matches_serial():
    texts = [f"text number {i}" for i in range(200)]
    serial = HashedTrigramEncoder(dim_f=32).encode_many(texts)
    shared = HashedTrigramEncoder(dim_f=32)
    out = {}

    def work(chunk):
        for i in chunk:
            out[i] = shared.encode_pooled(texts[i])

    threads = [threading.Thread(target=work, args=(range(k, 200, 4),)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(np.array_equal(out[i], serial[i]) for i in range(200))


def test_bad_encoder_output_is_caught():
    class Broken(TextEncoder):
        dim_f = 4

        def _encode(self, text):
            return np.array([1.0, np.nan, 0.0, 0.0])

    with pytest.raises(InvalidInputError):
        Broken().encode_pooled("x")


def test_make_encoder_rejects_unknown_kind():
    with pytest.raises(InvalidInputError):
        make_encoder("word2vec")


class _Stub(TextEncoder):
    dim_f = 2
    table = {"occupation": [1.0, 2.0], "entrepreneur": [3.0, -1.0], "programmer": [0.5, 0.5]}

    def _encode(self, text):
        return np.array(self.table[text])


def _linear(weight, bias):
    lin = torch.nn.Linear(2, 3, dtype=torch.float64)
    with torch.no_grad():
        lin.weight.copy_(torch.tensor(weight, dtype=torch.float64))
        lin.bias.copy_(torch.tensor(bias, dtype=torch.float64))
    return lin


def test_zero_projection_gives_zero_vectors():
    p, v = encode_pair(PropertyValuePair("P106", "occupation", "entrepreneur"), _Stub(),
                       _linear([[0, 0]] * 3, [0, 0, 0]))
    assert torch.equal(p, torch.zeros(3, dtype=torch.float64))
    assert torch.equal(v, torch.zeros(3, dtype=torch.float64))


def test_equal_property_labels_give_equal_p():
    lin = _linear([[1, 2], [3, 4], [5, 6]], [0.1, 0.2, 0.3])
    p1, v1 = encode_pair(PropertyValuePair("P106", "occupation", "entrepreneur"), _Stub(), lin)
    p2, v2 = encode_pair(PropertyValuePair("P106", "occupation", "programmer"), _Stub(), lin)
    assert torch.equal(p1, p2)
    assert not torch.equal(v1, v2)


def test_projection_hand_case():
    # W (3x2) @ (1, 2) + b, computed by hand
    lin = _linear([[1, 0], [2, -1], [0.5, 3]], [1, 0, -2])
    p, _ = encode_pair(PropertyValuePair("P106", "occupation", "entrepreneur"), _Stub(), lin)
    assert p.tolist() == [2.0, 0.0, 4.5]
