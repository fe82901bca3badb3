"""Pooled text encoders, the embedding cache, and pair projection.

Encoders map a string to a single frozen vector of width ``dim_f``. Only the
linear projection to the hidden width is trained (it lives on the scorer).
"""

from __future__ import annotations

import hashlib
import re
import struct
import threading
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, InvalidInputError
from .io import atomic_open

DEFAULT_DIM_F = 768
CACHE_CAPACITY = 1_000_000
CACHE_MAGIC = b"PSNDEMB\x01"

_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    return _WS.sub(" ", text).strip()


def text_key(text: str) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()


class EmbeddingCache:
    """Thread-safe LRU map from text to vector, keyed on a 128-bit text digest."""

    def __init__(self, capacity=CACHE_CAPACITY):
        self.capacity = int(capacity)
        self._data: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._data)

    def get(self, text):
        key = text_key(text)
        with self._lock:
            vec = self._data.get(key)
            if vec is not None:
                self._data.move_to_end(key)
            return vec

    def put(self, text, vec):
        self._put_key(text_key(text), vec)

    def _put_key(self, key, vec):
        vec = np.asarray(vec)
        vec.setflags(write=False)
        with self._lock:
            self._data[key] = vec
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def save(self, path):
        """Write ``magic | dim | count | (digest, float64 vector)*``."""
        with self._lock:
            items = list(self._data.items())
        dim = items[0][1].shape[0] if items else 0
        with atomic_open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<IQ", dim, len(items)))
            for key, vec in items:
                fh.write(key)
                fh.write(np.asarray(vec, dtype="<f8").tobytes())

    def load(self, path, dim=None):
        data = Path(path).read_bytes()
        if data[: len(CACHE_MAGIC)] != CACHE_MAGIC:
            raise CheckpointError(f"{path}: not an embedding cache file (bad header)")
        off = len(CACHE_MAGIC)
        file_dim, count = struct.unpack_from("<IQ", data, off)
        off += struct.calcsize("<IQ")
        if dim is not None and count and file_dim != dim:
            raise CheckpointError(f"{path}: cache dim {file_dim} does not match encoder dim {dim}")
        rec = 16 + 8 * file_dim
        if len(data) != off + rec * count:
            raise CheckpointError(f"{path}: truncated or corrupted cache file")
        for i in range(count):
            start = off + i * rec
            key = data[start : start + 16]
            vec = np.frombuffer(data, dtype="<f8", count=file_dim, offset=start + 16).astype(np.float64)
            self._put_key(key, vec)


class TextEncoder:
    """Base class: subclasses implement ``_encode`` for already-normalized text."""

    dim_f: int = DEFAULT_DIM_F
    name = "base"

    def __init__(self, cache: EmbeddingCache | None = None):
        self.cache = cache if cache is not None else EmbeddingCache()

    def encode_pooled(self, text: str) -> np.ndarray:
        norm = normalize_text(text) if isinstance(text, str) else ""
        if not norm:
            raise InvalidInputError("cannot encode empty text")
        vec = self.cache.get(norm)
        if vec is None:
            vec = np.asarray(self._encode(norm), dtype=np.float64)
            if vec.shape != (self.dim_f,) or not np.all(np.isfinite(vec)):
                raise InvalidInputError(f"encoder produced an invalid vector for {norm!r}")
            self.cache.put(norm, vec)
        return vec

    def encode_many(self, texts) -> np.ndarray:
        out = np.empty((len(texts), self.dim_f), dtype=np.float64)
        for i, t in enumerate(texts):
            out[i] = self.encode_pooled(t)
        return out

    def _encode(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashedTrigramEncoder(TextEncoder):
    """Deterministic offline encoder.

    The text's character-trigram counts are multiplied by a fixed Gaussian
    matrix with ``buckets`` rows. Rows are generated on demand from
    ``(seed, bucket)`` so the matrix is never materialized. Output is scaled to
    norm ``sqrt(dim_f)`` (unit RMS entries).
    """

    name = "fallback"

    def __init__(self, dim_f=DEFAULT_DIM_F, seed=0, buckets=1 << 20, cache=None):
        super().__init__(cache)
        self.dim_f = int(dim_f)
        self.seed = int(seed)
        self.buckets = int(buckets)
        self._rows: dict[int, np.ndarray] = {}
        self._rows_lock = threading.Lock()

    def _row(self, bucket):
        row = self._rows.get(bucket)
        if row is None:
            row = np.random.default_rng([self.seed, bucket]).standard_normal(self.dim_f)
            with self._rows_lock:
                self._rows[bucket] = row
        return row

    def _bucket(self, gram):
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.buckets

    def _encode(self, text):
        padded = f"^{text.lower()}$"
        counts: dict[int, int] = {}
        for i in range(len(padded) - 2):
            b = self._bucket(padded[i : i + 3])
            counts[b] = counts.get(b, 0) + 1
        vec = np.zeros(self.dim_f)
        for b, c in sorted(counts.items()):
            vec += c * self._row(b)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return vec
        return vec * (np.sqrt(self.dim_f) / norm)


class TransformerEncoder(TextEncoder):
    """Pretrained transformer; the [CLS] output vector is the pooled embedding."""

    name = "pretrained"

    def __init__(self, model_name="bert-base-cased", cache=None, device="cpu"):
        super().__init__(cache)
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise InvalidInputError("the pretrained encoder needs the 'transformers' package") from exc
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name).to(device).eval()
        self.device = device
        self.dim_f = int(self.model.config.hidden_size)
        self._lock = threading.Lock()

    @torch.no_grad()
    def _encode(self, text):
        with self._lock:
            batch = self.tokenizer(text, return_tensors="pt", truncation=True).to(self.device)
            out = self.model(**batch).last_hidden_state[0, 0]
        return out.double().cpu().numpy()


def make_encoder(kind="fallback", dim_f=DEFAULT_DIM_F, seed=0, cache=None) -> TextEncoder:
    if kind == "fallback":
        return HashedTrigramEncoder(dim_f=dim_f, seed=seed, cache=cache)
    if kind == "pretrained":
        return TransformerEncoder(cache=cache)
    raise InvalidInputError(f"unknown encoder kind {kind!r}")


def encode_pair(pv, encoder: TextEncoder, projection: torch.nn.Linear):
    """Project the pooled property and value embeddings into hidden space."""
    feats = encoder.encode_many([pv.property_label, pv.value_text])
    x = torch.as_tensor(feats, dtype=projection.weight.dtype, device=projection.weight.device)
    out = projection(x)
    return out[0], out[1]
