"""Shared builders for tiny randomized models and batches."""

import numpy as np
import pytest

from vground import corpus
from vground.corpus import EmbeddingTable, ImageFeatureStore, Vocab
from vground.model import GroundedModel, TrainConfig


def tiny_table(v=12, d=5, seed=0):
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(v)]
    return EmbeddingTable(vocab=Vocab.from_words(words),
                          vectors=rng.standard_normal((v, d)).astype(np.float32))


def tiny_records(v=12, n_images=4, captions_per=2, max_len=4, seed=0):
    rng = np.random.default_rng(seed + 1)
    records = []
    for i in range(n_images):
        for _ in range(captions_per):
            n = int(rng.integers(2, max_len + 1))
            tokens = tuple(int(t) for t in rng.integers(0, v, size=n))
            records.append(corpus.CaptionRecord(image_id=f"img{i}", tokens=tokens,
                                                raw_length=n))
    return records


def tiny_features(n_images=4, p=6, seed=0):
    rng = np.random.default_rng(seed + 2)
    feats = {f"img{i}": rng.standard_normal(p).astype(np.float32)
             for i in range(n_images)}
    return ImageFeatureStore(feats, p)


def tiny_setup(v=12, d=5, c=7, p=6, q=7, batch_size=3, seed=0, n_images=4,
               max_len=4, mining=True, **cfg_overrides):
    """Model plus one epoch of batches over a random caption corpus."""
    table = tiny_table(v, d, seed)
    records = tiny_records(v, n_images=n_images, max_len=max_len, seed=seed)
    store = tiny_features(n_images, p, seed)
    cfg = TrainConfig(d=d, c=c, p=p, q=q, batch_size=batch_size, seed=seed,
                      **cfg_overrides)
    model = GroundedModel(table, cfg)
    batches = corpus.make_batches(records, store, table.vocab, batch_size,
                                  negative_mining=mining, seed=seed)
    return model, batches, records, store


def jitter_params(model, scale=0.05, seed=123):
    """Move every parameter to a generic point (off init symmetries)."""
    rng = np.random.default_rng(seed)
    for p in model.store.parameters():
        p.data = p.data + scale * rng.standard_normal(p.data.shape).astype(
            p.data.dtype)


@pytest.fixture
def tiny():
    return tiny_setup()
