"""Corpus ingestion: embeddings, captions, image features, eval datasets,
vocabulary construction, and deterministic batching with negative mining.

All loaders are pure functions over files; the resulting stores are
immutable and safe to share.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vground.errors import DataError

logger = logging.getLogger(__name__)

# ASCII punctuation, deleted character-wise before whitespace splitting.
PUNCTUATION = '!"#$%&\'()*+,-./:;<=>?@[\\]^_`{|}~'
_STRIP_TABLE = str.maketrans("", "", PUNCTUATION)


def tokenize(text: str) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace runs."""
    return text.lower().translate(_STRIP_TABLE).split()


@dataclass(frozen=True)
class Vocab:
    """Ordered word list with a word -> index map."""

    words: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_words(cls, words) -> "Vocab":
        words = tuple(words)
        index = {w: i for i, w in enumerate(words)}
        if len(index) != len(words):
            raise DataError("vocabulary contains duplicate words")
        return cls(words=words, index=index)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index


def build_vocab(captions: list[list[str]], cap: int) -> Vocab:
    """Keep the `cap` most frequent tokens; ties break lexicographically."""
    if cap < 1:
        raise DataError(f"vocabulary cap must be >= 1, got {cap}")
    counts = Counter()
    for tokens in captions:
        counts.update(tokens)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab.from_words(w for w, _ in ranked[:cap])


@dataclass(frozen=True)
class EmbeddingTable:
    """Vocabulary-indexed d-dimensional float32 vectors."""

    vocab: Vocab
    vectors: np.ndarray  # |V| x d

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vocab)

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.vocab.index[word]]


def subtable(table: EmbeddingTable, vocab: Vocab) -> EmbeddingTable:
    """Restrict an embedding table to `vocab`, rows in vocab order."""
    missing = [w for w in vocab.words if w not in table.vocab.index]
    if missing:
        raise DataError(f"{len(missing)} vocabulary words lack embeddings, "
                        f"e.g. {missing[:5]}")
    rows = np.stack([table.vector(w) for w in vocab.words])
    return EmbeddingTable(vocab=vocab, vectors=rows)


def _is_header(fields: list[str]) -> bool:
    if len(fields) != 2:
        return False
    try:
        int(fields[0]), int(fields[1])
    except ValueError:
        return False
    return True


def load_embeddings(path, limit: int | None = None) -> EmbeddingTable:
    """Read the standard text embedding format.

    Optional "<count> <dim>" header; rows are "word v1 ... vd". The first
    occurrence of a duplicated word wins; `limit` reads only the first N
    data lines.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"embedding file not found: {path}")
    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    consumed = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split(" ")
            if lineno == 1 and _is_header(fields):
                continue
            if limit is not None and consumed >= limit:
                break
            consumed += 1
            word, values = fields[0], fields[1:]
            try:
                vec = np.array([float(v) for v in values if v], dtype=np.float32)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: non-numeric field: {e}") from e
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise DataError(f"{path}:{lineno}: row has no vector values")
            elif len(vec) != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, "
                                f"got {len(vec)}")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}:{lineno}: non-finite embedding value")
            if word in seen:
                continue
            seen.add(word)
            words.append(word)
            rows.append(vec)
    if not rows:
        raise DataError(f"{path}: no embedding rows found")
    return EmbeddingTable(vocab=Vocab.from_words(words),
                          vectors=np.stack(rows))


def export_embeddings(table: EmbeddingTable, path) -> None:
    """Write "<N> <dim>" header plus rows at 6 significant digits."""
    if len(table) == 0:
        raise DataError("refusing to export an empty vocabulary")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table)} {table.dim}\n")
        for word, row in zip(table.vocab.words, table.vectors):
            f.write(word + " " + " ".join(f"{v:.6g}" for v in row) + "\n")


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    tokens: tuple[int, ...]  # vocab-resolved ids
    raw_length: int  # token count before OoV filtering


def load_captions(path) -> list[tuple[str, list[str]]]:
    """Read JSON-lines caption files into (image_id, tokens) pairs."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"caption file not found: {path}")
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                image_id = str(obj["image_id"])
                caption = obj["caption"]
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad caption record: {e}") from e
            out.append((image_id, tokenize(caption)))
    return out


def resolve_records(pairs: list[tuple[str, list[str]]], vocab: Vocab) -> list[CaptionRecord]:
    """Map tokens to vocab ids, dropping OoV tokens and emptied captions."""
    records = []
    for image_id, tokens in pairs:
        ids = tuple(vocab.index[t] for t in tokens if t in vocab.index)
        if ids:
            records.append(CaptionRecord(image_id=image_id, tokens=ids,
                                         raw_length=len(tokens)))
    return records


class ImageFeatureStore:
    """image_id -> p-dimensional float32 feature vector."""

    def __init__(self, features: dict[str, np.ndarray], dim: int):
        self.features = features
        self.dim = dim

    def __getitem__(self, image_id: str) -> np.ndarray:
        return self.features[image_id]

    def __contains__(self, image_id):
        return image_id in self.features

    def __len__(self):
        return len(self.features)


def load_image_features(path) -> ImageFeatureStore:
    """Read "image_id v1 ... vp" lines; duplicate ids keep the last row."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image feature file not found: {path}")
    feats: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            image_id, values = fields[0], fields[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: non-numeric field: {e}") from e
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, "
                                f"got {len(vec)}")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            if image_id in feats:
                logger.warning("%s:%d: duplicate image id %r, keeping last",
                               path, lineno, image_id)
            feats[image_id] = vec
    if not feats:
        raise DataError(f"{path}: no feature rows found")
    return ImageFeatureStore(feats, dim)


@dataclass
class CaptionBatch:
    """Padded token ids, prefix mask, image features, and match labels."""

    token_ids: np.ndarray  # B x n_max, int32
    mask: np.ndarray  # B x n_max, float32 (1 for real tokens)
    image_feats: np.ndarray  # B x p, float32
    match_label: np.ndarray  # B, float32

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def make_batches(records: list[CaptionRecord], store: ImageFeatureStore,
                 vocab: Vocab, batch_size: int, negative_mining: bool,
                 seed: int) -> list[CaptionBatch]:
    """One epoch of batches: seeded shuffle, per-batch padding, mining.

    With mining on, the last floor(B/2) rows of each batch get their
    caption replaced by one drawn (seeded) from a record with a different
    image id, and their label set to 0. The trailing short batch is
    emitted as-is.
    """
    if not records:
        raise DataError("no caption records to batch")
    if negative_mining:
        if batch_size < 2:
            raise DataError("negative mining requires batch size >= 2")
        distinct = {r.image_id for r in records}
        if len(distinct) < 2:
            raise DataError("negative mining requires at least two distinct images")
    for r in records:
        if r.image_id not in store:
            raise DataError(f"no image features for id {r.image_id!r}")

    rng = np.random.default_rng(np.random.PCG64(seed))
    order = rng.permutation(len(records))
    batches = []
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        b = len(chunk)
        tokens = [list(r.tokens) for r in chunk]
        labels = np.ones(b, dtype=np.float32)
        if negative_mining:
            n_neg = b // 2
            for row in range(b - n_neg, b):
                own = chunk[row].image_id
                while True:
                    j = int(rng.integers(len(records)))
                    if records[j].image_id != own:
                        break
                tokens[row] = list(records[j].tokens)
                labels[row] = 0.0
        n_max = max(len(t) for t in tokens)
        ids = np.zeros((b, n_max), dtype=np.int32)
        mask = np.zeros((b, n_max), dtype=np.float32)
        for row, t in enumerate(tokens):
            ids[row, :len(t)] = t
            mask[row, :len(t)] = 1.0
        feats = np.stack([store[r.image_id] for r in chunk])
        batches.append(CaptionBatch(token_ids=ids, mask=mask,
                                    image_feats=feats, match_label=labels))
    return batches


@dataclass(frozen=True)
class SimilarityPair:
    word1: str
    word2: str
    gold: float
    pos: str | None = None
    concreteness_quartile: int | None = None
    hard: bool | None = None


_POS_TAGS = {"ADJ", "NOUN", "VERB"}


def load_similarity_dataset(path) -> list[SimilarityPair]:
    """TSV "word1<TAB>word2<TAB>score[<TAB>pos<TAB>quartile<TAB>hard]"."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"similarity dataset not found: {path}")
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 6):
                raise DataError(f"{path}:{lineno}: expected 3 or 6 columns, "
                                f"got {len(cols)}")
            w1, w2 = cols[0].strip(), cols[1].strip()
            if not w1 or not w2:
                raise DataError(f"{path}:{lineno}: empty word")
            try:
                gold = float(cols[2])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad score: {e}") from e
            if not np.isfinite(gold):
                raise DataError(f"{path}:{lineno}: score is not finite")
            pos = quartile = hard = None
            if len(cols) == 6:
                pos = cols[3].strip().upper()
                if pos not in _POS_TAGS:
                    raise DataError(f"{path}:{lineno}: bad POS tag {pos!r}")
                try:
                    quartile = int(cols[4])
                except ValueError as e:
                    raise DataError(f"{path}:{lineno}: bad quartile: {e}") from e
                if quartile not in (1, 2, 3, 4):
                    raise DataError(f"{path}:{lineno}: quartile must be 1..4")
                raw = cols[5].strip().lower()
                if raw in ("1", "true"):
                    hard = True
                elif raw in ("0", "false"):
                    hard = False
                else:
                    raise DataError(f"{path}:{lineno}: bad hard flag {raw!r}")
            pairs.append(SimilarityPair(w1, w2, gold, pos, quartile, hard))
    if not pairs:
        raise DataError(f"{path}: no similarity pairs found")
    return pairs


@dataclass(frozen=True)
class StsPair:
    sent1: tuple[str, ...]
    sent2: tuple[str, ...]
    gold: float


def load_sts_dataset(path) -> list[StsPair]:
    """TSV "score<TAB>sentence1<TAB>sentence2" with gold in [0, 5]."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"STS dataset not found: {path}")
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
            try:
                gold = float(cols[0])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad score: {e}") from e
            if not np.isfinite(gold) or not 0.0 <= gold <= 5.0:
                raise DataError(f"{path}:{lineno}: score must be in [0, 5]")
            pairs.append(StsPair(tuple(tokenize(cols[1])), tuple(tokenize(cols[2])),
                                 gold))
    if not pairs:
        raise DataError(f"{path}: no STS pairs found")
    return pairs
