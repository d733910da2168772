"""Synthetic clustered corpora for desk-scale experiments and tests.

Images fall into topic clusters; every image also carries a color and a
size attribute. Captions are template sentences over cluster-specific
nouns/verbs plus the attribute words, so a caption identifies its image
well enough for the discrimination task to be learnable, while the
next-word tasks see regular template statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vground.corpus import (EmbeddingTable, ImageFeatureStore, SimilarityPair,
                            Vocab)

TOPICS = {
    "dog": {"nouns": ["dog", "puppy", "hound", "terrier"],
            "verbs": ["barks", "runs", "fetches", "digs"],
            "things": ["leash", "bone", "park", "yard"]},
    "car": {"nouns": ["car", "truck", "jeep", "van"],
            "verbs": ["drives", "parks", "races", "turns"],
            "things": ["road", "garage", "engine", "bridge"]},
    "bird": {"nouns": ["bird", "sparrow", "crow", "finch"],
             "verbs": ["flies", "sings", "perches", "glides"],
             "things": ["nest", "branch", "sky", "feeder"]},
    "boat": {"nouns": ["boat", "ship", "canoe", "ferry"],
             "verbs": ["sails", "floats", "docks", "drifts"],
             "things": ["harbor", "river", "deck", "wave"]},
}
COLORS = ["red", "blue", "green", "white"]
SIZES = ["big", "small"]
FUNCTION_WORDS = ["the", "a", "is", "near", "by", "on"]


@dataclass
class SyntheticCorpus:
    embeddings: EmbeddingTable  # covers every generated word
    features: ImageFeatureStore  # covers every image in every split
    train: list[tuple[str, list[str]]]
    val: list[tuple[str, list[str]]]
    test: list[tuple[str, list[str]]]
    latent: dict[str, np.ndarray]  # generating word vectors, for gold scores


def _all_words() -> list[str]:
    words = []
    for pools in TOPICS.values():
        for pool in pools.values():
            words.extend(pool)
    words.extend(COLORS)
    words.extend(SIZES)
    words.extend(FUNCTION_WORDS)
    return words


def make_clustered_corpus(n_train: int = 100, n_val: int = 24, n_test: int = 40,
                          p: int = 16, d: int = 16, captions_per_image: int = 2,
                          seed: int = 0) -> SyntheticCorpus:
    rng = np.random.default_rng(np.random.PCG64(seed))
    topics = list(TOPICS)

    # latent directions: topics, colors, sizes get separated centers
    centers_p = {t: rng.normal(size=p) * 2.0 for t in topics}
    color_p = {cword: rng.normal(size=p) * 1.2 for cword in COLORS}
    size_p = {s: rng.normal(size=p) * 0.8 for s in SIZES}

    latent: dict[str, np.ndarray] = {}
    centers_d = {t: rng.normal(size=d) * 1.5 for t in topics}
    group_d = {"colors": rng.normal(size=d) * 1.5, "sizes": rng.normal(size=d) * 1.5,
               "function": rng.normal(size=d) * 1.5}
    for t, pools in TOPICS.items():
        for pool in pools.values():
            for w in pool:
                latent[w] = centers_d[t] + 0.45 * rng.normal(size=d)
    for w in COLORS:
        latent[w] = group_d["colors"] + 0.45 * rng.normal(size=d)
    for w in SIZES:
        latent[w] = group_d["sizes"] + 0.45 * rng.normal(size=d)
    for w in FUNCTION_WORDS:
        latent[w] = group_d["function"] + 0.45 * rng.normal(size=d)

    words = _all_words()
    vectors = np.stack([latent[w] + 0.05 * rng.normal(size=d) for w in words])
    embeddings = EmbeddingTable(vocab=Vocab.from_words(words),
                                vectors=vectors.astype(np.float32))

    features: dict[str, np.ndarray] = {}
    splits: dict[str, list[tuple[str, list[str]]]] = {"train": [], "val": [], "test": []}
    counts = {"train": n_train, "val": n_val, "test": n_test}
    serial = 0
    for split, count in counts.items():
        for i in range(count):
            topic = topics[i % len(topics)]
            color = COLORS[int(rng.integers(len(COLORS)))]
            size = SIZES[int(rng.integers(len(SIZES)))]
            image_id = f"{split}_{serial:04d}"
            serial += 1
            feat = (centers_p[topic] + color_p[color] + size_p[size]
                    + 0.3 * rng.normal(size=p))
            features[image_id] = feat.astype(np.float32)
            pools = TOPICS[topic]
            for _ in range(captions_per_image):
                noun = pools["nouns"][int(rng.integers(4))]
                verb = pools["verbs"][int(rng.integers(4))]
                thing = pools["things"][int(rng.integers(4))]
                prep = FUNCTION_WORDS[3 + int(rng.integers(3))]
                tokens = ["the", size, color, noun, verb, prep, "the", thing]
                splits[split].append((image_id, tokens))
    return SyntheticCorpus(embeddings=embeddings,
                           features=ImageFeatureStore(features, p),
                           train=splits["train"], val=splits["val"],
                           test=splits["test"], latent=latent)


def make_similarity_pairs(sc: SyntheticCorpus, n_pairs: int = 120,
                          seed: int = 1) -> list[SimilarityPair]:
    """Word pairs scored by the cosine of their generating latent vectors."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    words = list(sc.latent)
    pairs = []
    seen = set()
    while len(pairs) < n_pairs:
        w1, w2 = (words[int(rng.integers(len(words)))] for _ in range(2))
        if w1 == w2 or (w1, w2) in seen:
            continue
        seen.add((w1, w2))
        u, v = sc.latent[w1], sc.latent[w2]
        gold = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
        pairs.append(SimilarityPair(w1, w2, round(5.0 * (gold + 1.0), 4)))
    return pairs


def write_corpus(sc: SyntheticCorpus, out_dir) -> dict[str, str]:
    """Write the corpus in the standard on-disk formats; returns the paths."""
    import json
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    emb = out / "embeddings.txt"
    with open(emb, "w", encoding="utf-8") as f:
        f.write(f"{len(sc.embeddings)} {sc.embeddings.dim}\n")
        for w, row in zip(sc.embeddings.vocab.words, sc.embeddings.vectors):
            f.write(w + " " + " ".join(f"{v:.6g}" for v in row) + "\n")
    paths["embeddings"] = str(emb)

    feat = out / "features.txt"
    with open(feat, "w", encoding="utf-8") as f:
        for image_id in sorted(sc.features.features):
            row = sc.features[image_id]
            f.write(image_id + " " + " ".join(f"{v:.6g}" for v in row) + "\n")
    paths["features"] = str(feat)

    for split in ("train", "val", "test"):
        path = out / f"captions_{split}.jsonl"
        with open(path, "w", encoding="utf-8") as f:
            for image_id, tokens in getattr(sc, split):
                f.write(json.dumps({"image_id": image_id,
                                    "caption": " ".join(tokens)}) + "\n")
        paths[f"captions_{split}"] = str(path)
    return paths


def write_similarity(pairs: list[SimilarityPair], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pr in pairs:
            f.write(f"{pr.word1}\t{pr.word2}\t{pr.gold}\n")
