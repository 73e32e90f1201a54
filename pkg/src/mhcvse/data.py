"""Datasets: file formats, vocabulary, and the synthetic paired generator.

Region features live in a little-endian binary format (magic ``RGFT``),
captions in JSON Lines with pre-tokenized strings, and a JSON manifest ties
a split together. The synthetic generator draws one latent vector per
image-caption pair, emits region features as fixed random projections of
it plus noise, and caption tokens by quantizing the latent coordinates
into per-position vocabulary buckets, so matching is learnable from either
side but never a lookup.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

__all__ = [
    "STOPWORDS", "tokenize", "Vocabulary", "InstancePair",
    "DatasetManifest", "Dataset",
    "write_features", "read_features",
    "write_captions_jsonl", "read_captions_jsonl",
    "load_dataset", "generate_synthetic",
]

FEATURES_MAGIC = b"RGFT"
FEATURES_VERSION = 1

# small fixed list; synthetic tokens never collide with it
STOPWORDS = frozenset("""
a an and are as at be but by for from has have in is it its of on or that the
this to was were will with
""".split())


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop stopwords."""
    out = []
    word = []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return [t for t in out if t not in STOPWORDS]


class Vocabulary:
    """Token -> id map with id 0 reserved for unknown tokens."""

    UNK = "<unk>"

    def __init__(self, tokens: list[str]):
        self.tokens = [self.UNK] + [t for t in tokens if t != self.UNK]
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus) -> "Vocabulary":
        """Frequency-ranked vocabulary (ties alphabetical) from token lists."""
        counts = Counter()
        for tokens in corpus:
            counts.update(tokens)
        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        return cls([tok for tok, _ in ranked])

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        """Rebuild from a previously saved full token list (UNK included)."""
        if not tokens or tokens[0] != cls.UNK:
            raise ValueError(f"saved vocabulary must start with {cls.UNK}")
        return cls(tokens[1:])

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens) -> list[int]:
        return [self.index.get(t, 0) for t in tokens]


@dataclass
class InstancePair:
    """The unit of training data: one image's regions and one of its captions."""

    image_id: int
    caption_id: int
    regions: np.ndarray
    token_ids: list[int]


@dataclass
class DatasetManifest:
    """Describes one split; feature/caption paths are relative to the manifest."""

    split: str
    features: str
    captions: str
    images: int
    captions_per_image: int

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps({
            "split": self.split,
            "features": self.features,
            "captions": self.captions,
            "images": self.images,
            "captions_per_image": self.captions_per_image,
        }, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ValueError(f"manifest {path}: invalid JSON ({err})") from None
        missing = {"split", "features", "captions", "images",
                   "captions_per_image"} - raw.keys()
        if missing:
            raise ValueError(f"manifest {path}: missing keys {sorted(missing)}")
        return cls(raw["split"], raw["features"], raw["captions"],
                   int(raw["images"]), int(raw["captions_per_image"]))


class Dataset:
    """One loaded split: region features per image, captions, derived pairs."""

    def __init__(self, split: str, images: dict[int, np.ndarray],
                 captions: list[tuple[int, int, list[str]]], vocab: Vocabulary):
        self.split = split
        self.images = images
        self.captions = captions
        self.vocab = vocab
        self.pairs = [
            InstancePair(image_id, caption_id, images[image_id],
                         vocab.encode(tokens))
            for caption_id, image_id, tokens in captions
        ]

    @property
    def image_ids(self) -> list[int]:
        return sorted(self.images)

    def captions_of(self, image_id: int) -> list[int]:
        """Positions in self.captions belonging to one image."""
        return [i for i, (_, img, _) in enumerate(self.captions) if img == image_id]


# ---------------------------------------------------------------------------
# region feature binary format

def write_features(path, features: dict[int, np.ndarray]) -> None:
    """magic, version u32, image count u64, then per image:
    image_id u64, M u32, F u32, M*F float32 row-major."""
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<I", FEATURES_VERSION))
        fh.write(struct.pack("<Q", len(features)))
        for image_id in sorted(features):
            arr = np.ascontiguousarray(features[image_id], dtype=np.float32)
            if arr.ndim != 2:
                raise ValueError(f"image {image_id}: features must be rank-2")
            m, f = arr.shape
            fh.write(struct.pack("<QII", image_id, m, f))
            fh.write(arr.tobytes())


def read_features(path) -> dict[int, np.ndarray]:
    """Read the RGFT file back as float64 arrays."""
    def take(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise ValueError(f"feature file {path}: truncated while reading {what}")
        return buf

    out: dict[int, np.ndarray] = {}
    with open(path, "rb") as fh:
        if take(fh, 4, "magic") != FEATURES_MAGIC:
            raise ValueError(f"feature file {path}: bad magic")
        (version,) = struct.unpack("<I", take(fh, 4, "version"))
        if version != FEATURES_VERSION:
            raise ValueError(f"feature file {path}: unsupported version {version}")
        (count,) = struct.unpack("<Q", take(fh, 8, "image count"))
        for _ in range(count):
            image_id, m, f = struct.unpack("<QII", take(fh, 16, "image header"))
            raw = take(fh, 4 * m * f, f"image {image_id} values")
            arr = np.frombuffer(raw, dtype="<f4").reshape(m, f)
            out[image_id] = arr.astype(np.float64)
        if fh.read(1):
            raise ValueError(f"feature file {path}: trailing bytes")
    return out


# ---------------------------------------------------------------------------
# captions

def write_captions_jsonl(path, captions) -> None:
    """One object per line: image_id, caption_id, tokens (strings)."""
    with open(path, "w") as fh:
        for caption_id, image_id, tokens in captions:
            fh.write(json.dumps({"image_id": image_id, "caption_id": caption_id,
                                 "tokens": tokens}) + "\n")


def read_captions_jsonl(path) -> list[tuple[int, int, list[str]]]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"caption file {path}, line {lineno}: "
                                 f"invalid JSON ({err.msg})") from None
            try:
                image_id = int(obj["image_id"])
                caption_id = int(obj["caption_id"])
                tokens = list(obj["tokens"])
            except (KeyError, TypeError) as err:
                raise ValueError(f"caption file {path}, line {lineno}: "
                                 f"missing or malformed field ({err})") from None
            if not tokens or not all(isinstance(t, str) for t in tokens):
                raise ValueError(f"caption file {path}, line {lineno}: tokens must "
                                 "be a non-empty list of strings")
            out.append((caption_id, image_id, tokens))
    if not out:
        raise ValueError(f"caption file {path}: no captions")
    return out


def load_dataset(manifest, vocab: Vocabulary | None = None) -> Dataset:
    """Load a split; builds the vocabulary from its captions unless given one
    (pass the training vocabulary when loading val/test splits)."""
    if not isinstance(manifest, DatasetManifest):
        manifest_path = Path(manifest)
        base = manifest_path.parent
        manifest = DatasetManifest.load(manifest_path)
    else:
        base = Path(".")
    features = read_features(base / manifest.features)
    captions = read_captions_jsonl(base / manifest.captions)
    caption_images = {img for _, img, _ in captions}
    orphan_captions = caption_images - features.keys()
    if orphan_captions:
        raise ValueError(f"split {manifest.split}: captions reference images "
                         f"without features: {sorted(orphan_captions)[:5]}")
    uncaptioned = features.keys() - caption_images
    if uncaptioned:
        raise ValueError(f"split {manifest.split}: images without captions: "
                         f"{sorted(uncaptioned)[:5]}")
    if vocab is None:
        vocab = Vocabulary.build(tokens for _, _, tokens in captions)
    return Dataset(manifest.split, features, captions, vocab)


# ---------------------------------------------------------------------------
# synthetic paired data

def _split_sizes(n_pairs: int) -> tuple[int, int, int]:
    # roughly 4:1:1; n_pairs=96 gives the canonical 64/16/16
    train = max(2, (2 * n_pairs) // 3)
    val = max(1, (n_pairs - train) // 2)
    test = n_pairs - train - val
    if test < 1:
        raise ValueError(f"n_pairs={n_pairs} too small to split")
    return train, val, test


def generate_synthetic(out_dir, n_pairs: int = 96, m: int = 6, f: int = 64,
                       l: int = 6, vocab: int = 60, noise: float = 0.03,
                       separation: float = 2.5,
                       seed: int = 7) -> tuple[Path, Path, Path]:
    """Write train/val/test splits of paired data under ``out_dir``.

    Each pair shares a latent z of dimension l. Region features are fixed
    random projections of z plus per-region Gaussian noise; caption token t
    is the quantile bucket of z[t] + noise, offset into a per-position
    vocabulary block. Latents are rejection-sampled to keep every pair of
    them at least ``separation`` apart and every pair of captions distinct
    in at least two token positions, so no two items in the dataset are
    ambiguous in either modality at the default noise level; val and test
    latents are further redrawn until their captions only use tokens that
    occur in the training captions, so out-of-vocabulary fallback never
    confounds retrieval on the generated sets. Splits are disjoint by pair.
    Returns the three manifest paths.
    """
    if n_pairs < 4:
        raise ValueError(f"need n_pairs >= 4, got {n_pairs}")
    if m < 1 or f < 1 or l < 1:
        raise ValueError("m, f, l must all be >= 1")
    if vocab < 2 * l:
        raise ValueError(f"vocab={vocab} too small for {l} token positions "
                         "(need at least 2 buckets each)")
    if noise < 0.0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    if separation < 0.0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    projections = rng.normal(size=(m, f, l)) / np.sqrt(l)
    buckets = vocab // l
    # equal-occupancy bucket edges under the standard normal latent
    edges = norm.ppf(np.arange(1, buckets) / buckets)

    accepted: list[np.ndarray] = []
    codes: list[list[str]] = []
    train_tokens: set[str] = set()

    def draw_pair(check_coverage: bool) -> tuple[np.ndarray, list[str]]:
        for _ in range(10_000):
            z = rng.normal(size=l)
            if any(np.linalg.norm(z - prev) < separation for prev in accepted):
                continue
            jittered = z + noise * rng.normal(size=l)
            tokens = [f"w{pos * buckets + int(np.searchsorted(edges, zv)):03d}"
                      for pos, zv in enumerate(jittered)]
            if any(sum(a != b for a, b in zip(tokens, prev)) < 2
                   for prev in codes):
                continue
            if check_coverage and not train_tokens.issuperset(tokens):
                continue
            accepted.append(z)
            codes.append(tokens)
            return z, tokens
        raise ValueError(f"could not place {n_pairs} latents with pairwise "
                         f"separation {separation} in {l} dimensions")

    sizes = _split_sizes(n_pairs)
    manifests = []
    next_id = 0
    for split, size in zip(("train", "val", "test"), sizes):
        features: dict[int, np.ndarray] = {}
        captions = []
        for _ in range(size):
            pair_id = next_id
            next_id += 1
            z, tokens = draw_pair(check_coverage=split != "train")
            if split == "train":
                train_tokens.update(tokens)
            regions = projections @ z + noise * rng.normal(size=(m, f))
            features[pair_id] = regions
            captions.append((pair_id, pair_id, tokens))
        write_features(out_dir / f"{split}.features.rgft", features)
        write_captions_jsonl(out_dir / f"{split}.captions.jsonl", captions)
        manifest = DatasetManifest(split, f"{split}.features.rgft",
                                   f"{split}.captions.jsonl", size, 1)
        manifest_path = out_dir / f"{split}.manifest.json"
        manifest.save(manifest_path)
        manifests.append(manifest_path)
    return tuple(manifests)
