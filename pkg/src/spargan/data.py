"""Synthetic multimodal world: caption prototypes, a hidden renderer, splits.

Each class owns a prototype vector in caption space.  A caption is the
prototype plus Gaussian noise; an image is a fixed random two-layer tanh
map of the sample's first caption plus pixel noise.  Random streams are
keyed by ``(seed, purpose, class id, ...)`` so every class can be generated
independently and in any order.
"""
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

# stream purposes
_PROTOTYPES, _RENDERER, _SAMPLES, _NSHOT, _HOLDOUT = range(5)
SPLIT_NAMES = ("train_base", "train_novel", "test")


def stream(*key):
    """Independent generator for an integer key tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    num_base_classes: int = 40
    num_novel_classes: int = 10
    caption_dim: int = 16
    image_dim: int = 64
    captions_per_image: int = 10
    caption_noise: float = 0.3
    image_noise: float = 0.05
    samples_per_base_class: int = 30
    samples_per_novel_train: int = 20
    samples_per_novel_test: int = 20

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                if not 0 <= v < 2**64:
                    raise ValueError(f"seed: must be an unsigned 64-bit integer, got {v}")
            elif f.name.endswith("noise"):
                if v < 0:
                    raise ValueError(f"{f.name}: must be >= 0, got {v}")
            elif v < 1:
                raise ValueError(f"{f.name}: must be positive, got {v}")

    @property
    def num_classes(self):
        return self.num_base_classes + self.num_novel_classes

    @property
    def base_classes(self):
        return list(range(self.num_base_classes))

    @property
    def novel_classes(self):
        return list(range(self.num_base_classes, self.num_classes))


@dataclass
class World:
    config: WorldConfig
    prototypes: np.ndarray      # (num_classes, caption_dim)
    render_w1: np.ndarray       # (caption_dim, 2 * image_dim)
    render_w2: np.ndarray       # (2 * image_dim, image_dim)

    def render(self, captions):
        """Noise-free image for each row of ``captions``; values in (-1, 1)."""
        return np.tanh(np.tanh(np.atleast_2d(captions) @ self.render_w1) @ self.render_w2)


@dataclass
class Sample:
    id: int
    label: int
    image: np.ndarray
    captions: np.ndarray


@dataclass
class Samples:
    """Column store of samples; row ``i`` is one (image, captions, label)."""

    ids: np.ndarray        # (n,) int64
    labels: np.ndarray     # (n,) int64
    images: np.ndarray     # (n, image_dim)
    captions: np.ndarray   # (n, m, caption_dim)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return Sample(int(self.ids[i]), int(self.labels[i]), self.images[i], self.captions[i])

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Samples(self.ids[index], self.labels[index], self.images[index], self.captions[index])

    def of_class(self, c):
        return self.subset(np.flatnonzero(self.labels == c))

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        return Samples(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.captions for p in parts]),
        )

    @staticmethod
    def empty(image_dim, m, caption_dim):
        return Samples(np.zeros(0, np.int64), np.zeros(0, np.int64),
                       np.zeros((0, image_dim)), np.zeros((0, m, caption_dim)))


@dataclass
class DatasetSplit:
    config: WorldConfig
    train_base: Samples
    train_novel: Samples
    test: Samples
    n_shot: int | None = None

    def all_samples(self):
        return Samples.concat([self.train_base, self.train_novel, self.test])


def make_world(config):
    """Deterministic world for ``config``: prototypes and renderer weights."""
    c = config
    protos = stream(c.seed, _PROTOTYPES).standard_normal((c.num_classes, c.caption_dim))
    r = stream(c.seed, _RENDERER)
    hidden = 2 * c.image_dim
    w1 = r.standard_normal((c.caption_dim, hidden)) / np.sqrt(c.caption_dim)
    w2 = r.standard_normal((hidden, c.image_dim)) / np.sqrt(hidden)
    return World(c, protos, w1, w2)


def _draw_class(world, label, count, key):
    c = world.config
    rng = stream(c.seed, *key)
    captions = world.prototypes[label] + c.caption_noise * rng.standard_normal(
        (count, c.captions_per_image, c.caption_dim))
    pix = rng.standard_normal((count, c.image_dim))
    images = np.clip(world.render(captions[:, 0, :]) + c.image_noise * pix, -1.0, 1.0)
    return captions, images


def _build(world, plan, first_id=0):
    c = world.config
    ids, labels, images, captions = [], [], [], []
    next_id = first_id
    for label, count, key in plan:
        cap, img = _draw_class(world, label, count, key)
        ids.append(np.arange(next_id, next_id + count))
        labels.append(np.full(count, label))
        images.append(img)
        captions.append(cap)
        next_id += count
    if not plan:
        return Samples.empty(c.image_dim, c.captions_per_image, c.caption_dim)
    return Samples(np.concatenate(ids).astype(np.int64), np.concatenate(labels).astype(np.int64),
                   np.concatenate(images), np.concatenate(captions))


def sample_dataset(world):
    """Base training, novel training and novel test samples with unique ids."""
    c = world.config
    base = _build(world, [(k, c.samples_per_base_class, (_SAMPLES, k, 0)) for k in c.base_classes])
    novel = _build(world, [(k, c.samples_per_novel_train, (_SAMPLES, k, 1)) for k in c.novel_classes],
                   first_id=len(base))
    test = _build(world, [(k, c.samples_per_novel_test, (_SAMPLES, k, 2)) for k in c.novel_classes],
                  first_id=len(base) + len(novel))
    return DatasetSplit(c, base, novel, test)


def sample_holdout(world, classes, per_class, tag=0):
    """Extra samples outside every split, for held-out checks.

    Ids are negative so they can never collide with split ids.
    """
    s = _build(world, [(k, per_class, (_HOLDOUT, k, tag)) for k in classes])
    s.ids = -1 - s.ids
    return s


def nshot_view(split, n, seed):
    """Keep ``n`` training samples per novel class, chosen by ``seed``."""
    cap = split.config.samples_per_novel_train
    if not 1 <= n <= cap:
        raise ValueError(f"n_shot must lie in [1, {cap}], got {n}")
    keep = []
    for c in split.config.novel_classes:
        rows = np.flatnonzero(split.train_novel.labels == c)
        if len(rows) < n:
            raise ValueError(f"class {c} has {len(rows)} training samples, fewer than n_shot={n}")
        chosen = stream(seed, _NSHOT, c).choice(len(rows), size=n, replace=False)
        keep.append(rows[np.sort(chosen)])
    return DatasetSplit(split.config, split.train_base, split.train_novel.subset(np.concatenate(keep)),
                        split.test, n_shot=n)


# ------------------------------------------------------------------ JSON I/O

def dataset_to_json(world, split):
    """Canonical JSON text; floats use repr so they round-trip exactly."""
    doc = {
        "config": asdict(world.config),
        "classes": [{"id": i, "prototype": p.tolist()} for i, p in enumerate(world.prototypes)],
        "samples": [],
    }
    for name in SPLIT_NAMES:
        part = getattr(split, name)
        for i in range(len(part)):
            doc["samples"].append({
                "id": int(part.ids[i]),
                "split": name,
                "label": int(part.labels[i]),
                "image": part.images[i].tolist(),
                "captions": part.captions[i].tolist(),
            })
    return json.dumps(doc, separators=(",", ":"))


class DatasetFormatError(ValueError):
    pass


def dataset_from_json(text):
    """Inverse of :func:`dataset_to_json`; returns ``(world, split)``."""
    try:
        doc = json.loads(text)
        config = WorldConfig(**doc["config"])
        world = make_world(config)
        protos = np.array([c["prototype"] for c in sorted(doc["classes"], key=lambda c: c["id"])])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed dataset document: {exc}") from exc
    if protos.shape != world.prototypes.shape or not np.array_equal(protos, world.prototypes):
        raise DatasetFormatError("class prototypes do not match the world regenerated from config.seed")
    parts = {}
    for name in SPLIT_NAMES:
        rows = [s for s in doc["samples"] if s.get("split") == name]
        try:
            parts[name] = Samples(
                np.array([s["id"] for s in rows], dtype=np.int64),
                np.array([s["label"] for s in rows], dtype=np.int64),
                np.array([s["image"] for s in rows], dtype=np.float64).reshape(len(rows), config.image_dim),
                np.array([s["captions"] for s in rows], dtype=np.float64).reshape(
                    len(rows), config.captions_per_image, config.caption_dim),
            )
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"malformed {name} samples: {exc}") from exc
    if sum(len(p) for p in parts.values()) != len(doc["samples"]):
        raise DatasetFormatError("samples carry unknown split names")
    return world, DatasetSplit(config, parts["train_base"], parts["train_novel"], parts["test"])
