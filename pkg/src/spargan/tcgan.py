"""Text-conditioned GAN with an auxiliary classifier head.

Generator: MLP over ``[caption, z]`` with ReLU hidden layers and a tanh
output.  Discriminator: a shared leaky-ReLU trunk over ``[image, caption]``
feeding a realism (source) head and a class head.

The class head always sees the image with an all-zero caption.  Test images
come without text, and a caption alone identifies its class, so classifying
with the caption would be trivial.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet
from .data import stream

LEAK = 0.2
_PRETRAIN_STREAM = 10
_INIT_STREAM = 11
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GanConfig:
    hidden: int = 128
    noise_dim: int = 8
    feature_dim: int = 64

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 1:
                raise ValueError(f"{k}: must be positive, got {v}")


@dataclass(frozen=True)
class GanTrainConfig:
    epochs: int = 300
    batch_size: int = 24
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lambda_mismatch: float = 1.0
    lambda_class: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size: must be positive, got {self.batch_size}")
        for k in ("lr_g", "lr_d"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k}: must be positive, got {getattr(self, k)}")
        for k in ("lambda_mismatch", "lambda_class"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k}: must be >= 0, got {getattr(self, k)}")


# ---------------------------------------------------------------- parameters

def _dense(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in), np.zeros(fan_out)


def init_generator(caption_dim, image_dim, cfg, rng):
    dims = [caption_dim + cfg.noise_dim, cfg.hidden, cfg.hidden, image_dim]
    params = {}
    for i in range(3):
        params[f"g.w{i}"], params[f"g.b{i}"] = _dense(rng, dims[i], dims[i + 1])
    return ParamSet(params)


def init_discriminator(caption_dim, image_dim, num_classes, cfg, rng):
    dims = [image_dim + caption_dim, cfg.hidden, cfg.hidden, cfg.feature_dim]
    params = {}
    for i in range(3):
        params[f"d.w{i}"], params[f"d.b{i}"] = _dense(rng, dims[i], dims[i + 1])
    params["src.w"], params["src.b"] = _dense(rng, cfg.feature_dim, 1)
    params["cls.w"], params["cls.b"] = _dense(rng, cfg.feature_dim, num_classes)
    return ParamSet(params)


def leaves(tape, params, trainable):
    """Put a ParamSet on ``tape``; differentiable only if ``trainable``."""
    if trainable:
        return {k: tape.param(k, v) for k, v in params.params.items()}
    return {k: tape.constant(v) for k, v in params.params.items()}


# ---------------------------------------------------------------- graphs

def generator_graph(g, captions, z):
    """``captions`` and ``z`` are tensors of shape (B, d_t) and (B, d_z)."""
    h = ad.concat([captions, z], axis=-1)
    h = ad.leaky_relu(ad.add_bias(ad.matmul(h, g["g.w0"]), g["g.b0"]), 0.0)
    h = ad.leaky_relu(ad.add_bias(ad.matmul(h, g["g.w1"]), g["g.b1"]), 0.0)
    return ad.tanh(ad.add_bias(ad.matmul(h, g["g.w2"]), g["g.b2"]))


def trunk_graph(d, images, captions):
    h = ad.concat([images, captions], axis=-1)
    for i in range(3):
        h = ad.leaky_relu(ad.add_bias(ad.matmul(h, d[f"d.w{i}"]), d[f"d.b{i}"]), LEAK)
    return h


def source_logit_graph(d, features):
    return ad.add_bias(ad.matmul(features, d["src.w"]), d["src.b"])


def class_logit_graph(d, features):
    return ad.add_bias(ad.matmul(features, d["cls.w"]), d["cls.b"])


def class_logits_of(d, images):
    """Class-head logits for image tensors, caption slot zeroed."""
    tape = images.tape
    b = images.shape[0]
    cap_dim = d["d.w0"].shape[0] - images.shape[1]
    return class_logit_graph(d, trunk_graph(d, images, tape.constant(np.zeros((b, cap_dim)))))


# ---------------------------------------------------------------- inference

def _check_dims(name, arr, width):
    if arr.shape[-1] != width:
        raise ValueError(f"{name}: expected last dimension {width}, got {arr.shape[-1]}")


def generate(G, captions, z):
    """Images for rows of ``captions`` and ``z``; each value in (-1, 1)."""
    captions = np.atleast_2d(np.asarray(captions, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    noise_dim = G["g.w0"].shape[0] - captions.shape[1]
    if noise_dim <= 0:
        raise ValueError(f"caption: width {captions.shape[1]} does not fit generator input {G['g.w0'].shape[0]}")
    _check_dims("z", z, noise_dim)
    if captions.shape[0] != z.shape[0]:
        raise ValueError(f"caption/z batch mismatch: {captions.shape[0]} vs {z.shape[0]}")
    tape = ad.Tape()
    return generator_graph(leaves(tape, G, False), tape.constant(captions), tape.constant(z)).value


def generator_forward(G, caption, z):
    """Single image from one caption vector and one noise vector."""
    return generate(G, np.asarray(caption, dtype=np.float64)[None, :], np.asarray(z, dtype=np.float64)[None, :])[0]


def discriminator_outputs(D, images, captions):
    """``(source probabilities (B,), class logits (B, C))`` for a batch.

    The realism head sees the given captions; the class head sees zeros.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    captions = np.atleast_2d(np.asarray(captions, dtype=np.float64))
    _check_dims("image+caption", np.zeros(images.shape[1] + captions.shape[1]), D["d.w0"].shape[0])
    tape = ad.Tape()
    d = leaves(tape, D, False)
    src = source_logit_graph(d, trunk_graph(d, tape.constant(images), tape.constant(captions)))
    logits = class_logits_of(d, tape.constant(images))
    return 1.0 / (1.0 + np.exp(-src.value[:, 0])), logits.value


def discriminator_forward(D, image, caption):
    s, logits = discriminator_outputs(D, np.asarray(image)[None, :], np.asarray(caption)[None, :])
    return float(s[0]), logits[0]


def class_logits(D, images):
    tape = ad.Tape()
    return class_logits_of(leaves(tape, D, False), tape.constant(np.atleast_2d(images))).value


def class_probs(D, images):
    from ._kernels import softmax_rows
    return softmax_rows(np.ascontiguousarray(class_logits(D, images)))


# ---------------------------------------------------------------- batches

@dataclass
class GanBatch:
    """One step's inputs: real triples plus the random draws the losses use."""

    images: np.ndarray          # (B, d_i)
    captions: np.ndarray        # (B, d_t) one caption per real sample
    labels: np.ndarray          # (B,) class-head targets
    z: np.ndarray               # (B, d_z)
    mismatched: np.ndarray      # (B, d_t) caption of a different class


def draw_batch(samples, rows, label_offset, noise_dim, rng, mismatch_pool=None):
    """Assemble a :class:`GanBatch` from ``samples`` rows.

    One of each sample's captions is picked at random.  Mismatched captions
    come from ``mismatch_pool`` (default ``samples``) restricted to other
    classes.
    """
    rows = np.asarray(rows)
    if rows.size == 0:
        raise ValueError("empty batch")
    pool = samples if mismatch_pool is None else mismatch_pool
    m = samples.captions.shape[1]
    b = len(rows)
    labels = samples.labels[rows]
    caps = samples.captions[rows, rng.integers(0, m, size=b)]
    z = rng.standard_normal((b, noise_dim))
    pick = rng.integers(0, len(pool), size=b)
    bad = pool.labels[pick] == labels
    while bad.any():
        if len(np.unique(pool.labels)) < 2:
            raise ValueError("mismatched captions need at least two classes")
        pick[bad] = rng.integers(0, len(pool), size=int(bad.sum()))
        bad = pool.labels[pick] == labels
    mis = pool.captions[pick, rng.integers(0, m, size=b)]
    return GanBatch(samples.images[rows], caps, labels - label_offset, z, mis)


# ---------------------------------------------------------------- losses

@dataclass
class LossResult:
    value: float
    parts: dict
    grads: dict = field(default_factory=dict)


def _discriminator_terms(d, batch, fake, cfg):
    tape = next(iter(d.values())).tape
    b = len(batch.labels)
    imgs = np.concatenate([batch.images, fake, batch.images])
    caps = np.concatenate([batch.captions, batch.captions, batch.mismatched])
    src = source_logit_graph(d, trunk_graph(d, tape.constant(imgs), tape.constant(caps)))
    parts = {
        "real": ad.sigmoid_bce(ad.take_rows(src, 0, b), 1.0),
        "fake": ad.sigmoid_bce(ad.take_rows(src, b, 2 * b), 0.0),
        "mismatch": ad.sigmoid_bce(ad.take_rows(src, 2 * b, 3 * b), 0.0),
        "class": ad.softmax_cross_entropy(class_logits_of(d, tape.constant(batch.images)), batch.labels),
    }
    return parts


def _weighted_sum(tape, parts, weights):
    total = None
    for k, t in parts.items():
        w = weights.get(k, 1.0)
        if w == 0.0:
            continue
        term = t if w == 1.0 else ad.mul(t, tape.constant(np.asarray(w)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        total = tape.constant(np.asarray(0.0))
    return total


def loss_discriminator(D, G, batch, cfg, want_grads=False):
    """Realism + mismatch + class loss for D; G only supplies fakes."""
    if len(batch.labels) == 0:
        raise ValueError("empty batch")
    fake = generate(G, batch.captions, batch.z)
    tape = ad.Tape()
    d = leaves(tape, D, True)
    parts = _discriminator_terms(d, batch, fake, cfg)
    loss = _weighted_sum(tape, parts, {"mismatch": cfg.lambda_mismatch, "class": cfg.lambda_class})
    grads = ad.backward(tape, loss) if want_grads else {}
    return LossResult(float(loss.value), {k: float(v.value) for k, v in parts.items()}, grads)


def loss_generator(D, G, batch, cfg, want_grads=False):
    """Non-saturating realism loss plus class loss on the fakes.

    D enters as constants, so its parameters receive no gradient.
    """
    if len(batch.labels) == 0:
        raise ValueError("empty batch")
    tape = ad.Tape()
    g = leaves(tape, G, True)
    d = leaves(tape, D, False)
    fake = generator_graph(g, tape.constant(batch.captions), tape.constant(batch.z))
    src = source_logit_graph(d, trunk_graph(d, fake, tape.constant(batch.captions)))
    parts = {
        "realism": ad.sigmoid_bce(src, 1.0),
        "class": ad.softmax_cross_entropy(class_logits_of(d, fake), batch.labels),
    }
    loss = _weighted_sum(tape, parts, {"class": cfg.lambda_class})
    grads = ad.backward(tape, loss) if want_grads else {}
    return LossResult(float(loss.value), {k: float(v.value) for k, v in parts.items()}, grads)


def d_step(D, G, batch, cfg):
    res = loss_discriminator(D, G, batch, cfg, want_grads=True)
    ad.adam_step(D, res.grads, cfg.lr_d)
    return res


def g_step(D, G, batch, cfg, lr=None):
    res = loss_generator(D, G, batch, cfg, want_grads=True)
    ad.adam_step(G, res.grads, cfg.lr_g if lr is None else lr)
    return res


def class_accuracy(D, samples, label_offset=0):
    logits = class_logits(D, samples.images)
    return float(np.mean(np.argmax(logits, axis=1) == samples.labels - label_offset))


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainState:
    G: ParamSet
    D: ParamSet
    seed: int
    epoch: int = 0
    log: list = field(default_factory=list)


def init_pretrain(world_cfg, gan_cfg, seed):
    rng = stream(seed, _INIT_STREAM)
    G = init_generator(world_cfg.caption_dim, world_cfg.image_dim, gan_cfg, rng)
    D = init_discriminator(world_cfg.caption_dim, world_cfg.image_dim, world_cfg.num_base_classes, gan_cfg, rng)
    return PretrainState(G, D, seed)


def pretrain_epoch(state, base, noise_dim, cfg):
    """One epoch of alternating D then G Adam steps over shuffled batches."""
    rng = stream(state.seed, _PRETRAIN_STREAM, state.epoch)
    order = rng.permutation(len(base))
    ld, lg = [], []
    for start in range(0, len(order), cfg.batch_size):
        batch = draw_batch(base, order[start:start + cfg.batch_size], 0, noise_dim, rng)
        ld.append(d_step(state.D, state.G, batch, cfg).value)
        lg.append(g_step(state.D, state.G, batch, cfg).value)
    state.epoch += 1
    row = {"epoch": state.epoch, "loss_d": float(np.mean(ld)), "loss_g": float(np.mean(lg)),
           "base_top1": class_accuracy(state.D, base)}
    state.log.append(row)
    return row


def pretrain_representation(base, world_cfg, gan_cfg, train_cfg, seed, state=None, on_epoch=None):
    """Adversarial representation learning on base classes.

    Returns ``(G, D, log)``.  Pass ``state`` to resume; ``on_epoch(state)`` is
    called after every epoch (checkpointing hook).
    """
    if len(base) == 0:
        raise ValueError("base split is empty")
    state = state or init_pretrain(world_cfg, gan_cfg, seed)
    while state.epoch < train_cfg.epochs:
        pretrain_epoch(state, base, gan_cfg.noise_dim, train_cfg)
        if on_epoch is not None:
            on_epoch(state)
    return state.G, state.D, state.log


# ---------------------------------------------------------------- checkpoints

def _tensors(prefix, ps):
    return [{"name": f"{prefix}/{k}", "shape": list(v.shape), "values": v.reshape(-1).tolist()}
            for k, v in ps.params.items()]


def _slots(prefix, ps):
    out = []
    for k, sl in ps.slots.items():
        for s, buf in sorted(sl.items()):
            out.append({"name": f"{prefix}/{k}", "slot": s, "shape": list(buf.shape),
                        "values": buf.reshape(-1).tolist()})
    return out


def checkpoint_to_json(state, config):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": config,
        "tensors": _tensors("G", state.G) + _tensors("D", state.D),
        "optimizer_slots": _slots("G", state.G) + _slots("D", state.D),
        "optimizer_steps": {"G": state.G.step, "D": state.D.step},
        "rng_state": {"seed": state.seed, "epoch": state.epoch},
        "log": state.log,
    }
    return json.dumps(doc, separators=(",", ":"))


class CheckpointError(ValueError):
    pass


def checkpoint_from_json(text):
    """Returns ``(PretrainState, config dict)``."""
    try:
        doc = json.loads(text)
        if doc["format_version"] != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc['format_version']}")
        sets = {"G": {}, "D": {}}
        for t in doc["tensors"]:
            owner, name = t["name"].split("/", 1)
            sets[owner][name] = np.array(t["values"], dtype=np.float64).reshape(t["shape"])
        G, D = ParamSet(sets["G"]), ParamSet(sets["D"])
        for s in doc["optimizer_slots"]:
            owner, name = s["name"].split("/", 1)
            ps = G if owner == "G" else D
            ps.slots[name][s["slot"]] = np.array(s["values"], dtype=np.float64).reshape(s["shape"])
        G.step = doc["optimizer_steps"]["G"]
        D.step = doc["optimizer_steps"]["D"]
        state = PretrainState(G, D, doc["rng_state"]["seed"], doc["rng_state"]["epoch"], doc["log"])
        return state, doc["config"]
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
