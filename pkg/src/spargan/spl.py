"""Discriminator adaptation, initialization and the self-paced loop.

The pretrained discriminator's class head is swapped for a fresh head over
the novel classes (D').  D' is first finetuned on the few real novel
samples, then repeatedly: for every novel class the generator proposes
candidates from that class's captions, D' ranks them by the softmax
probability of the class, the top K join the generated pool, and D' (and
optionally G) train on real plus generated samples.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tcgan
from .data import Samples, stream

_ADAPT_STREAM = 20
_INIT_FT_STREAM = 21
_CANDIDATE_STREAM = 22
_SPL_TRAIN_STREAM = 23


@dataclass(frozen=True)
class SplConfig:
    iterations: int = 30
    top_k: int = 1
    epochs_per_iteration: int = 10
    init_epochs: int = 20
    lr_d: float = 1e-3
    momentum: float = 0.5
    batch_size: int = 32
    lr_g: float = 2e-5
    update_g: bool = True
    candidates_per_caption: int = 3

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError(f"top_k: must be >= 1, got {self.top_k}")
        if self.iterations < 1:
            raise ValueError(f"iterations: must be >= 1, got {self.iterations}")
        for k in ("epochs_per_iteration", "init_epochs", "batch_size", "candidates_per_caption"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k}: must be positive, got {getattr(self, k)}")
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("lr_d, lr_g: must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum: must lie in [0, 1), got {self.momentum}")


# ---------------------------------------------------------------- D -> D'

TRUNK_KEYS = ("d.w0", "d.b0", "d.w1", "d.b1", "d.w2", "d.b2")


def adapt_discriminator(D, num_novel, seed):
    """Copy trunk and realism head; new class head of width ``num_novel``."""
    if num_novel < 2:
        raise ValueError(f"need at least two novel classes, got {num_novel}")
    feat = D["cls.w"].shape[0]
    rng = stream(seed, _ADAPT_STREAM)
    params = {k: v.copy() for k, v in D.params.items() if not k.startswith("cls.")}
    params["cls.w"] = rng.standard_normal((feat, num_novel)) / math.sqrt(feat)
    params["cls.b"] = np.zeros(num_novel)
    return ad.ParamSet(params)


def classifier_step(Dp, images, labels, cfg):
    """One SGD-momentum cross-entropy step on every D' parameter."""
    tape = ad.Tape()
    d = tcgan.leaves(tape, Dp, True)
    loss = ad.softmax_cross_entropy(tcgan.class_logits_of(d, tape.constant(images)), labels)
    grads = ad.backward(tape, loss)
    ad.sgd_momentum_step(Dp, grads, cfg.lr_d, cfg.momentum)
    return float(loss.value)


def train_classifier(Dp, samples, label_offset, epochs, cfg, rng):
    if len(samples) == 0:
        raise ValueError("no training samples")
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            losses.append(classifier_step(Dp, samples.images[rows], samples.labels[rows] - label_offset, cfg))
    return losses


def init_finetune(Dp, pool, novel_classes, cfg, seed):
    """Finetune D' on the real n-shot pool (the Initialization model)."""
    for c in novel_classes:
        if not np.any(pool.labels == c):
            raise ValueError(f"novel class {c} has no training sample")
    train_classifier(Dp, pool, novel_classes[0], cfg.init_epochs, cfg, stream(seed, _INIT_FT_STREAM))
    return Dp


# ---------------------------------------------------------------- candidates

@dataclass
class Candidate:
    image: np.ndarray
    label: int
    caption_id: int
    caption: np.ndarray
    score: float = float("nan")


def generate_candidates(G, c, captions, per_caption, rng):
    """``per_caption`` generated images for every caption of class ``c``."""
    captions = np.asarray(captions, dtype=np.float64)
    if captions.ndim != 2 or len(captions) == 0:
        raise ValueError("need a non-empty (n, d_t) caption array")
    noise_dim = G["g.w0"].shape[0] - captions.shape[1]
    caps = np.repeat(captions, per_caption, axis=0)
    ids = np.repeat(np.arange(len(captions)), per_caption)
    images = tcgan.generate(G, caps, rng.standard_normal((len(caps), noise_dim)))
    return [Candidate(images[i], int(c), int(ids[i]), caps[i]) for i in range(len(caps))]


def score_candidates(Dp, candidates, label_offset):
    """Softmax probability of each candidate's own class under D'."""
    if not candidates:
        return np.zeros(0)
    probs = tcgan.class_probs(Dp, np.stack([k.image for k in candidates]))
    cols = np.array([k.label - label_offset for k in candidates])
    return probs[np.arange(len(candidates)), cols]


def rank_order(scores):
    """Indices by descending score; equal scores keep ascending index."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def rank_candidates(Dp, candidates, label_offset):
    """Score candidates (stored on each) and return them best-first."""
    labels = {k.label for k in candidates}
    if len(labels) > 1:
        raise ValueError(f"rank_candidates needs one class per call, got {sorted(labels)}")
    scores = score_candidates(Dp, candidates, label_offset)
    for k, s in zip(candidates, scores):
        k.score = float(s)
    return [candidates[i] for i in rank_order(scores)]


def select_top_k(ranked, k):
    if k > len(ranked):
        raise ValueError(f"top_k={k} exceeds the {len(ranked)} ranked candidates")
    return list(ranked[:k])


# ---------------------------------------------------------------- SPL state

@dataclass
class SplState:
    Dp: ad.ParamSet
    G: ad.ParamSet
    real_pool: Samples
    novel_classes: list
    seed: int
    generated: Samples = None
    iteration: int = 0
    history: list = field(default_factory=list)
    candidates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generated is None:
            _, m, dt = self.real_pool.captions.shape
            self.generated = Samples.empty(self.real_pool.images.shape[1], m, dt)

    @property
    def label_offset(self):
        return self.novel_classes[0]


def _as_samples(selected, m, next_id):
    """Generated images as samples whose captions all repeat the source caption."""
    return Samples(
        np.arange(next_id, next_id + len(selected), dtype=np.int64),
        np.array([k.label for k in selected], dtype=np.int64),
        np.stack([k.image for k in selected]),
        np.stack([np.repeat(k.caption[None, :], m, axis=0) for k in selected]),
    )


def propose(state, cfg):
    """Generate and rank candidates for each novel class (no mutation of pools)."""
    ranked = {}
    for c in state.novel_classes:
        rng = stream(state.seed, _CANDIDATE_STREAM, state.iteration, c)
        caps = state.real_pool.of_class(c).captions.reshape(-1, state.real_pool.captions.shape[2])
        cands = generate_candidates(state.G, c, caps, cfg.candidates_per_caption, rng)
        ranked[c] = rank_candidates(state.Dp, cands, state.label_offset)
    return ranked


def spl_iteration(state, cfg, gan_cfg=None, test=None):
    """One outer iteration: rank, select top-K per class, retrain.

    ``gan_cfg`` supplies the loss weights for G updates; ``test`` (optional)
    is evaluated and appended to ``state.history``.
    """
    gan_cfg = gan_cfg or tcgan.GanTrainConfig()
    ranked = propose(state, cfg)
    state.candidates = ranked
    selected = [k for c in state.novel_classes for k in select_top_k(ranked[c], cfg.top_k)]
    m = state.real_pool.captions.shape[1]
    new = _as_samples(selected, m, -(len(state.generated) + len(selected)))
    state.generated = Samples.concat([state.generated, new]) if len(state.generated) else new

    pool = Samples.concat([state.real_pool, state.generated])
    rng = stream(state.seed, _SPL_TRAIN_STREAM, state.iteration)
    g_cfg = tcgan.GanTrainConfig(lr_g=cfg.lr_g, lambda_mismatch=gan_cfg.lambda_mismatch,
                                 lambda_class=gan_cfg.lambda_class)
    noise_dim = state.G["g.w0"].shape[0] - pool.captions.shape[2]
    for _ in range(cfg.epochs_per_iteration):
        order = rng.permutation(len(pool))
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            classifier_step(state.Dp, pool.images[rows], pool.labels[rows] - state.label_offset, cfg)
            if cfg.update_g:
                batch = tcgan.draw_batch(pool, rows, state.label_offset, noise_dim, rng)
                tcgan.g_step(state.Dp, state.G, batch, g_cfg)
    state.iteration += 1
    row = {"iteration": state.iteration, "generated": len(state.generated)}
    if test is not None:
        row.update(evaluate(state.Dp, test, state.label_offset))
    state.history.append(row)
    return state


def evaluate(Dp, test, label_offset, ks=(1, 3, 5)):
    from .metrics import topk_accuracy
    logits = tcgan.class_logits(Dp, test.images)
    # k is capped at the class count so tiny worlds still report every key
    return {f"top{k}": topk_accuracy(logits, test.labels - label_offset, min(k, logits.shape[1])) for k in ks}


def run_spl(G, Dp, real_pool, novel_classes, cfg, seed, test=None, gan_cfg=None):
    """Run ``cfg.iterations`` SPL iterations; returns the final state.

    The caller's parameter sets are copied, never mutated.
    """
    G = G.copy()
    G.reset_slots()
    Dp = Dp.copy()
    Dp.reset_slots()
    state = SplState(Dp, G, real_pool, list(novel_classes), seed)
    for _ in range(cfg.iterations):
        spl_iteration(state, cfg, gan_cfg, test)
    return state
