"""Evaluation: top-k accuracy, the oracle-based inception-score analog,
ranked-chunk analysis and the four-arm ablation."""
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import spl, tcgan
from ._kernels import softmax_rows
from .data import Samples, nshot_view, stream

ARMS = ("Finetuning", "Initialization", "SPL-D'", "SPL-D'G")
_ORACLE_STREAM = 30
_BASELINE_STREAM = 31


def topk_accuracy(logits, labels, k):
    """Fraction of rows whose label is among the ``k`` largest logits.

    Equal logits rank by ascending class id.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("need a non-empty (n, C) logit array")
    if not 1 <= k <= logits.shape[1]:
        raise ValueError(f"k must lie in [1, {logits.shape[1]}], got {k}")
    mine = logits[np.arange(len(labels)), labels][:, None]
    cls = np.arange(logits.shape[1])[None, :]
    ahead = (logits > mine) | ((logits == mine) & (cls < labels[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))


# ---------------------------------------------------------------- oracle

class OracleFloorError(RuntimeError):
    def __init__(self, achieved, floor):
        self.achieved = achieved
        self.floor = floor
        super().__init__(f"quality oracle reached {achieved:.4f} held-out top-1, below the {floor} floor; "
                         "review the world's noise levels")


@dataclass
class QualityOracle:
    params: ad.ParamSet
    heldout_top1: float

    def logits(self, images):
        tape = ad.Tape()
        p = tcgan.leaves(tape, self.params, False)
        h = ad.leaky_relu(ad.add_bias(ad.matmul(tape.constant(np.atleast_2d(images)), p["w0"]), p["b0"]), 0.0)
        return ad.add_bias(ad.matmul(h, p["w1"]), p["b1"]).value

    def probs(self, images):
        return softmax_rows(np.ascontiguousarray(self.logits(images)))


def train_quality_oracle(split, seed, epochs=60, hidden=128, lr=1e-3, batch_size=32, floor=0.95):
    """Image-only MLP over all classes, trained on every training sample.

    The novel test split is the held-out set.
    """
    train = Samples.concat([split.train_base, split.train_novel])
    c = split.config.num_classes
    rng = stream(seed, _ORACLE_STREAM)
    d_i = train.images.shape[1]
    params = ad.ParamSet({
        "w0": rng.standard_normal((d_i, hidden)) / math.sqrt(d_i), "b0": np.zeros(hidden),
        "w1": rng.standard_normal((hidden, c)) / math.sqrt(hidden), "b1": np.zeros(c),
    })
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            rows = order[start:start + batch_size]
            tape = ad.Tape()
            p = tcgan.leaves(tape, params, True)
            h = ad.leaky_relu(ad.add_bias(ad.matmul(tape.constant(train.images[rows]), p["w0"]), p["b0"]), 0.0)
            loss = ad.softmax_cross_entropy(ad.add_bias(ad.matmul(h, p["w1"]), p["b1"]), train.labels[rows])
            ad.adam_step(params, ad.backward(tape, loss), lr)
    oracle = QualityOracle(params, 0.0)
    oracle.heldout_top1 = topk_accuracy(oracle.logits(split.test.images), split.test.labels, 1)
    if oracle.heldout_top1 < floor:
        raise OracleFloorError(oracle.heldout_top1, floor)
    return oracle


def quality_from_probs(p):
    """exp(mean KL(p(y|x) || p(y))) over the rows of ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("need at least one image")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def quality_score(images, oracle):
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if images.shape[0] == 0:
        raise ValueError("quality_score needs at least one image")
    return quality_from_probs(oracle.probs(images))


# ---------------------------------------------------------------- chunks

@dataclass
class ChunkReport:
    chunk: int
    top1: float
    top5: float
    quality: float


def chunk_analysis(ranked_by_class, Dp, oracle, label_offset, chunk_size=3, num_chunks=10):
    """Accuracy of D' and oracle quality per rank chunk, pooled over classes.

    ``ranked_by_class`` maps class id to its candidates, best first.
    """
    expected = chunk_size * num_chunks
    for c, ranked in ranked_by_class.items():
        if len(ranked) != expected:
            raise ValueError(f"class {c}: expected {expected} ranked candidates, got {len(ranked)}")
    reports = []
    for j in range(num_chunks):
        members = [k for ranked in ranked_by_class.values() for k in ranked[j * chunk_size:(j + 1) * chunk_size]]
        images = np.stack([k.image for k in members])
        labels = np.array([k.label for k in members]) - label_offset
        logits = tcgan.class_logits(Dp, images)
        k5 = min(5, logits.shape[1])
        reports.append(ChunkReport(j + 1, topk_accuracy(logits, labels, 1), topk_accuracy(logits, labels, k5),
                                   quality_score(images, oracle)))
    return reports


def chunk_partition(num_candidates, chunk_size=3):
    return [list(range(s, min(s + chunk_size, num_candidates))) for s in range(0, num_candidates, chunk_size)]


# ---------------------------------------------------------------- ablation

@dataclass
class MetricsRecord:
    arm: str
    n: int
    seed: int
    top1: float
    top3: float
    top5: float

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}")
        for k in ("top1", "top3", "top5"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} outside [0, 1]")


def pretrain_baseline_classifier(base, world_cfg, gan_cfg, train_cfg, seed):
    """Classifier with D's architecture trained on base classes only.

    Same optimizer, batch size and epoch count as adversarial pretraining,
    but only the class head loss.
    """
    rng = stream(seed, _BASELINE_STREAM)
    T = tcgan.init_discriminator(world_cfg.caption_dim, world_cfg.image_dim, world_cfg.num_base_classes,
                                 gan_cfg, rng)
    for _ in range(train_cfg.epochs):
        order = rng.permutation(len(base))
        for start in range(0, len(order), train_cfg.batch_size):
            rows = order[start:start + train_cfg.batch_size]
            tape = ad.Tape()
            d = tcgan.leaves(tape, T, True)
            loss = ad.softmax_cross_entropy(tcgan.class_logits_of(d, tape.constant(base.images[rows])),
                                            base.labels[rows])
            ad.adam_step(T, ad.backward(tape, loss), train_cfg.lr_d)
    return T


@dataclass
class CellResult:
    records: list
    evolution: dict          # arm -> list of per-iteration rows
    chunks: list             # ChunkReport list from iteration-1 candidates
    init_eval: dict


def run_cell(split, G, D, T, n, seed, spl_cfg, arms=ARMS, oracle=None, gan_cfg=None):
    """All requested arms for one (n, seed) cell of the ablation grid."""
    view = nshot_view(split, n, seed)
    novel = split.config.novel_classes
    off = novel[0]
    records, evolution, chunks = [], {}, []

    def record(arm, ev):
        records.append(MetricsRecord(arm, n, seed, ev["top1"], ev["top3"], ev["top5"]))

    if "Finetuning" in arms:
        Tp = spl.init_finetune(spl.adapt_discriminator(T, len(novel), seed), view.train_novel, novel, spl_cfg, seed)
        record("Finetuning", spl.evaluate(Tp, split.test, off))
    Dp = spl.init_finetune(spl.adapt_discriminator(D, len(novel), seed), view.train_novel, novel, spl_cfg, seed)
    init_eval = spl.evaluate(Dp, split.test, off)
    if "Initialization" in arms:
        record("Initialization", init_eval)
    if oracle is not None and n == 1:
        ranked = spl.propose(spl.SplState(Dp, G, view.train_novel, novel, seed), spl_cfg)
        per_class = len(ranked[novel[0]])
        # the default world yields 30 candidates per class, i.e. 10 chunks of 3
        if per_class % 3 == 0:
            chunks = chunk_analysis(ranked, Dp, oracle, off, chunk_size=3, num_chunks=per_class // 3)
    for arm, update_g in (("SPL-D'", False), ("SPL-D'G", True)):
        if arm not in arms:
            continue
        cfg = _replace(spl_cfg, update_g=update_g)
        state = spl.run_spl(G, Dp, view.train_novel, novel, cfg, seed, test=split.test, gan_cfg=gan_cfg)
        evolution[arm] = state.history
        record(arm, state.history[-1])
    return CellResult(records, evolution, chunks, init_eval)


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)
