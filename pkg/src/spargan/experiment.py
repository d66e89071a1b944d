"""Ablation grid driver and CSV writers shared by the CLI and the tests."""
import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics, tcgan
from .data import make_world, sample_dataset, sample_holdout

ABLATION_HEADER = ("arm", "n", "seed", "top1", "top3", "top5")
EVOLUTION_HEADER = ("iteration", "top1", "top5")
CHUNK_HEADER = ("chunk", "top1", "top5", "quality")
PRETRAIN_HEADER = ("epoch", "loss_d", "loss_g", "base_top1")


def grid_threads():
    raw = os.environ.get("SPARGAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SPARGAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"SPARGAN_THREADS must be a positive integer, got {raw!r}")
    return n


def _cell(args):
    return metrics.run_cell(*args[:7], arms=args[7], oracle=args[8], gan_cfg=args[9])


def run_grid(split, G, D, T, cfg, oracle=None, threads=1):
    """Run every (n, seed) cell; results come back in canonical order."""
    jobs = [(split, G, D, T, n, seed, cfg.spl, cfg.arms, oracle, cfg.train)
            for n in cfg.n_shots for seed in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    return [(n, seed, r) for (_, _, _, _, n, seed, *_), r in zip(jobs, results)]


@dataclass
class GridSummary:
    records: list
    evolution: dict          # arm -> list of (iteration, top1, top5) seed means
    chunks: list             # rows (chunk, top1, top5, quality), seed means
    init_top1: float
    init_top5: float


def summarize(grid, arms):
    records = sorted((r for _, _, res in grid for r in res.records),
                     key=lambda r: (metrics.ARMS.index(r.arm), r.n, r.seed))
    n_min = min(n for n, _, _ in grid)
    first = [res for n, _, res in grid if n == n_min]
    evolution = {}
    for arm in ("SPL-D'G", "SPL-D'"):
        if arm not in arms:
            continue
        hist = np.array([[[h["top1"], h["top5"]] for h in res.evolution[arm]] for res in first])
        mean = hist.mean(axis=0)
        evolution[arm] = [(i + 1, float(t1), float(t5)) for i, (t1, t5) in enumerate(mean)]
    chunk_sets = [res.chunks for n, _, res in grid if n == 1 and res.chunks]
    chunks = []
    if chunk_sets:
        arr = np.array([[[c.top1, c.top5, c.quality] for c in cs] for cs in chunk_sets]).mean(axis=0)
        chunks = [(j + 1, float(a), float(b), float(q)) for j, (a, b, q) in enumerate(arr)]
    init1 = float(np.mean([res.init_eval["top1"] for res in first]))
    init5 = float(np.mean([res.init_eval["top5"] for res in first]))
    return GridSummary(records, evolution, chunks, init1, init5)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def ablation_csv(records):
    return csv_text(ABLATION_HEADER, [(r.arm, r.n, r.seed, r.top1, r.top3, r.top5) for r in records])


def evolution_csv(rows):
    return csv_text(EVOLUTION_HEADER, rows)


def chunk_csv(rows):
    return csv_text(CHUNK_HEADER, rows)


def pretrain_csv(log):
    return csv_text(PRETRAIN_HEADER, [(r["epoch"], r["loss_d"], r["loss_g"], r["base_top1"]) for r in log])


# ---------------------------------------------------------------- protocol

@dataclass
class SeedRun:
    seed: int
    cell: metrics.CellResult
    oracle_top1: float
    pretrain_log: list
    generation_accuracy: float
    base_heldout_top1: float
    split: object = None
    G: object = None
    D: object = None


def conditional_generation_accuracy(G, oracle, world, classes, per_class, seed):
    """Share of generations the oracle assigns to their conditioning class."""
    from .data import stream
    rng = stream(seed, 40)
    caps, labels = [], []
    for c in classes:
        caps.append(world.prototypes[c] + world.config.caption_noise
                    * rng.standard_normal((per_class, world.config.caption_dim)))
        labels += [c] * per_class
    caps = np.concatenate(caps)
    images = tcgan.generate(G, caps, rng.standard_normal((len(caps), G["g.w0"].shape[0] - caps.shape[1])))
    return metrics.topk_accuracy(oracle.logits(images), np.array(labels), 1)


def run_seed(world_cfg, cfg, seed, n=1):
    """Full pipeline for one seed: world, pretraining, baseline, oracle, one cell.

    The seed drives everything, including the world itself.
    """
    from dataclasses import replace
    world = make_world(replace(world_cfg, seed=seed))
    split = sample_dataset(world)
    G, D, log = tcgan.pretrain_representation(split.train_base, world.config, cfg.gan, cfg.train, seed)
    T = metrics.pretrain_baseline_classifier(split.train_base, world.config, cfg.gan, cfg.train, seed)
    oracle = metrics.train_quality_oracle(split, seed, epochs=cfg.oracle_epochs)
    gen_acc = conditional_generation_accuracy(G, oracle, world, world.config.base_classes, 10, seed)
    base_acc = tcgan.class_accuracy(D, sample_holdout(world, world.config.base_classes, 10))
    cell = metrics.run_cell(split, G, D, T, n, seed, cfg.spl, arms=cfg.arms, oracle=oracle, gan_cfg=cfg.train)
    return SeedRun(seed, cell, oracle.heldout_top1, log, gen_acc, base_acc, split, G, D)
