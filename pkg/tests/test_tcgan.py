import math

import numpy as np
import pytest

from spargan import autodiff as ad
from spargan import tcgan
from spargan.data import WorldConfig, make_world, sample_dataset, stream
from gradcheck import max_rel_error

SMALL = WorldConfig(seed=1, num_base_classes=6, num_novel_classes=3, caption_dim=4, image_dim=6,
                    captions_per_image=3, samples_per_base_class=8, samples_per_novel_train=4,
                    samples_per_novel_test=4)
SMALL_GAN = tcgan.GanConfig(hidden=10, noise_dim=3, feature_dim=7)


@pytest.fixture(scope="module")
def small():
    w = make_world(SMALL)
    return w, sample_dataset(w)


def models(seed=0, world=SMALL, gan=SMALL_GAN, classes=None):
    rng = np.random.default_rng(seed)
    G = tcgan.init_generator(world.caption_dim, world.image_dim, gan, rng)
    D = tcgan.init_discriminator(world.caption_dim, world.image_dim, classes or world.num_base_classes, gan, rng)
    return G, D


def zeroed(ps):
    return ad.ParamSet({k: np.zeros_like(v) for k, v in ps.params.items()})


def batch_from(split, rows, seed=0, noise_dim=SMALL_GAN.noise_dim):
    return tcgan.draw_batch(split.train_base, rows, 0, noise_dim, np.random.default_rng(seed))


# ------------------------------------------------------------- forward passes

def test_generator_output_bounds_and_determinism():
    G, _ = models()
    rng = np.random.default_rng(1)
    cap, z = rng.normal(size=4) * 10, rng.normal(size=3) * 10
    a = tcgan.generator_forward(G, cap, z)
    assert a.shape == (6,) and np.all(np.abs(a) < 1)
    assert a.tobytes() == tcgan.generator_forward(G, cap, z).tobytes()


def test_generator_zero_weights_give_zero_image():
    G, _ = models()
    np.testing.assert_array_equal(tcgan.generator_forward(zeroed(G), np.ones(4), np.ones(3)), np.zeros(6))


def test_generator_rejects_wrong_noise_width():
    G, _ = models()
    with pytest.raises(ValueError, match="z"):
        tcgan.generator_forward(G, np.ones(4), np.ones(5))


def test_discriminator_zero_weights():
    _, D = models()
    s, logits = tcgan.discriminator_forward(zeroed(D), np.ones(6), np.ones(4))
    assert s == 0.5
    np.testing.assert_array_equal(logits, np.zeros(6))


def test_discriminator_outputs_finite_and_normalisable():
    _, D = models()
    rng = np.random.default_rng(2)
    s, logits = tcgan.discriminator_outputs(D, rng.normal(size=(5, 6)) * 3, rng.normal(size=(5, 4)) * 3)
    assert np.all((s > 0) & (s < 1)) and np.isfinite(logits).all()
    np.testing.assert_allclose(tcgan.class_probs(D, rng.normal(size=(5, 6))).sum(axis=1), 1.0, atol=1e-12)


def test_discriminator_rejects_dim_mismatch():
    _, D = models()
    with pytest.raises(ValueError):
        tcgan.discriminator_forward(D, np.ones(5), np.ones(4))


def test_class_head_ignores_caption():
    _, D = models()
    img = np.random.default_rng(3).normal(size=(2, 6))
    _, a = tcgan.discriminator_outputs(D, img, np.zeros((2, 4)))
    _, b = tcgan.discriminator_outputs(D, img, np.full((2, 4), 9.0))
    assert a.tobytes() == b.tobytes()


# ------------------------------------------------------------- losses

def test_zero_discriminator_loss_constant():
    world = WorldConfig(seed=0, num_base_classes=40, samples_per_base_class=2, samples_per_novel_train=1,
                        samples_per_novel_test=1)
    split = sample_dataset(make_world(world))
    G, D = models(world=world, gan=tcgan.GanConfig())
    batch = tcgan.draw_batch(split.train_base, np.arange(24), 0, 8, np.random.default_rng(0))
    res = tcgan.loss_discriminator(zeroed(D), G, batch, tcgan.GanTrainConfig())
    assert abs(res.value - (3 * math.log(2) + math.log(40))) < 1e-9
    assert abs(res.value - 5.7683) < 1e-4
    gres = tcgan.loss_generator(zeroed(D), G, batch, tcgan.GanTrainConfig())
    assert abs(gres.value - (math.log(2) + math.log(40))) < 1e-9


def test_degenerate_weights_reduce_to_two_term_loss(small):
    _, split = small
    G, D = models()
    batch = batch_from(split, np.arange(10))
    cfg = tcgan.GanTrainConfig(lambda_mismatch=0.0, lambda_class=0.0)
    res = tcgan.loss_discriminator(D, G, batch, cfg)
    assert abs(res.value - (res.parts["real"] + res.parts["fake"])) < 1e-12
    g = tcgan.loss_generator(D, G, batch, cfg)
    assert abs(g.value - g.parts["realism"]) < 1e-12


def test_discriminator_loss_equals_independent_terms(small):
    _, split = small
    G, D = models(4)
    batch = batch_from(split, np.arange(12), seed=5)
    cfg = tcgan.GanTrainConfig(lambda_mismatch=0.7, lambda_class=1.3)
    res = tcgan.loss_discriminator(D, G, batch, cfg)

    fake = tcgan.generate(G, batch.captions, batch.z)

    def bce_of(images, captions, target):
        s, _ = tcgan.discriminator_outputs(D, images, captions)
        tape = ad.Tape()
        return float(ad.binary_cross_entropy(tape.constant(s), target).value)

    _, logits = tcgan.discriminator_outputs(D, batch.images, batch.captions)
    tape = ad.Tape()
    ce = float(ad.softmax_cross_entropy(tape.constant(logits), batch.labels).value)
    expected = (bce_of(batch.images, batch.captions, 1.0) + bce_of(fake, batch.captions, 0.0)
                + 0.7 * bce_of(batch.images, batch.mismatched, 0.0) + 1.3 * ce)
    assert abs(res.value - expected) < 1e-12


def test_generator_loss_equals_independent_terms(small):
    _, split = small
    G, D = models(6)
    batch = batch_from(split, np.arange(9), seed=2)
    res = tcgan.loss_generator(D, G, batch, tcgan.GanTrainConfig(lambda_class=0.5))
    fake = tcgan.generate(G, batch.captions, batch.z)
    s, _ = tcgan.discriminator_outputs(D, fake, batch.captions)
    _, logits = tcgan.discriminator_outputs(D, fake, batch.captions)
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    expected = np.mean(-np.log(s)) + 0.5 * np.mean(-np.log(p[np.arange(9), batch.labels]))
    assert abs(res.value - expected) < 1e-12


def test_mismatched_captions_come_from_other_classes(small):
    _, split = small
    rng = np.random.default_rng(0)
    batch = tcgan.draw_batch(split.train_base, np.arange(48), 0, 3, rng)
    caps = split.train_base.captions.reshape(-1, 4)
    owners = np.repeat(split.train_base.labels, 3)
    for mis, label in zip(batch.mismatched, batch.labels):
        hits = owners[np.all(caps == mis, axis=1)]
        assert len(hits) and np.all(hits != label)


def test_empty_batch_rejected(small):
    _, split = small
    with pytest.raises(ValueError, match="empty"):
        batch_from(split, np.arange(0))


def _fd(fn, ps, h=1e-5):
    out = {}
    for k, v in ps.params.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + h
            up = fn()
            v[idx] = old - h
            down = fn()
            v[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def test_discriminator_loss_gradient_matches_finite_differences(small):
    _, split = small
    G, D = models(8)
    batch = batch_from(split, np.arange(6), seed=1)
    cfg = tcgan.GanTrainConfig()
    analytic = tcgan.loss_discriminator(D, G, batch, cfg, want_grads=True).grads
    numeric = _fd(lambda: tcgan.loss_discriminator(D, G, batch, cfg).value, D)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_generator_loss_gradient_matches_finite_differences(small):
    _, split = small
    G, D = models(9)
    batch = batch_from(split, np.arange(6), seed=3)
    cfg = tcgan.GanTrainConfig()
    analytic = tcgan.loss_generator(D, G, batch, cfg, want_grads=True).grads
    numeric = _fd(lambda: tcgan.loss_generator(D, G, batch, cfg).value, G)
    assert max_rel_error(analytic, numeric) < 1e-4


# ------------------------------------------------------------- alternation

def test_alternation_purity(small):
    _, split = small
    G, D = models(1)
    cfg = tcgan.GanTrainConfig()
    batch = batch_from(split, np.arange(8))
    g_before = {k: v.tobytes() for k, v in G.params.items()}
    tcgan.d_step(D, G, batch, cfg)
    assert {k: v.tobytes() for k, v in G.params.items()} == g_before
    d_before = {k: v.tobytes() for k, v in D.params.items()}
    tcgan.g_step(D, G, batch, cfg)
    assert {k: v.tobytes() for k, v in D.params.items()} == d_before
    assert {k: v.tobytes() for k, v in G.params.items()} != g_before


# ------------------------------------------------------------- pretraining

def test_untrained_class_head_is_near_chance():
    w = make_world(WorldConfig(seed=2))
    split = sample_dataset(w)
    accs = []
    for seed in range(3):
        st = tcgan.init_pretrain(w.config, tcgan.GanConfig(), seed)
        accs.append(tcgan.class_accuracy(st.D, split.train_base))
    assert abs(np.mean(accs) - 1 / 40) <= 0.05


def test_pretrain_log_length_and_finiteness(small):
    _, split = small
    cfg = tcgan.GanTrainConfig(epochs=4)
    G, D, log = tcgan.pretrain_representation(split.train_base, SMALL, SMALL_GAN, cfg, seed=0)
    assert len(log) == 4
    assert [r["epoch"] for r in log] == [1, 2, 3, 4]
    assert all(np.isfinite([r["loss_d"], r["loss_g"]]).all() for r in log)
    assert D["cls.w"].shape[1] == SMALL.num_base_classes


def test_pretrain_is_deterministic(small):
    _, split = small
    cfg = tcgan.GanTrainConfig(epochs=2)
    a = tcgan.pretrain_representation(split.train_base, SMALL, SMALL_GAN, cfg, seed=3)
    b = tcgan.pretrain_representation(split.train_base, SMALL, SMALL_GAN, cfg, seed=3)
    for x, y in zip(a[:2], b[:2]):
        assert all(x[k].tobytes() == y[k].tobytes() for k in x.params)
    assert a[2] == b[2]


def test_checkpoint_resume_is_bit_exact(small):
    _, split = small
    cfg = tcgan.GanTrainConfig(epochs=5)
    G, D, log = tcgan.pretrain_representation(split.train_base, SMALL, SMALL_GAN, cfg, seed=7)

    saved = {}
    half = tcgan.GanTrainConfig(epochs=2)
    tcgan.pretrain_representation(split.train_base, SMALL, SMALL_GAN, half, seed=7,
                                  on_epoch=lambda st: saved.update(text=tcgan.checkpoint_to_json(st, {})))
    state, _ = tcgan.checkpoint_from_json(saved["text"])
    assert state.epoch == 2
    G2, D2, log2 = tcgan.pretrain_representation(split.train_base, SMALL, SMALL_GAN, cfg, seed=7, state=state)
    for k in G.params:
        assert G[k].tobytes() == G2[k].tobytes()
    for k in D.params:
        assert D[k].tobytes() == D2[k].tobytes()
    assert log == log2


def test_checkpoint_rejects_garbage():
    with pytest.raises(tcgan.CheckpointError):
        tcgan.checkpoint_from_json('{"format_version": 1}')
    with pytest.raises(tcgan.CheckpointError, match="version"):
        tcgan.checkpoint_from_json('{"format_version": 99}')


def test_discriminator_loss_falls_over_first_epochs():
    w = make_world(WorldConfig(seed=0))
    split = sample_dataset(w)
    drops = []
    for seed in range(3):
        st = tcgan.init_pretrain(w.config, tcgan.GanConfig(), seed)
        rng = stream(seed, 99)
        probe = tcgan.draw_batch(split.train_base, rng.permutation(len(split.train_base))[:240], 0, 8, rng)
        start = tcgan.loss_discriminator(st.D, st.G, probe, tcgan.GanTrainConfig()).value
        rows = [tcgan.pretrain_epoch(st, split.train_base, 8, tcgan.GanTrainConfig()) for _ in range(10)]
        drops.append(start - np.mean([r["loss_d"] for r in rows]))
    assert np.mean(drops) > 0
