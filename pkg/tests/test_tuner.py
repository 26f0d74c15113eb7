from dataclasses import replace

import numpy as np
import pytest

from otpt_lab.errors import EmptyDataset, InvalidSpec
from otpt_lab.model import class_logits, encode_image, encode_text, softmax
from otpt_lab.optim import AdamWConfig
from otpt_lab.tuner import TUNER_METHODS, TunerConfig, augment_views, run_dataset, tune_sample


def same_record(a, b):
    return (np.array_equal(a.probs, b.probs) and a.predicted == b.predicted and a.confidence == b.confidence
            and a.mean_pairwise_cos == b.mean_pairwise_cos and np.array_equal(a.pairwise_cos, b.pairwise_cos))


def test_config_validation():
    for bad in ({"n_views": 0}, {"rho": 0.0}, {"rho": 1.5}, {"mask_fraction": 1.0}, {"method": "nope"},
                {"lambda_ortho": -1.0}, {"noise_sigma": -0.1}):
        with pytest.raises(InvalidSpec):
            TunerConfig(**bad)
    with pytest.raises(InvalidSpec):
        AdamWConfig(lr=-1.0)


def test_augment_views():
    x = np.linspace(-1, 1, 24)
    assert np.array_equal(augment_views(x, TunerConfig(n_views=1), 5), x[None, :])
    flat = augment_views(x, TunerConfig(noise_sigma=0.0, mask_fraction=0.0), 5)
    assert flat.shape == (64, 24) and np.all(flat == x)
    cfg = TunerConfig(noise_sigma=0.0, mask_fraction=0.25)
    v = augment_views(x, cfg, 3)
    assert np.array_equal(v[0], x)
    assert all(int(np.sum(row == 0.0)) == 6 for row in v[1:])  # x has no zero coordinates
    cfg = TunerConfig()
    assert np.array_equal(augment_views(x, cfg, 7), augment_views(x, cfg, 7))
    assert not np.array_equal(augment_views(x, cfg, 7), augment_views(x, cfg, 8))


def test_zeroshot_matches_pipeline(small_ds, base_prompt):
    ds = small_ds
    x, y = ds.samples[0]
    rec = tune_sample(ds.encoder, ds.classes, base_prompt, x, y, TunerConfig(method="zeroshot"))
    E = encode_text(ds.encoder, ds.classes, base_prompt)
    probs = softmax(class_logits(E, encode_image(ds.encoder, x), ds.encoder.logit_scale))
    assert np.array_equal(rec.probs, probs)
    assert rec.predicted == int(np.argmax(probs)) and rec.confidence == float(np.max(probs))
    assert -1 <= rec.mean_pairwise_cos <= 1


def test_reductions(small_ds, base_prompt):
    ds = small_ds
    sub = ds.samples[:8]
    run = lambda cfg: run_dataset(ds.encoder, ds.classes, base_prompt, sub, cfg)
    tpt = run(TunerConfig(method="tpt"))
    for a, b in zip(tpt, run(TunerConfig(method="otpt", lambda_ortho=0.0))):
        assert same_record(a, b)
    for a, b in zip(tpt, run(TunerConfig(method="ctpt", lambda_atfd=0.0))):
        assert same_record(a, b)
    zs = run(TunerConfig(method="zeroshot"))
    frozen = AdamWConfig(lr=0.0, weight_decay=0.0)
    for m in TUNER_METHODS:
        for a, b in zip(zs, run(TunerConfig(method=m, adamw=frozen))):
            assert np.array_equal(a.probs, b.probs)


def test_episodic_reset(small_ds, base_prompt):
    before = base_prompt.context.copy()
    run_dataset(small_ds.encoder, small_ds.classes, base_prompt, small_ds.samples[:4], TunerConfig(method="otpt"))
    assert np.array_equal(base_prompt.context, before)
    assert base_prompt.step_count == 0


def test_order_and_parallel_independence(small_ds, base_prompt):
    ds = small_ds
    cfg = TunerConfig(method="otpt")
    seq = run_dataset(ds.encoder, ds.classes, base_prompt, ds, cfg)
    par = run_dataset(ds.encoder, ds.classes, base_prompt, ds, cfg, workers=8)
    assert all(same_record(a, b) for a, b in zip(seq, par))
    perm = np.random.default_rng(0).permutation(len(ds.samples))
    shuffled = run_dataset(ds.encoder, ds.classes, base_prompt, [ds.samples[i] for i in perm], cfg)
    back = [None] * len(perm)
    for k, i in enumerate(perm):
        back[i] = shuffled[k]
    assert all(same_record(a, b) for a, b in zip(seq, back))


def test_single_sample_and_empty(small_ds, base_prompt):
    ds = small_ds
    cfg = TunerConfig(method="tpt")
    one = run_dataset(ds.encoder, ds.classes, base_prompt, ds.samples[:1], cfg)
    assert len(one) == 1
    with pytest.raises(EmptyDataset):
        run_dataset(ds.encoder, ds.classes, base_prompt, [], cfg)


def test_tuning_moves_prediction(small_ds, base_prompt):
    ds = small_ds
    zs = run_dataset(ds.encoder, ds.classes, base_prompt, ds.samples[:5], TunerConfig(method="zeroshot"))
    tpt = run_dataset(ds.encoder, ds.classes, base_prompt, ds.samples[:5], TunerConfig(method="tpt"))
    assert any(not np.array_equal(a.probs, b.probs) for a, b in zip(zs, tpt))
    assert all(r.loss_breakdown.total != 0.0 for r in tpt)


def test_steps_zero_is_zeroshot(small_ds, base_prompt):
    ds = small_ds
    x, y = ds.samples[3]
    a = tune_sample(ds.encoder, ds.classes, base_prompt, x, y, TunerConfig(method="zeroshot"))
    b = tune_sample(ds.encoder, ds.classes, base_prompt, x, y, replace(TunerConfig(method="otpt"), steps=0))
    assert np.array_equal(a.probs, b.probs)
