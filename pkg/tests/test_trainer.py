from dataclasses import replace

import numpy as np
import pytest

from tacnn.datagen import MultiSourceDataset, SyntheticConfig, gen_synthetic_multisource
from tacnn.evalkit import GroundTruth
from tacnn.model import ArchConfig, TaCnnModel, backward, forward
from tacnn.taskcodec import N_BITS, Coeffs, encode
from tacnn.trainer import (ABLATION_STAGES, MiningConfig, TrainConfig, algorithm1_train, mine_hard_negatives,
                           mined_dataset, restrict, stage_config, standardize_patches, train_epoch,
                           validation_split)

TINY = ArchConfig(height=32, width=16, conv_channels=(2, 3, 3, 2), conv_kernels=(3, 3, 3, 3), fc5=12, hidden=6,
                  spv_dim=5)


@pytest.fixture(scope="module")
def small_data():
    cfg = SyntheticConfig(seed=3, n_pos=30, n_neg=30, n_ba=10, n_bb=10, n_bc=10)
    return gen_synthetic_multisource(cfg)


def fast_cfg(**kw):
    base = dict(epochs=1, outer_iterations=2, rbm_epochs=2, rbm_hidden=8, use_spv=False)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_returns_initialized_model(small_data):
    model, coeffs, run = algorithm1_train(small_data, fast_cfg(epochs=0))
    init = TaCnnModel.init(ArchConfig(), 0)
    assert all(np.array_equal(model.params[k], init.params[k]) for k in init.params)
    assert np.all(coeffs.lam == 1.0) and run.status == "no-training"


def test_zero_lr_leaves_weights_unchanged():
    rng = np.random.default_rng(0)
    m = TaCnnModel.init(TINY, 1)
    before = m.copy()
    x, z = rng.random((6, 1, 32, 16)), rng.normal(size=(6, 5))
    bits, mask = rng.integers(0, 2, (6, N_BITS)).astype(float), np.ones((6, N_BITS))
    train_epoch(m, x, z, bits, mask, Coeffs.ones(), 0.0, seed=0, batch_size=4)
    assert all(np.array_equal(m.params[k], before.params[k]) for k in m.params)


def test_fully_unobserved_batch_only_decays():
    rng = np.random.default_rng(1)
    m = TaCnnModel.init(TINY, 2)
    before = m.copy()
    x, z = rng.random((4, 1, 32, 16)), rng.normal(size=(4, 5))
    lr = 0.1
    train_epoch(m, x, z, np.ones((4, N_BITS)), np.zeros((4, N_BITS)), Coeffs.ones(), lr, seed=0, batch_size=4)
    for k in m.params:
        assert np.allclose(m.params[k], before.params[k] * (1 - 0.001 * lr), rtol=0, atol=1e-15)


def test_main_gradient_ignores_hidden_auxiliary_labels():
    rng = np.random.default_rng(2)
    m = TaCnnModel.init(TINY, 3)
    x, z = rng.random((2, 1, 32, 16)), rng.normal(size=(2, 5))
    pred, cache = forward(m, x, z)
    only_main = encode("P", {"main": 1})
    bits = np.stack([only_main.bits] * 2).astype(float)
    mask = np.stack([only_main.mask] * 2).astype(float)
    noisy = bits.copy()
    noisy[:, 1:] = rng.integers(0, 2, (2, N_BITS - 1))
    lam = Coeffs(rng.uniform(0.1, 3, 18))
    a = backward(m, pred, cache, (bits, mask), Coeffs.ones())
    b = backward(m, pred, cache, (noisy, mask), lam)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_training_is_deterministic(small_data):
    cfg = fast_cfg()
    a = algorithm1_train(small_data, cfg)
    b = algorithm1_train(small_data, cfg)
    assert all(np.array_equal(a[0].params[k], b[0].params[k]) for k in a[0].params)
    assert np.array_equal(a[1].lam, b[1].lam) and a[2].epochs == b[2].epochs
    assert a[2].epoch_csv() == b[2].epoch_csv() and a[2].lambda_csv() == b[2].lambda_csv()


def test_training_keeps_main_lambda_pinned(small_data):
    _, coeffs, run = algorithm1_train(small_data, fast_cfg(early_stop=False))
    assert coeffs.lam[0] == 1.0 and all(l[0] == 1.0 for l in run.lambdas)
    assert len(run.lambdas) == 3 and all(np.isfinite(r[3]) for r in run.epochs)


def test_training_with_spv_requires_model(small_data):
    with pytest.raises(ValueError, match="SPV"):
        algorithm1_train(small_data, fast_cfg(use_spv=True))


def test_restrict_hides_groups_and_sources(small_data):
    main = restrict(small_data, ("main",), ("P",))
    assert set(main.sources) == {"P"} and not main.mask[:, 1:].any()
    shared = restrict(small_data, ("main", "shared"), ("P", "Ba", "Bb", "Bc"))
    assert not shared.mask[:, 1:11].any() and shared.mask[:, 11:15].any() and not shared.mask[:, 15:].any()
    for lab in shared.labels:
        assert not (lab.bits & ~lab.mask.astype(bool)).any()


def test_validation_split_is_stratified(small_data):
    train, val = validation_split(small_data, 0.2, 0)
    assert len(train) + len(val) == len(small_data)
    assert set(val.sources) == {"P"}
    assert sum(lab.bits[0] for lab in val.labels) == 6 and len(val) == 12


def test_ablation_ladder_is_cumulative():
    names = list(ABLATION_STAGES)
    assert names == ["main", "ped", "shared", "unshared", "spv"]
    for a, b in zip(names, names[1:]):
        ca, cb = stage_config(TrainConfig(), a), stage_config(TrainConfig(), b)
        assert set(ca.groups) <= set(cb.groups) and set(ca.sources) <= set(cb.sources)
        assert ca.use_spv <= cb.use_spv
    assert stage_config(TrainConfig(), "spv").use_spv


def test_standardize_patches():
    x = np.random.default_rng(4).random((3, 1, 8, 4)) * 5 + 2
    s = standardize_patches(x)
    assert np.allclose(s.mean(axis=(1, 2, 3)), 0) and np.allclose(s.std(axis=(1, 2, 3)), 1, atol=1e-3)
    assert np.all(standardize_patches(np.ones((1, 1, 4, 4))) == 0)


def _bright_scorer(crops):
    return crops.mean(axis=(1, 2, 3))


def test_mining_examples():
    img = np.zeros((1, 64, 96))
    img[:, :, 64:] = 1.0
    cfg = MiningConfig(threshold=0.5, max_per_image=10, exclusion_iou=0.3, stride=8, nms_overlap=None)
    mined = mine_hard_negatives(_bright_scorer, [img], ["a"], [], cfg)
    assert [m.box for m in mined] == [(64, 0, 32, 64), (56, 0, 32, 64)]  # means 1.0 and 0.75; 0.5 is not above
    assert mine_hard_negatives(_bright_scorer, [img], ["a"], [GroundTruth("a", (60, 0, 32, 64))], cfg) == []
    never = replace(cfg, threshold=np.inf)
    assert mine_hard_negatives(_bright_scorer, [img], ["a"], [], never) == []
    cap = replace(cfg, threshold=-1.0, max_per_image=3)
    assert len(mine_hard_negatives(_bright_scorer, [img], ["a"], [], cap)) == 3
    everything = mine_hard_negatives(_bright_scorer, [img], ["a"], [], replace(cfg, threshold=-1.0, max_per_image=100))
    assert len(everything) == 9 and [m.score for m in everything] == sorted((m.score for m in everything), reverse=True)


def test_mined_dataset_observes_only_main():
    img = np.ones((1, 64, 32))
    mined = mine_hard_negatives(_bright_scorer, [img], ["z"], [], MiningConfig(threshold=0.0))
    ds = mined_dataset(mined)
    assert isinstance(ds, MultiSourceDataset) and ds.ids == ["m-z-0-0"]
    assert ds.labels[0].to_string() == "0" + "x" * 18
    assert len(mined_dataset([])) == 0
