"""End-to-end helpers shared by the command line and the benchmark harness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import MultiSourceDataset, SceneSet
from .evalkit import evaluate, nms, sliding_window_detect
from .model import TaCnnModel, forward
from .spv import SpvModel, build_spv_model
from .trainer import (MiningConfig, SeedScorer, TrainConfig, algorithm1_train, mine_hard_negatives, mined_dataset,
                      spv_inputs, standardize_patches, train_seed_scorer)


@dataclass(frozen=True)
class DetectConfig:
    stride: int = 8
    nms_overlap: float = 0.5
    prune_threshold: float | None = None  # seed-scorer probability; None scores every window
    reasonable: bool = True


def p_split(dataset: MultiSourceDataset):
    pos = [i for i, (s, lab) in enumerate(zip(dataset.sources, dataset.labels)) if s == "P" and lab.bits[0] == 1]
    neg = [i for i, (s, lab) in enumerate(zip(dataset.sources, dataset.labels))
           if s == "P" and lab.mask[0] and lab.bits[0] == 0]
    return pos, neg


def build_spv(dataset: MultiSourceDataset, seed=0, standardize=True) -> SpvModel:
    pos, neg = p_split(dataset)
    return build_spv_model(dataset.patches[pos], dataset.patches[neg], seed=seed, standardize=standardize)


def fit_seed_scorer(dataset: MultiSourceDataset, cfg: MiningConfig, seed=0) -> SeedScorer:
    pos, neg = p_split(dataset)
    idx = pos + neg
    y = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return train_seed_scorer(dataset.patches[idx], y, cfg.seed_epochs, cfg.seed_lr, seed=[seed, 404])


def add_mined_negatives(dataset: MultiSourceDataset, scorer, scenes: SceneSet, cfg: MiningConfig):
    if not cfg.enabled or not scenes.images:
        return dataset, []
    mined = mine_hard_negatives(scorer, scenes.images, scenes.ids, scenes.truths, cfg,
                                window=dataset.patches.shape[2:])
    extra = mined_dataset(mined)
    return (dataset.concat(extra) if len(extra) else dataset), mined


def score_function(model: TaCnnModel, spv: SpvModel | None):
    """Window stack -> main-task logit (monotone in the pedestrian posterior)."""
    def score(crops):
        z = spv_inputs(crops, spv, model.arch)
        pred, _ = forward(model, standardize_patches(crops), z)
        return pred.logits[:, 0]
    return score


def detect(model, spv, scenes: SceneSet, cfg: DetectConfig = DetectConfig(), scorer=None):
    score = score_function(model, spv)
    dets = []
    for img, image_id in zip(scenes.images, scenes.ids):
        raw = sliding_window_detect(score, img, image_id, (model.arch.height, model.arch.width), cfg.stride,
                                    prune_fn=scorer, prune_threshold=cfg.prune_threshold if scorer else None)
        dets.extend(nms(raw, cfg.nms_overlap))
    return dets


def evaluate_model(model, spv, scenes: SceneSet, cfg: DetectConfig = DetectConfig(), scorer=None):
    """Returns ``(lamr, curve, detections)`` on the scene set."""
    dets = detect(model, spv, scenes, cfg, scorer)
    lamr, curve, _ = evaluate(dets, scenes.truths, scenes.ids, reasonable=cfg.reasonable)
    return lamr, curve, dets


def train_full(dataset, cfg: TrainConfig, mining_scenes: SceneSet | None = None, spv: SpvModel | None = None,
               scorer: SeedScorer | None = None, on_epoch=None):
    """Mining (optional), SPV (if enabled) and the alternating training loop."""
    if cfg.use_spv and spv is None:
        spv = build_spv(dataset, cfg.seed)
    if cfg.mining.enabled and mining_scenes is not None:
        if scorer is None:
            scorer = fit_seed_scorer(dataset, cfg.mining, cfg.seed)
        dataset, _ = add_mined_negatives(dataset, scorer, mining_scenes, cfg.mining)
    model, coeffs, run = algorithm1_train(dataset, cfg, spv if cfg.use_spv else None, on_epoch=on_epoch)
    return model, coeffs, run, (spv if cfg.use_spv else None)
