"""Seeded synthetic ablation benchmark: the stage ladder evaluated by LAMR."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import SyntheticConfig, gen_scenes, gen_synthetic_multisource
from .pipeline import DetectConfig, add_mined_negatives, build_spv, evaluate_model, fit_seed_scorer
from .trainer import ABLATION_STAGES, TrainConfig, algorithm1_train, stage_config


@dataclass
class SeedResult:
    seed: int
    lamr: dict = field(default_factory=dict)  # stage -> percent
    seconds: float = 0.0
    n_mined: int = 0


def run_seed(seed, stages=tuple(ABLATION_STAGES), data_cfg: SyntheticConfig | None = None,
             train_cfg: TrainConfig | None = None, detect_cfg: DetectConfig = DetectConfig(), log=None) -> SeedResult:
    """Generate one seeded benchmark and train and evaluate every stage on it.

    Mining and the SPV model are shared by all stages of a seed.
    """
    t0 = time.perf_counter()
    dcfg = data_cfg if data_cfg is not None else SyntheticConfig(seed=seed)
    base = train_cfg if train_cfg is not None else TrainConfig(seed=seed)
    data = gen_synthetic_multisource(dcfg)
    scenes, mining = gen_scenes(dcfg, "scene"), gen_scenes(dcfg, "mine")
    spv = build_spv(data, seed)  # from the generated set, before mining, as the command line does
    scorer = fit_seed_scorer(data, base.mining, seed)
    data, mined = add_mined_negatives(data, scorer, mining, base.mining)
    out = SeedResult(seed, n_mined=len(mined))
    for stage in stages:
        cfg = stage_config(base, stage)
        model, _, _ = algorithm1_train(data, cfg, spv if cfg.use_spv else None)
        out.lamr[stage], _, _ = evaluate_model(model, spv if cfg.use_spv else None, scenes, detect_cfg)
        if log is not None:
            log(f"seed {seed} {stage}: LAMR {out.lamr[stage]:.2f}%")
    out.seconds = time.perf_counter() - t0
    return out


@dataclass
class AblationSummary:
    medians: dict
    full_beats_main: bool
    transitions_ok: list  # one flag per consecutive stage pair

    @property
    def passed(self):
        return self.full_beats_main and sum(self.transitions_ok) >= len(self.transitions_ok) - 1


def summarize(results, stages=tuple(ABLATION_STAGES)) -> AblationSummary:
    """Median LAMR per stage, full vs main-only, and no-worse checks per transition."""
    med = {s: float(np.median([r.lamr[s] for r in results])) for s in stages}
    ok = [med[b] <= med[a] for a, b in zip(stages, stages[1:])]
    return AblationSummary(med, med[stages[-1]] < med[stages[0]], ok)
