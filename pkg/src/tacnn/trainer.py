"""Alternating training: SGD on the network with coefficients fixed, then a
coefficient update with the network fixed. Also the seed scorer and
hard-negative mining used to enrich the pedestrian-source negatives."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nncore as nn
from .coeffs import CoeffObjectiveCtx, LbfgsConfig, task_nll_from_bits, update_coeffs
from .datagen import MultiSourceDataset
from .evalkit import crop_windows, iou, window_positions
from .model import ArchConfig, TaCnnModel, backward, bit_nll, forward
from .rbm import ProbTable, Rbm, binarize_patches, build_prob_table, cd_train, uniform_table
from .spv import HogParams, SpvModel, hog_extract
from .taskcodec import (DEFAULT_LAYOUT, GROUP_MAIN, GROUP_PED, GROUP_SHARED, GROUP_UNSHARED, N_BITS, Coeffs,
                        LabelVector, TaskLayout, encode, expand_lambda)

log = logging.getLogger(__name__)

ALL_GROUPS = (GROUP_MAIN, GROUP_PED, GROUP_SHARED, GROUP_UNSHARED)


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the last finite model."""

    def __init__(self, msg, model=None, coeffs=None):
        super().__init__(msg)
        self.model = model
        self.coeffs = coeffs


@dataclass(frozen=True)
class MiningConfig:
    threshold: float = 0.5
    max_per_image: int = 10
    exclusion_iou: float = 0.3
    stride: int = 8
    nms_overlap: float | None = 0.5
    seed_epochs: int = 5
    seed_lr: float = 0.05
    enabled: bool = True

    def __post_init__(self):
        if self.max_per_image < 1 or self.stride < 1 or self.seed_epochs < 0:
            raise ValueError("mining caps, stride and epochs must be positive")
        if not 0.0 <= self.exclusion_iou <= 1.0:
            raise ValueError("exclusion IoU must lie in [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4  # per outer iteration (cap for the plateau rule)
    outer_iterations: int = 3
    batch_size: int = 32
    lr: float = 0.05
    lr_decay: float = 0.5
    seed: int = 0
    sigma: float = 1.0
    groups: tuple = ALL_GROUPS
    sources: tuple = ("P", "Ba", "Bb", "Bc")
    use_spv: bool = True
    update_coeffs: bool = True
    rbm_weighting: bool = True
    rbm_hidden: int = 32
    rbm_epochs: int = 30
    rbm_lr: float = 0.05
    plateau_tol: float = 1e-3
    plateau_window: int = 3
    val_fraction: float = 0.1
    early_stop: bool = True
    arch: ArchConfig = field(default_factory=ArchConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)

    def __post_init__(self):
        if min(self.epochs, self.outer_iterations) < 0 or self.batch_size < 1:
            raise ValueError("epoch counts must be >= 0 and batch size >= 1")
        if not self.lr >= 0 or not self.sigma > 0:
            raise ValueError("learning rate must be >= 0 and sigma > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        bad = set(self.groups) - set(ALL_GROUPS)
        if bad or GROUP_MAIN not in self.groups:
            raise ValueError(f"groups must include 'main' and come from {ALL_GROUPS}")


# the cumulative ablation ladder: each stage adds one ingredient
ABLATION_STAGES = {
    "main": dict(groups=(GROUP_MAIN,), sources=("P",), use_spv=False),
    "ped": dict(groups=(GROUP_MAIN, GROUP_PED), sources=("P",), use_spv=False),
    "shared": dict(groups=(GROUP_MAIN, GROUP_PED, GROUP_SHARED), sources=("P", "Ba", "Bb", "Bc"), use_spv=False),
    "unshared": dict(groups=ALL_GROUPS, sources=("P", "Ba", "Bb", "Bc"), use_spv=False),
    "spv": dict(groups=ALL_GROUPS, sources=("P", "Ba", "Bb", "Bc"), use_spv=True),
}


def stage_config(base: TrainConfig, stage: str) -> TrainConfig:
    return replace(base, **ABLATION_STAGES[stage])


# ---------------------------------------------------------------- data prep

def restrict(dataset: MultiSourceDataset, groups, sources, layout: TaskLayout = DEFAULT_LAYOUT):
    """Keep samples of ``sources`` and hide every label outside ``groups``."""
    keep = layout.group_bits(groups).astype(np.uint8)
    idx = [i for i, s in enumerate(dataset.sources) if s in sources]
    labels = []
    for i in idx:
        lab = dataset.labels[i]
        m = lab.mask & keep
        labels.append(LabelVector(lab.bits & m, m))
    return MultiSourceDataset(dataset.patches[idx], [dataset.sources[i] for i in idx], labels,
                              [dataset.ids[i] for i in idx])


def validation_split(dataset: MultiSourceDataset, fraction, seed):
    """Stratified by the main label over P samples; B samples all train."""
    rng = np.random.default_rng([seed, 101])
    val = []
    for y in (0, 1):
        group = [i for i, (s, lab) in enumerate(zip(dataset.sources, dataset.labels))
                 if s == "P" and lab.mask[0] and lab.bits[0] == y]
        n = int(round(fraction * len(group)))
        if n:
            val.extend(int(i) for i in rng.choice(group, size=n, replace=False))
    val = sorted(val)
    vset = set(val)
    train = [i for i in range(len(dataset)) if i not in vset]
    return dataset.subset(train), dataset.subset(val)


def standardize_patches(patches, eps=1e-3):
    """Per-patch zero mean and unit variance, the network's input transform."""
    x = np.asarray(patches, dtype=np.float64)
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    sd = x.std(axis=(1, 2, 3), keepdims=True)
    return (x - mu) / (sd + eps)


def spv_inputs(patches, spv: SpvModel | None, arch: ArchConfig):
    if spv is None:
        return np.zeros((len(patches), arch.spv_dim))
    return spv.features(patches)


# ---------------------------------------------------------------- SGD

def _batch_loss(pred, bits, mask, lam_bits):
    return np.where(mask > 0, bit_nll(pred, bits), 0.0) * lam_bits


def train_epoch(model: TaCnnModel, patches, z, bits, mask, coeffs: Coeffs, lr, seed, batch_size=32,
                state: nn.SgdState | None = None):
    """One seeded pass of minibatch SGD; returns ``(state, mean per-sample loss)``.

    ``model`` is updated in place. Minibatch gradients are batch means.
    """
    n = len(patches)
    if n == 0:
        raise ValueError("empty training set")
    state = state if state is not None else nn.SgdState.zeros_like(model.params, lr)
    state.lr = lr
    lam_bits = expand_lambda(coeffs)
    order = np.random.default_rng(seed).permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        b = order[start:start + batch_size]
        pred, cache = forward(model, patches[b], z[b])
        loss = _batch_loss(pred, bits[b], mask[b], lam_bits).sum()
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at sample offset {start}")
        total += loss
        grads = backward(model, pred, cache, (bits[b], mask[b]), coeffs, scale=1.0 / len(b))
        nn.sgd_step(model.params, grads, state)
    return state, total / n


def predict(model: TaCnnModel, patches, z, batch=256):
    out = [forward(model, patches[i:i + batch], z[i:i + batch])[0] for i in range(0, len(patches), batch)]
    if not out:
        return np.zeros((0, N_BITS)), np.zeros((0, N_BITS))
    return np.concatenate([p.probs for p in out]), np.concatenate([p.logits for p in out])


def _nll_from_logits(logits, bits):
    return bits * np.logaddexp(0.0, -logits) + (1.0 - bits) * np.logaddexp(0.0, logits)


def main_loss(model, patches, z, bits, mask):
    """Mean main-task NLL over samples observing the main bit."""
    if len(patches) == 0:
        return float("nan")
    _, logits = predict(model, patches, z)
    nll = _nll_from_logits(logits[:, 0], bits[:, 0])
    obs = mask[:, 0] > 0
    return float(nll[obs].mean()) if obs.any() else float("nan")


def fill_unobserved(model, patches, z, bits, mask):
    """Complete labels for the RBM: missing bits take the model's thresholded predictions."""
    probs, _ = predict(model, patches, z)
    return np.where(mask > 0, bits, (probs > 0.5).astype(np.float64))


def rbm_visibles(model, patches, z, bits, mask):
    """(x, y) for the joint model: binarized thumbnails and completed label bits."""
    return binarize_patches(patches), fill_unobserved(model, patches, z, bits, mask)


def train_rbm(model, patches, z, bits, mask, cfg: TrainConfig) -> Rbm:
    x, y = rbm_visibles(model, patches, z, bits, mask)
    return cd_train(x, y, cfg.rbm_hidden, cfg.rbm_epochs, cfg.rbm_lr, seed=[cfg.seed, 202])


def build_table(model, patches, z, bits, mask, ids, cfg: TrainConfig, rbm: Rbm | None = None):
    """Per-sample weights; trains the RBM first unless one is supplied. Returns ``(table, rbm)``."""
    if not cfg.rbm_weighting:
        return uniform_table(ids), None
    if rbm is None:
        rbm = train_rbm(model, patches, z, bits, mask, cfg)
    x, y = rbm_visibles(model, patches, z, bits, mask)
    return build_prob_table(rbm, x, y, ids), rbm


def coefficient_step(model, patches, z, bits, mask, weights, coeffs: Coeffs, cfg: TrainConfig,
                     layout: TaskLayout = DEFAULT_LAYOUT):
    """L-BFGS update of the coefficients on the mean per-sample task losses."""
    _, logits = predict(model, patches, z)
    nll = task_nll_from_bits(_nll_from_logits(logits, bits), mask, scale=1.0 / len(patches), layout=layout)
    ctx = CoeffObjectiveCtx(nll, weights, cfg.sigma, layout)
    new, res = update_coeffs(ctx, coeffs, LbfgsConfig())
    return new, res


@dataclass
class RunLog:
    epochs: list = field(default_factory=list)  # (outer, epoch, lr, train_loss, val_loss)
    lambdas: list = field(default_factory=list)  # arrays, one row per coefficient state
    status: str = "not-started"
    best_outer: int = -1
    best_epoch: int = -1  # index into ``epochs`` of the returned model
    objectives: list = field(default_factory=list)  # coefficient objective after each update
    table: ProbTable | None = None
    rbm: Rbm | None = None

    def epoch_csv(self) -> str:
        rows = ["outer,epoch,lr,train_loss,val_loss"]
        rows += [f"{o},{e},{lr!r},{tl!r},{vl!r}" for o, e, lr, tl, vl in self.epochs]
        return "\n".join(rows) + "\n"

    def lambda_csv(self, layout: TaskLayout = DEFAULT_LAYOUT) -> str:
        rows = ["step,objective," + ",".join(t.name for t in layout.tasks)]
        objs = [float("nan")] + list(self.objectives)
        rows += [f"{i},{objs[i]!r}," + ",".join(repr(float(v)) for v in lam) for i, lam in enumerate(self.lambdas)]
        return "\n".join(rows) + "\n"


def _plateaued(losses, tol, window):
    if len(losses) <= window:
        return False
    recent = losses[-window - 1:]
    return all((a - b) / max(abs(a), 1e-12) < tol for a, b in zip(recent, recent[1:]))


def algorithm1_train(dataset: MultiSourceDataset, cfg: TrainConfig, spv: SpvModel | None = None,
                     table: ProbTable | None = None, rbm: Rbm | None = None, on_epoch=None):
    """Train from scratch. Returns ``(model, coeffs, run_log)``.

    The dataset is first restricted to ``cfg.sources`` and ``cfg.groups``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if cfg.use_spv and spv is None:
        raise ValueError("SPV fusion enabled but no SPV model given")
    data = restrict(dataset, cfg.groups, cfg.sources)
    if len(data) == 0:
        raise ValueError("no samples left after source selection")
    train, val = validation_split(data, cfg.val_fraction if cfg.early_stop else 0.0, cfg.seed)
    model = TaCnnModel.init(cfg.arch, cfg.seed)
    coeffs = Coeffs.ones(cfg.sigma)
    run = RunLog(lambdas=[coeffs.lam.copy()])
    if cfg.epochs == 0 or cfg.outer_iterations == 0:
        run.status = "no-training"
        return model, coeffs, run

    sp = spv if cfg.use_spv else None
    z_tr, z_va = spv_inputs(train.patches, sp, cfg.arch), spv_inputs(val.patches, sp, cfg.arch)
    bits, mask = train.bits, train.mask
    vbits, vmask = val.bits, val.mask
    x_tr, x_va = standardize_patches(train.patches), standardize_patches(val.patches)
    if table is None:
        table, rbm = build_table(model, x_tr, z_tr, bits, mask, train.ids, cfg, rbm)
    run.table, run.rbm = table, rbm
    weights = table.weights_for(train.ids)

    # with early stopping the returned model is the epoch of lowest validation main loss
    best, best_val, best_coeffs = model.copy(), np.inf, coeffs
    state = None
    run.status = "completed"
    for outer in range(cfg.outer_iterations):
        lr = cfg.lr * cfg.lr_decay ** outer
        losses = []
        improved = False
        for ep in range(cfg.epochs):
            snapshot = model.copy()
            try:
                state, loss = train_epoch(model, x_tr, z_tr, bits, mask, coeffs, lr,
                                          seed=[cfg.seed, 303, outer, ep], batch_size=cfg.batch_size, state=state)
            except (TrainingDiverged, FloatingPointError) as exc:
                raise TrainingDiverged(f"diverged in outer iteration {outer}, epoch {ep}: {exc}",
                                       snapshot, coeffs) from exc
            vl = main_loss(model, x_va, z_va, vbits, vmask)
            run.epochs.append((outer, ep, lr, float(loss), vl))
            if on_epoch is not None:
                on_epoch(run.epochs[-1])
            if np.isfinite(vl) and vl < best_val:
                best, best_val, best_coeffs = model.copy(), vl, coeffs
                run.best_outer, run.best_epoch, improved = outer, len(run.epochs) - 1, True
            losses.append(loss)
            if _plateaued(losses, cfg.plateau_tol, cfg.plateau_window):
                break
        if cfg.early_stop and np.isfinite(best_val) and not improved:
            run.status = "early-stopped"
            break
        if cfg.update_coeffs:
            coeffs, res = coefficient_step(model, x_tr, z_tr, bits, mask, weights, coeffs, cfg)
            run.lambdas.append(coeffs.lam.copy())
            run.objectives.append(float(res.fun))
    if not cfg.early_stop or not np.isfinite(best_val):
        best, best_coeffs = model, coeffs
    return best, best_coeffs, run


# ---------------------------------------------------------------- seed scorer and mining

@dataclass
class SeedScorer:
    """HOG + logistic regression; a cheap stand-in for a boosted cascade."""

    w: np.ndarray
    b: float
    mu: np.ndarray
    sd: np.ndarray
    hog: HogParams = HogParams()

    def logit(self, patches):
        f = np.atleast_2d(hog_extract(patches, self.hog))
        return ((f - self.mu) / self.sd) @ self.w + self.b

    def __call__(self, patches):
        return nn.sigmoid(self.logit(patches))


def train_seed_scorer(patches, y, epochs=5, lr=0.05, seed=0, batch_size=32, l2=1e-4, hog=HogParams()) -> SeedScorer:
    f = hog_extract(patches, hog)
    mu, sd = f.mean(axis=0), f.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    x = (f - mu) / sd
    y = np.asarray(y, dtype=np.float64)
    w, b = np.zeros(x.shape[1]), 0.0
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(x), batch_size):
            i = order[s:s + batch_size]
            err = nn.sigmoid(x[i] @ w + b) - y[i]
            w -= lr * (x[i].T @ err / len(i) + l2 * w)
            b -= lr * err.mean()
    return SeedScorer(w, float(b), mu, sd, hog)


@dataclass
class MinedNegative:
    patch: np.ndarray
    image_id: str
    box: tuple
    score: float


def mine_hard_negatives(scorer, images, image_ids, truths, cfg: MiningConfig, window=(64, 32)):
    """Windows the scorer rates above threshold that stay clear of ground truth."""
    out = []
    win_h, win_w = window
    for img, image_id in zip(images, image_ids):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 2:
            img = img[None]
        gts = [t.box for t in truths if t.image_id == image_id]
        pos = window_positions(img.shape[1], img.shape[2], win_h, win_w, cfg.stride)
        if not pos:
            continue
        crops = crop_windows(img, pos, win_h, win_w)
        scores = np.asarray(scorer(crops), dtype=np.float64)
        cand = []
        for k in np.argsort(-scores, kind="stable"):
            if scores[k] <= cfg.threshold:
                break
            y, x = pos[k]
            box = (x, y, win_w, win_h)
            if any(iou(box, g) >= cfg.exclusion_iou for g in gts):
                continue
            if cfg.nms_overlap is not None and any(iou(box, c[1]) > cfg.nms_overlap for c in cand):
                continue
            cand.append((k, box))
            if len(cand) == cfg.max_per_image:
                break
        out.extend(MinedNegative(crops[k], image_id, box, float(scores[k])) for k, box in cand)
    return out


def mined_dataset(mined, layout: TaskLayout = DEFAULT_LAYOUT) -> MultiSourceDataset:
    """Confirmed negatives join the pedestrian source with only the main bit observed."""
    if not mined:
        return MultiSourceDataset(np.zeros((0, 1, 64, 32)), [], [], [])
    ids = [f"m-{m.image_id}-{m.box[1]}-{m.box[0]}" for m in mined]
    return MultiSourceDataset(np.stack([m.patch for m in mined]), ["P"] * len(mined),
                              [encode("P", {"main": 0}, layout) for _ in mined], ids)
