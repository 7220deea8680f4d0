"""Detection evaluation: NMS, greedy matching, miss rate vs FPPI and LAMR."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MATCH_IOU = 0.5
LAMR_REFERENCE = 10.0 ** np.linspace(-2, 0, 9)
MISS_RATE_FLOOR = 1e-6
REASONABLE_MIN_HEIGHT = 50  # "larger than 49 pixels"
REASONABLE_MIN_VISIBLE = 0.65


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: tuple  # x, y, w, h
    score: float

    def __post_init__(self):
        if not (self.box[2] > 0 and self.box[3] > 0):
            raise ValueError(f"box extents must be positive: {self.box}")
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    box: tuple
    visibility: float = 1.0


def iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def nms(dets, overlap=0.5):
    """Greedy suppression: keep the best box, drop overlaps above ``overlap``, repeat."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    keep = []
    for i in order:
        if all(dets[i].image_id != dets[j].image_id or iou(dets[i].box, dets[j].box) <= overlap for j in keep):
            keep.append(i)
    return [dets[i] for i in keep]


def is_reasonable(gt: GroundTruth) -> bool:
    return gt.box[3] >= REASONABLE_MIN_HEIGHT and gt.visibility >= REASONABLE_MIN_VISIBLE


@dataclass
class MatchResult:
    tp: np.ndarray  # per detection (in input order)
    matched_gt: np.ndarray  # index into truths, -1 when unmatched
    ignored: np.ndarray  # detections that hit an ignore region
    n_truth: int

    @property
    def n_tp(self):
        return int(self.tp.sum())

    @property
    def n_fp(self):
        return int((~self.tp & ~self.ignored).sum())

    @property
    def n_fn(self):
        return self.n_truth - self.n_tp


def match_detections(dets, truths, threshold=MATCH_IOU, ignore=()) -> MatchResult:
    """Greedy one-to-one matching by descending score, per image.

    Each truth absorbs at most one detection; a detection takes the unmatched
    truth of highest IoU >= ``threshold``. Unmatched detections overlapping an
    ``ignore`` box at the threshold are neither TP nor FP.
    """
    tp = np.zeros(len(dets), dtype=bool)
    ign = np.zeros(len(dets), dtype=bool)
    matched = np.full(len(dets), -1)
    used = set()
    for i in sorted(range(len(dets)), key=lambda i: -dets[i].score):
        d = dets[i]
        best, best_iou = -1, -1.0
        for j, t in enumerate(truths):
            if j in used or t.image_id != d.image_id:
                continue
            o = iou(d.box, t.box)
            if o >= threshold and o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            used.add(best)
            tp[i], matched[i] = True, best
        elif any(g.image_id == d.image_id and iou(d.box, g.box) >= threshold for g in ignore):
            ign[i] = True
    return MatchResult(tp, matched, ign, len(truths))


@dataclass
class MissRateCurve:
    thresholds: np.ndarray
    fppi: np.ndarray
    miss_rate: np.ndarray

    def __post_init__(self):
        if len(self.fppi) == 0:
            raise ValueError("empty curve")
        if np.any(np.diff(self.fppi) < 0):
            raise ValueError("FPPI must be non-decreasing along the sweep")

    @classmethod
    def from_points(cls, fppi, miss_rate):
        fppi, mr = np.asarray(fppi, float), np.asarray(miss_rate, float)
        return cls(np.full(len(fppi), np.nan), fppi, mr)


def miss_rate_curve(dets, match: MatchResult, n_images: int) -> MissRateCurve:
    """Sweep the score threshold from +inf down through every distinct score."""
    counted = ~match.ignored
    scores = np.array([d.score for d in dets])[counted]
    tp = match.tp[counted]
    order = np.argsort(-scores, kind="stable")
    scores, tp = scores[order], tp[order]
    ctp, cfp = np.cumsum(tp), np.cumsum(~tp)
    # one operating point per distinct score (the last index of each tie group)
    last = np.r_[np.nonzero(np.diff(scores))[0], len(scores) - 1] if len(scores) else np.array([], int)
    thr = np.r_[np.inf, scores[last]]
    fppi = np.r_[0.0, cfp[last] / n_images]
    if match.n_truth:
        mr = np.r_[1.0, 1.0 - ctp[last] / match.n_truth]
    else:
        mr = np.zeros_like(fppi)  # nothing to miss
    return MissRateCurve(thr, fppi, mr)


def reference_miss_rates(curve: MissRateCurve, refs=LAMR_REFERENCE):
    """Step-function lookup: miss rate of the last operating point with FPPI <= ref."""
    out = []
    for r in refs:
        ok = np.nonzero(curve.fppi <= r)[0]
        out.append(curve.miss_rate[ok[-1]] if len(ok) else 1.0)
    return np.array(out)


def log_avg_miss_rate(curve: MissRateCurve, refs=LAMR_REFERENCE) -> float:
    """Geometric mean of the reference miss rates, in percent."""
    mr = np.maximum(reference_miss_rates(curve, refs), MISS_RATE_FLOOR)
    return float(np.exp(np.mean(np.log(mr))) * 100.0)


def evaluate(dets, truths, image_ids, threshold=MATCH_IOU, reasonable=False):
    """Match, build the curve and return ``(lamr, curve, match)``."""
    ignore = ()
    if reasonable:
        ignore = [t for t in truths if not is_reasonable(t)]
        truths = [t for t in truths if is_reasonable(t)]
    match = match_detections(dets, truths, threshold, ignore)
    curve = miss_rate_curve(dets, match, len(image_ids))
    return log_avg_miss_rate(curve), curve, match


def write_curve_csv(path, curve: MissRateCurve, refs=LAMR_REFERENCE):
    ref_mr = reference_miss_rates(curve, refs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "threshold", "fppi", "miss_rate"])
        for t, f, m in zip(curve.thresholds, curve.fppi, curve.miss_rate):
            w.writerow(["curve", repr(float(t)), repr(float(f)), repr(float(m))])
        for r, m in zip(refs, ref_mr):
            w.writerow(["reference", "", repr(float(r)), repr(float(m))])


def read_curve_csv(path) -> MissRateCurve:
    thr, fppi, mr = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "curve":
                thr.append(float(row["threshold"]))
                fppi.append(float(row["fppi"]))
                mr.append(float(row["miss_rate"]))
    return MissRateCurve(np.array(thr), np.array(fppi), np.array(mr))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (true, predicted)

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def accuracy(self):
        """Per predicted state: diagonal over column sum (NaN for empty columns)."""
        col = self.counts.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(col > 0, np.diag(self.counts) / col, np.nan)


def confusion_matrix(true_states, pred_states, n_states=4) -> ConfusionMatrix:
    if len(true_states) != len(pred_states):
        raise ValueError(f"length mismatch: {len(true_states)} true vs {len(pred_states)} predicted")
    counts = np.zeros((n_states, n_states), dtype=np.int64)
    np.add.at(counts, (np.asarray(true_states, int), np.asarray(pred_states, int)), 1)
    return ConfusionMatrix(counts)


def window_positions(height, width, win_h, win_w, stride):
    if height < win_h or width < win_w:
        return []
    return [(y, x) for y in range(0, height - win_h + 1, stride) for x in range(0, width - win_w + 1, stride)]


def crop_windows(image, positions, win_h, win_w):
    """(C, H, W) image -> (N, C, win_h, win_w) stack."""
    if not positions:
        return np.zeros((0, image.shape[0], win_h, win_w))
    return np.stack([image[:, y:y + win_h, x:x + win_w] for y, x in positions])


def rescale(image, factor):
    from scipy.ndimage import zoom
    return zoom(image, (1, factor, factor), order=1, grid_mode=True, mode="nearest")


def sliding_window_detect(score_fn, image, image_id, window, stride, scales=(1.0,), prune_fn=None,
                          prune_threshold=None, batch=256):
    """Score every window of ``image`` at each scale.

    ``score_fn`` maps a window stack to main-task scores; ``prune_fn`` (a
    cheap seed scorer) may discard windows below ``prune_threshold`` first.
    Boxes are reported in original image coordinates.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    win_h, win_w = window
    dets = []
    for s in scales:
        img = image if s == 1.0 else rescale(image, s)
        pos = window_positions(img.shape[1], img.shape[2], win_h, win_w, stride)
        if not pos:
            continue
        crops = crop_windows(img, pos, win_h, win_w)
        if prune_fn is not None and prune_threshold is not None:
            keep = prune_fn(crops) >= prune_threshold
            crops = crops[keep]
            pos = [p for p, k in zip(pos, keep) if k]
        scores = np.concatenate([score_fn(crops[i:i + batch]) for i in range(0, len(crops), batch)]) \
            if len(crops) else np.zeros(0)
        for (y, x), sc in zip(pos, scores):
            dets.append(Detection(image_id, (x / s, y / s, win_w / s, win_h / s), float(sc)))
    return dets
