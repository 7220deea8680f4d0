"""Deterministic synthetic multi-source data.

Four patch sources mimic the pedestrian set and three scene-segmentation
sets. Every label is causal: attributes decide what is drawn. Scene images
with planted pedestrians and distractors serve detection evaluation and
hard-negative mining.

Each sample is rendered from its own generator seeded by
``(seed, stream, index)``, so a sample never depends on how many others
were generated before it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evalkit import GroundTruth, iou
from .taskcodec import (DEFAULT_LAYOUT, PEDESTRIAN_ATTRS, SHARED_ATTRS, VIEWPOINTS, LabelVector,
                        TaskLayout, encode)

STREAMS = {"P+": 1, "P-": 2, "Ba": 3, "Bb": 4, "Bc": 5, "test": 6, "scene": 7, "mine": 8}


@dataclass
class SyntheticConfig:
    seed: int = 0
    n_pos: int = 400
    n_neg: int = 400
    n_ba: int = 200
    n_bb: int = 200
    n_bc: int = 200
    n_test_patches: int = 200
    n_scenes: int = 60
    n_mining_images: int = 20
    height: int = 64
    width: int = 32
    scene_height: int = 128
    scene_width: int = 192
    # pedestrian renderer
    body_aspect: float = 1.0
    limb_thickness: float = 3.0
    side_skew: float = 3.0
    # distractor renderer
    pole_width: float = 4.0
    trunk_width: float = 8.0
    texture_noise: float = 0.04
    hard_negative_rate: float = 0.25
    partial_person_rate: float = 0.15
    position_jitter: float = 4.0
    # per-source (brightness offset, noise std): the distribution gap
    source_offsets: dict = field(default_factory=lambda: {
        "P": (0.0, 0.03), "Ba": (0.05, 0.04), "Bb": (-0.05, 0.025), "Bc": (0.03, 0.035)})
    attr_prob: float = 0.5
    occlusion_prob: float = 0.15
    peds_per_scene: tuple = (1, 3)
    distractors_per_scene: tuple = (2, 4)
    scene_distractors: tuple = ("pole", "trunk", "traffic_light", "vehicle")
    mining_distractors: tuple = ("pole", "trunk")

    def __post_init__(self):
        counts = (self.n_pos, self.n_neg, self.n_ba, self.n_bb, self.n_bc, self.n_test_patches,
                  self.n_scenes, self.n_mining_images)
        if min(counts) < 0:
            raise ValueError("sample counts must be non-negative")
        for p in (self.attr_prob, self.occlusion_prob, self.hard_negative_rate, self.partial_person_rate):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class MultiSourceDataset:
    patches: np.ndarray  # (N, C, H, W) in [0, 1], multiples of 1/255
    sources: list
    labels: list
    ids: list

    def __post_init__(self):
        if len({len(self.patches), len(self.sources), len(self.labels), len(self.ids)}) != 1:
            raise ValueError("dataset columns differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")

    def __len__(self):
        return len(self.ids)

    @property
    def bits(self):
        return np.array([lab.bits for lab in self.labels], dtype=np.float64).reshape(-1, 19)

    @property
    def mask(self):
        return np.array([lab.mask for lab in self.labels], dtype=np.float64).reshape(-1, 19)

    def subset(self, idx) -> "MultiSourceDataset":
        idx = list(idx)
        return MultiSourceDataset(self.patches[idx], [self.sources[i] for i in idx],
                                  [self.labels[i] for i in idx], [self.ids[i] for i in idx])

    def concat(self, other: "MultiSourceDataset") -> "MultiSourceDataset":
        return MultiSourceDataset(np.concatenate([self.patches, other.patches]), self.sources + other.sources,
                                  self.labels + other.labels, self.ids + other.ids)


@dataclass
class SceneSet:
    images: list  # (C, H, W) arrays
    ids: list
    truths: list  # GroundTruth

    def truths_for(self, image_id):
        return [t for t in self.truths if t.image_id == image_id]


def quantize(a):
    return np.round(np.clip(a, 0.0, 1.0) * 255.0) / 255.0


# ---------------------------------------------------------------- drawing

class Canvas:
    def __init__(self, img):
        self.img = img
        h, w = img.shape
        self.yy, self.xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def rect(self, y0, y1, x0, x1, value):
        m = (self.yy >= y0) & (self.yy < y1) & (self.xx >= x0) & (self.xx < x1)
        self.img[m] = value
        return m

    def ellipse(self, cy, cx, ry, rx, value):
        m = ((self.yy - cy) / ry) ** 2 + ((self.xx - cx) / rx) ** 2 <= 1.0
        self.img[m] = value
        return m

    def ring(self, cy, cx, r, thickness, value):
        d = np.hypot(self.yy - cy, self.xx - cx)
        m = np.abs(d - r) <= thickness / 2
        self.img[m] = value
        return m

    def segment(self, y0, x0, y1, x1, thickness, value):
        py, px = self.yy - y0, self.xx - x0
        dy, dx = y1 - y0, x1 - x0
        t = np.clip((py * dy + px * dx) / max(dy * dy + dx * dx, 1e-9), 0.0, 1.0)
        m = np.hypot(py - t * dy, px - t * dx) <= thickness / 2
        self.img[m] = value
        return m

    def trapezoid(self, y0, y1, cx, hw0, hw1, value):
        t = np.clip((self.yy - y0) / max(y1 - y0, 1e-9), 0, 1)
        hw = hw0 + t * (hw1 - hw0)
        m = (self.yy >= y0) & (self.yy < y1) & (np.abs(self.xx - cx) <= hw)
        self.img[m] = value
        return m


def texture(h, w, rng, base, noise):
    coarse = rng.normal(0.0, 0.08, size=(h // 16 + 2, w // 16 + 2))
    from scipy.ndimage import zoom
    smooth = zoom(coarse, 16, order=1)[:h, :w]
    return base + smooth + rng.normal(0.0, noise, size=(h, w))


def _contrast(rng, bg, lo=0.2):
    """An intensity that differs from ``bg`` by at least ``lo``."""
    for _ in range(20):
        v = rng.uniform(0.05, 0.95)
        if abs(v - bg) >= lo:
            return v
    return 0.05 if bg > 0.5 else 0.95


def draw_pedestrian(img, top, left, attrs, rng, cfg: SyntheticConfig, bg=0.5, jitter=1.5, shift=(0.0, 0.0)):
    """Render a pedestrian into the 64x32 reference box at (top, left).

    ``jitter`` randomly displaces the figure inside its box; ``shift`` moves
    it deterministically (used for partial-person negatives). Returns the
    visible fraction of the body (occlusion lowers it).
    """
    sub = img[top:top + cfg.height, left:left + cfg.width]
    cv = Canvas(sub)
    s = cfg.height / 64.0
    cx = cfg.width / 2 + rng.uniform(-jitter, jitter) + shift[1]
    dy = rng.uniform(-jitter, jitter) + shift[0]
    view = attrs["viewpoint"]
    side = view in ("left", "right")
    facing = -1.0 if view == "left" else 1.0
    skin = _contrast(rng, bg, 0.25)
    cloth = 0.93 if attrs["white_cloth"] else _contrast(rng, bg, 0.2) * 0.6
    trousers = 0.08 if attrs["dark_trousers"] else rng.uniform(0.55, 0.8)
    limb = cfg.limb_thickness * s
    hw = (4.0 if side else 6.5) * s * cfg.body_aspect
    riding = attrs["riding"]
    y_hip = (36 if not riding else 34) * s + dy

    if riding:
        wheel = 0.1 if bg > 0.4 else 0.9
        for wx in (cx - 8.5 * s, cx + 8.5 * s):
            cv.ring(54 * s + dy, wx, 6.5 * s, 2.0, wheel)
        cv.segment(54 * s + dy, cx - 8.5 * s, 44 * s + dy, cx, 2.0, wheel)
        cv.segment(54 * s + dy, cx + 8.5 * s, 44 * s + dy, cx, 2.0, wheel)
        # bent legs onto the pedals
        cv.segment(y_hip, cx, 46 * s + dy, cx + 3 * facing * s, limb + 1, trousers)
        cv.segment(46 * s + dy, cx + 3 * facing * s, 54 * s + dy, cx + 1 * facing * s, limb, trousers)
    elif side:
        stride = cfg.side_skew * s
        cv.segment(y_hip, cx, 62 * s + dy, cx - stride * 1.6, limb + 1, trousers)
        cv.segment(y_hip, cx, 62 * s + dy, cx + stride * 1.6, limb + 1, trousers)
    else:
        cv.segment(y_hip, cx - 2.5 * s, 62 * s + dy, cx - 3.5 * s, limb + 1, trousers)
        cv.segment(y_hip, cx + 2.5 * s, 62 * s + dy, cx + 3.5 * s, limb + 1, trousers)

    if attrs["gender"]:
        cv.trapezoid(33 * s + dy, 46 * s + dy, cx, hw, hw + 3.0 * s, cloth * 0.85 + 0.05)

    lean = 2.0 * facing * s if riding else (0.8 * facing * s if side else 0.0)
    cv.trapezoid(14 * s + dy, y_hip, cx + lean, hw, hw * 0.9, cloth)
    if side:
        cv.segment(16 * s + dy, cx + lean, 32 * s + dy, cx + lean + 4 * facing * s, limb, cloth * 0.8 + 0.1)
    else:
        for sgn in (-1, 1):
            cv.segment(15 * s + dy, cx + sgn * (hw + 1.5), 33 * s + dy, cx + sgn * (hw + 2.5), limb, cloth * 0.8 + 0.1)

    if attrs["backpack"]:
        pack = 0.5 * cloth + 0.25 if abs(cloth - 0.35) > 0.15 else 0.75
        if view == "back":
            cv.rect(16 * s + dy, 31 * s + dy, cx - 4.5 * s, cx + 4.5 * s, pack)
        elif side:
            cv.rect(16 * s + dy, 31 * s + dy, cx - facing * (hw + 4.5 * s) - 2.5 * s,
                    cx - facing * (hw + 4.5 * s) + 2.5 * s, pack)
            cv.rect(16 * s + dy, 31 * s + dy, *sorted((cx - facing * hw, cx - facing * (hw + 2.5 * s))), pack)
        else:
            for sgn in (-1, 1):
                cv.segment(14 * s + dy, cx + sgn * 3 * s, 26 * s + dy, cx + sgn * 4 * s, 1.5, pack)

    if attrs["bag"]:
        bx = cx + (hw + 3.5 * s) * (-facing if side else 1.0)
        bag_v = 0.2 if cloth > 0.5 else 0.85
        cv.segment(16 * s + dy, cx, 31 * s + dy, bx, 1.2, bag_v)
        cv.rect(30 * s + dy, 40 * s + dy, bx - 3 * s, bx + 3 * s, bag_v)

    head_x = cx + lean + (1.5 * facing * s if side else 0.0)
    cv.ellipse(8.5 * s + dy, head_x, 4.6 * s, 3.6 * s, skin)
    if side:
        cv.ellipse(9 * s + dy, head_x + 3.4 * facing * s, 1.2 * s, 1.2 * s, skin)
    elif view == "back":
        hair = 0.1 if skin > 0.4 else 0.65
        cv.ellipse(8.0 * s + dy, head_x, 4.2 * s, 3.3 * s, hair)
    else:
        eye = 0.05 if skin > 0.5 else 0.95
        cv.rect(7.5 * s + dy, 9 * s + dy, head_x - 2.2 * s, head_x - 0.8 * s, eye)
        cv.rect(7.5 * s + dy, 9 * s + dy, head_x + 0.8 * s, head_x + 2.2 * s, eye)
    if attrs["hat"]:
        hat = 0.05 if skin > 0.45 else 0.95
        cv.rect(3.0 * s + dy, 5.0 * s + dy, head_x - 6 * s, head_x + 6 * s, hat)
        cv.rect(-1 * s + dy, 4.0 * s + dy, head_x - 3.5 * s, head_x + 3.5 * s, hat)

    visible = 1.0
    if attrs["occlusion"]:
        cut = int(round(rng.uniform(34, 44) * s))
        occ = texture(cfg.height - cut, cfg.width, rng, rng.uniform(0.2, 0.8), cfg.texture_noise)
        sub[cut:, :] = occ
        visible = cut / cfg.height
    return visible


def draw_pole(cv: Canvas, cx, width, value, y0=0.0, sign=False, rng=None):
    cv.rect(y0, cv.img.shape[0], cx - width / 2, cx + width / 2, value)
    if sign and rng is not None:
        sy = y0 + rng.uniform(2, 10)
        cv.rect(sy, sy + rng.uniform(6, 10), cx - rng.uniform(4, 7), cx + rng.uniform(4, 7), 1.0 - value)


def draw_trunk(cv: Canvas, cx, width, value, rng):
    h = cv.img.shape[0]
    cv.trapezoid(h * 0.25, h, cx, width / 2, width / 2 + 2.0, value)
    canopy = texture(cv.img.shape[0], cv.img.shape[1], rng, value * 0.7 + 0.1, 0.08)
    m = ((cv.yy - h * 0.15) / (h * 0.22)) ** 2 + ((cv.xx - cx) / (width * 2.2)) ** 2 <= 1.0
    cv.img[m] = canopy[m]


def draw_traffic_light(cv: Canvas, cx, value, rng):
    h = cv.img.shape[0]
    cv.rect(h * 0.3, h, cx - 1.5, cx + 1.5, value)
    top = rng.uniform(2, 8)
    box_h = rng.uniform(18, 24)
    cv.rect(top, top + box_h, cx - 5.5, cx + 5.5, value)
    lit = rng.integers(3)
    for k in range(3):
        lamp = 0.95 if k == lit else 0.45
        cv.ellipse(top + box_h * (k + 0.5) / 3, cx, box_h / 8, 2.8, lamp)


def draw_vehicle(cv: Canvas, y_base, x0, x1, value, rng):
    body_top = y_base - rng.uniform(16, 22)
    cv.rect(body_top, y_base - 4, x0, x1, value)
    cabin = body_top - rng.uniform(8, 12)
    cv.rect(cabin, body_top, x0 + (x1 - x0) * 0.2, x1 - (x1 - x0) * 0.2, value)
    cv.rect(cabin + 2, body_top - 1, x0 + (x1 - x0) * 0.25, x1 - (x1 - x0) * 0.25, 0.85 if value < 0.5 else 0.15)
    for wx in (x0 + (x1 - x0) * 0.22, x1 - (x1 - x0) * 0.22):
        cv.ellipse(y_base - 4, wx, 4.5, 4.5, 0.05)


def draw_building(cv: Canvas, y0, y1, x0, x1, value, rng):
    cv.rect(y0, y1, x0, x1, value)
    win = 0.9 if value < 0.5 else 0.15
    step_y, step_x = rng.uniform(8, 12), rng.uniform(7, 10)
    y = y0 + 3
    while y + 4 < y1:
        x = x0 + 2
        while x + 4 < x1:
            cv.rect(y, y + 4, x, x + 4, win)
            x += step_x
        y += step_y


def draw_sky(cv: Canvas, rows, rng):
    cv.img[:int(rows)] = rng.uniform(0.82, 0.95) + rng.normal(0, 0.01, size=cv.img[:int(rows)].shape)


def draw_road(cv: Canvas, start_row, rng):
    h, w = cv.img.shape
    r = int(start_row)
    cv.img[r:] = rng.uniform(0.2, 0.32) + rng.normal(0, 0.02, size=cv.img[r:].shape)
    lane_y = r + (h - r) * rng.uniform(0.4, 0.7)
    cv.rect(lane_y, lane_y + 2, 0, w, 0.9)


def draw_horizontal(cv: Canvas, rng):
    h, w = cv.img.shape
    for _ in range(rng.integers(2, 5)):
        y = rng.uniform(0, h - 3)
        cv.rect(y, y + rng.uniform(1, 3), 0, w, rng.choice([0.1, 0.9]))


def draw_vertical(cv: Canvas, rng, cfg):
    w = cv.img.shape[1]
    if rng.random() < 0.5:
        draw_pole(cv, rng.uniform(6, w - 6), cfg.pole_width, _contrast(rng, cv.img.mean()), sign=True, rng=rng)
    else:
        x = rng.uniform(4, w - 4)
        if rng.random() < 0.5:
            cv.rect(0, cv.img.shape[0], 0, x, _contrast(rng, cv.img.mean()))
        else:
            cv.rect(0, cv.img.shape[0], x, w, _contrast(rng, cv.img.mean()))


# ---------------------------------------------------------------- samples

def _rng(cfg, stream, index):
    return np.random.default_rng([cfg.seed, STREAMS[stream], index])


def random_pedestrian_attrs(rng, cfg):
    a = {name: int(rng.random() < cfg.attr_prob) for name in PEDESTRIAN_ATTRS}
    a["occlusion"] = int(rng.random() < cfg.occlusion_prob)
    a["riding"] = int(rng.random() < cfg.attr_prob * 0.4)
    a["viewpoint"] = VIEWPOINTS[rng.integers(4)]
    return a


def _finish(img, rng, source, cfg):
    offset, noise = cfg.source_offsets[source]
    img = img + offset + rng.normal(0.0, noise, size=img.shape)
    return quantize(img)[None]


def render_positive(cfg, index):
    rng = _rng(cfg, "P+", index)
    bg = rng.uniform(0.3, 0.7)
    img = texture(cfg.height, cfg.width, rng, bg, cfg.texture_noise)
    _scene_clutter(Canvas(img), rng, cfg, allow_hard=False, p=0.3)
    attrs = random_pedestrian_attrs(rng, cfg)
    draw_pedestrian(img, 0, 0, attrs, rng, cfg, bg, jitter=cfg.position_jitter)
    return _finish(img, rng, "P", cfg), attrs


def _scene_clutter(cv, rng, cfg, allow_hard, p=0.5):
    """Sky / road / building fragments; optionally one hard vertical distractor."""
    h, w = cv.img.shape
    flags = {}
    flags["building"] = rng.random() < p
    if flags["building"]:
        draw_building(cv, 0, h, 0, w, rng.uniform(0.25, 0.75), rng)
    flags["sky"] = rng.random() < p
    if flags["sky"]:
        draw_sky(cv, rng.uniform(8, 20), rng)
    flags["road"] = rng.random() < p
    if flags["road"]:
        draw_road(cv, h - rng.uniform(8, 18), rng)
    flags["tree"] = False
    if allow_hard and rng.random() < cfg.hard_negative_rate:
        if rng.random() < 0.5:
            draw_pole(cv, rng.uniform(8, w - 8), cfg.pole_width, _contrast(rng, cv.img.mean()), sign=rng.random() < 0.5,
                      rng=rng)
        else:
            draw_trunk(cv, rng.uniform(8, w - 8), cfg.trunk_width, _contrast(rng, cv.img.mean()), rng)
            flags["tree"] = True
    return flags


def render_p_negative(cfg, index):
    rng = _rng(cfg, "P-", index)
    img = texture(cfg.height, cfg.width, rng, rng.uniform(0.3, 0.7), cfg.texture_noise)
    _scene_clutter(Canvas(img), rng, cfg, allow_hard=True)
    if rng.random() < cfg.partial_person_rate:
        # a person badly off-centre: a localisation negative
        if rng.random() < 0.5:
            shift = (0.0, rng.choice([-1, 1]) * rng.uniform(0.45, 0.7) * cfg.width)
        else:
            shift = (rng.choice([-1, 1]) * rng.uniform(0.4, 0.6) * cfg.height, 0.0)
        draw_pedestrian(img, 0, 0, random_pedestrian_attrs(rng, cfg), rng, cfg, float(img.mean()), shift=shift)
    return _finish(img, rng, "P", cfg)


def render_background(cfg, source, index):
    """A scene-source patch and its attribute assignment."""
    rng = _rng(cfg, source, index)
    h, w = cfg.height, cfg.width
    img = texture(h, w, rng, rng.uniform(0.3, 0.7), cfg.texture_noise)
    cv = Canvas(img)
    a = {name: int(rng.random() < cfg.attr_prob) for name in SHARED_ATTRS}
    if a["building"]:
        draw_building(cv, rng.uniform(0, 20), h, 0, w, rng.uniform(0.25, 0.75), rng)
    if a["sky"]:
        draw_sky(cv, rng.uniform(10, 24), rng)
    if a["road"]:
        draw_road(cv, h - rng.uniform(10, 22), rng)
    if a["tree"]:
        draw_trunk(cv, rng.uniform(8, w - 8), cfg.trunk_width * rng.uniform(0.8, 1.2), _contrast(rng, img.mean()), rng)
    if source == "Ba":
        a["traffic_light"] = int(rng.random() < cfg.attr_prob)
        if a["traffic_light"]:
            draw_traffic_light(cv, rng.uniform(9, w - 9), _contrast(rng, img.mean()), rng)
    elif source == "Bb":
        a["vertical"] = int(rng.random() < cfg.attr_prob)
        a["horizontal"] = int(rng.random() < cfg.attr_prob)
        if a["horizontal"]:
            draw_horizontal(cv, rng)
        if a["vertical"]:
            draw_vertical(cv, rng, cfg)
    elif source == "Bc":
        a["vehicle"] = int(rng.random() < cfg.attr_prob)
        if a["vehicle"]:
            x0 = rng.uniform(-20, 0)
            draw_vehicle(cv, rng.uniform(50, h), x0, x0 + rng.uniform(45, 70), _contrast(rng, img.mean()), rng)
    else:
        raise ValueError(f"not a scene source: {source}")
    return _finish(img, rng, source, cfg), a


def gen_synthetic_multisource(cfg: SyntheticConfig, layout: TaskLayout = DEFAULT_LAYOUT,
                              observe_main=True) -> MultiSourceDataset:
    if cfg.n_pos + cfg.n_neg + cfg.n_ba + cfg.n_bb + cfg.n_bc == 0:
        raise ValueError("synthetic config produces no samples")
    patches, sources, labels, ids = [], [], [], []
    for i in range(cfg.n_pos):
        x, attrs = render_positive(cfg, i)
        patches.append(x), sources.append("P"), ids.append(f"p{i:05d}")
        labels.append(encode("P", {"main": 1, **attrs}, layout))
    for i in range(cfg.n_neg):
        patches.append(render_p_negative(cfg, i)), sources.append("P"), ids.append(f"n{i:05d}")
        labels.append(encode("P", {"main": 0}, layout))
    for src, n in (("Ba", cfg.n_ba), ("Bb", cfg.n_bb), ("Bc", cfg.n_bc)):
        for i in range(n):
            x, a = render_background(cfg, src, i)
            patches.append(x), sources.append(src), ids.append(f"{src.lower()}{i:05d}")
            labels.append(encode(src, a, layout, observe_main=observe_main))
    return MultiSourceDataset(np.stack(patches), sources, labels, ids)


def gen_test_patches(cfg: SyntheticConfig, layout: TaskLayout = DEFAULT_LAYOUT) -> MultiSourceDataset:
    """Held-out labelled pedestrians for attribute (viewpoint) accuracy."""
    patches, labels, ids = [], [], []
    for i in range(cfg.n_test_patches):
        x, attrs = render_positive(cfg, 1_000_000 + i)
        patches.append(x), ids.append(f"t{i:05d}")
        labels.append(encode("P", {"main": 1, **attrs}, layout))
    shape = (0, 1, cfg.height, cfg.width)
    arr = np.stack(patches) if patches else np.zeros(shape)
    return MultiSourceDataset(arr, ["P"] * len(ids), labels, ids)


def render_scene(cfg: SyntheticConfig, stream, index, distractors):
    rng = _rng(cfg, stream, index)
    h, w = cfg.scene_height, cfg.scene_width
    img = texture(h, w, rng, rng.uniform(0.35, 0.65), cfg.texture_noise)
    cv = Canvas(img)
    horizon = rng.uniform(15, 35)
    draw_sky(cv, horizon, rng)
    x = 0.0
    while x < w:
        bw = rng.uniform(30, 70)
        if rng.random() < 0.6:
            draw_building(cv, horizon - rng.uniform(0, 10), h, x, x + bw, rng.uniform(0.3, 0.7), rng)
        x += bw
    draw_road(cv, h - rng.uniform(6, 14), rng)
    boxes, truths = [], []
    image_id = f"{stream}{index:04d}"
    n_ped = rng.integers(cfg.peds_per_scene[0], cfg.peds_per_scene[1] + 1)
    n_dis = rng.integers(cfg.distractors_per_scene[0], cfg.distractors_per_scene[1] + 1)
    items = ["ped"] * int(n_ped) + [distractors[rng.integers(len(distractors))] for _ in range(n_dis)]
    for kind in items:
        for _ in range(50):
            top = int(rng.integers(0, h - cfg.height + 1))
            left = int(rng.integers(0, w - cfg.width + 1))
            box = (left, top, cfg.width, cfg.height)
            if all(iou(box, b) == 0.0 for b in boxes):
                break
        else:
            continue
        boxes.append(box)
        sub = img[top:top + cfg.height, left:left + cfg.width]
        scv = Canvas(sub)
        bg = float(sub.mean())
        if kind == "ped":
            vis = draw_pedestrian(img, top, left, random_pedestrian_attrs(rng, cfg), rng, cfg, bg)
            truths.append(GroundTruth(image_id, box, vis))
        elif kind == "pole":
            draw_pole(scv, cfg.width / 2 + rng.uniform(-4, 4), cfg.pole_width, _contrast(rng, bg), sign=True, rng=rng)
        elif kind == "trunk":
            draw_trunk(scv, cfg.width / 2 + rng.uniform(-4, 4), cfg.trunk_width, _contrast(rng, bg), rng)
        elif kind == "traffic_light":
            draw_traffic_light(scv, cfg.width / 2 + rng.uniform(-3, 3), _contrast(rng, bg), rng)
        elif kind == "vehicle":
            draw_vehicle(scv, cfg.height - rng.uniform(0, 6), -rng.uniform(0, 10), cfg.width + rng.uniform(0, 10),
                         _contrast(rng, bg), rng)
    return _finish(img, rng, "P", cfg), image_id, truths


def gen_scenes(cfg: SyntheticConfig, stream="scene") -> SceneSet:
    n = cfg.n_scenes if stream == "scene" else cfg.n_mining_images
    distractors = cfg.scene_distractors if stream == "scene" else cfg.mining_distractors
    images, ids, truths = [], [], []
    for i in range(n):
        img, image_id, gts = render_scene(cfg, stream, i, distractors)
        images.append(img), ids.append(image_id), truths.extend(gts)
    return SceneSet(images, ids, truths)
