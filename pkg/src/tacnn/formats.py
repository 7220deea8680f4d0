"""On-disk formats: patch rasters, dataset manifests, scene truth, detections
and binary checkpoints."""
from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import MultiSourceDataset, SceneSet
from .evalkit import Detection, GroundTruth
from .taskcodec import DEFAULT_LAYOUT, EncodingError, LabelVector


class FormatError(ValueError):
    pass


MANIFEST_NAME = "manifest.tsv"
MANIFEST_MAGIC = "tacnn-dataset"
MANIFEST_VERSION = 1


# ---------------------------------------------------------------- rasters

def write_raster(path, img):
    """8-bit grayscale raster: ``P5 <width> <height> 255`` then row-major bytes.

    Multi-channel arrays ``(C, H, W)`` are stacked vertically, height ``C*H``.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a.reshape(-1, a.shape[-1])
    q = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5 {q.shape[1]} {q.shape[0]} 255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_raster(path, channels=1):
    """Inverse of :func:`write_raster`; returns ``(C, H, W)`` floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing raster header")
    parts = data[:nl].split()
    if len(parts) != 4 or parts[0] != b"P5" or parts[3] != b"255":
        raise FormatError(f"{path}: malformed raster header {data[:nl][:40]!r}")
    try:
        w, h = int(parts[1]), int(parts[2])
    except ValueError:
        raise FormatError(f"{path}: non-integer raster extents") from None
    body = data[nl + 1:]
    if w < 1 or h < 1 or len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    if h % channels:
        raise FormatError(f"{path}: height {h} not divisible by {channels} channels")
    a = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0
    return a.reshape(channels, h // channels, w)


# ---------------------------------------------------------------- datasets

def save_dataset(root, ds: MultiSourceDataset):
    root = Path(root)
    (root / "patches").mkdir(parents=True, exist_ok=True)
    n, c, h, w = ds.patches.shape if len(ds) else (0, 1, 0, 0)
    lines = [f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}\theight={h}\twidth={w}\tchannels={c}"]
    for patch, src, lab, sid in zip(ds.patches, ds.sources, ds.labels, ds.ids):
        rel = f"patches/{sid}.pgm"
        write_raster(root / rel, patch)
        lines.append(f"{rel}\t{src}\t{lab.to_string()}")
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def _parse_header(line, path):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5 or parts[0] != MANIFEST_MAGIC:
        raise FormatError(f"{path}:1: not a dataset manifest header")
    if parts[1] != str(MANIFEST_VERSION):
        raise FormatError(f"{path}:1: unsupported manifest version {parts[1]}")
    geo = {}
    for kv in parts[2:]:
        k, _, v = kv.partition("=")
        if not v.isdigit():
            raise FormatError(f"{path}:1: bad header field {kv!r}")
        geo[k] = int(v)
    if set(geo) != {"height", "width", "channels"}:
        raise FormatError(f"{path}:1: header must give height, width and channels")
    return geo


def load_dataset(root) -> MultiSourceDataset:
    root = Path(root)
    path = root / MANIFEST_NAME
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    geo = _parse_header(lines[0], path)
    patches, sources, labels, ids = [], [], [], []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{no}: expected 3 tab-separated fields, got {len(parts)}")
        rel, src, lab = parts
        try:
            label = LabelVector.from_string(lab)
        except EncodingError as exc:
            raise FormatError(f"{path}:{no}: {exc}") from None
        legal = DEFAULT_LAYOUT.source_mask(src) if src in DEFAULT_LAYOUT.source_tasks else None
        if legal is None:
            raise FormatError(f"{path}:{no}: unknown source tag {src!r}")
        if np.any(label.mask & ~legal.astype(bool)):
            raise FormatError(f"{path}:{no}: label observes bits illegal for source {src}")
        img = read_raster(root / rel, geo["channels"])
        if img.shape != (geo["channels"], geo["height"], geo["width"]):
            raise FormatError(f"{root / rel}: raster {img.shape} does not match manifest geometry")
        patches.append(img), sources.append(src), labels.append(label)
        ids.append(Path(rel).stem)
    arr = np.stack(patches) if patches else np.zeros((0, geo["channels"], geo["height"], geo["width"]))
    return MultiSourceDataset(arr, sources, labels, ids)


# ---------------------------------------------------------------- scenes and detections

def save_scenes(root, scenes: SceneSet):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = ["image_id\tpath\tchannels"]
    for img, iid in zip(scenes.images, scenes.ids):
        write_raster(root / "images" / f"{iid}.pgm", img)
        rows.append(f"{iid}\timages/{iid}.pgm\t{img.shape[0]}")
    (root / "images.tsv").write_text("\n".join(rows) + "\n")
    write_truths(root / "gt.tsv", scenes.truths)


def load_scenes(root) -> SceneSet:
    root = Path(root)
    images, ids = [], []
    path = root / "images.tsv"
    for no, line in enumerate(path.read_text().splitlines()[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{no}: expected image_id, path, channels")
        ids.append(parts[0])
        images.append(read_raster(root / parts[1], int(parts[2])))
    return SceneSet(images, ids, read_truths(root / "gt.tsv"))


def write_truths(path, truths):
    rows = ["image_id\tx\ty\tw\th\tvisibility"]
    rows += [f"{t.image_id}\t" + "\t".join(repr(float(v)) for v in (*t.box, t.visibility)) for t in truths]
    Path(path).write_text("\n".join(rows) + "\n")


def read_truths(path):
    out = []
    for no, line in enumerate(Path(path).read_text().splitlines()[1:], start=2):
        parts = line.split("\t")
        try:
            x, y, w, h, vis = map(float, parts[1:])
        except ValueError:
            raise FormatError(f"{path}:{no}: malformed ground-truth row") from None
        out.append(GroundTruth(parts[0], (x, y, w, h), vis))
    return out


def write_detections(path, dets):
    rows = ["image_id\tx\ty\tw\th\tscore"]
    rows += [f"{d.image_id}\t" + "\t".join(repr(float(v)) for v in (*d.box, d.score)) for d in dets]
    Path(path).write_text("\n".join(rows) + "\n")


def read_detections(path):
    out = []
    for no, line in enumerate(Path(path).read_text().splitlines()[1:], start=2):
        parts = line.split("\t")
        try:
            x, y, w, h, score = map(float, parts[1:])
        except ValueError:
            raise FormatError(f"{path}:{no}: malformed detection row") from None
        out.append(Detection(parts[0], (x, y, w, h), score))
    return out


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"TACNNCKP"
CKPT_VERSION = 1
ARRAY_NAME = re.compile(
    r"^(model/(conv\d+\.[kb]|fc[56]\.[Wb]|spv\.[Wb]|top\.W)"
    r"|spv/(pos|neg)\.(level1|leaves)|spv/z_(mean|std)"
    r"|rbm/(w_xh|w_yh|b_x|b_y|b_h)"
    r"|coeffs/(lam|sigma)"
    r"|scorer/(w|b|mu|sd))$")


@dataclass
class Checkpoint:
    arrays: dict = field(default_factory=dict)
    config: str = ""

    def group(self, prefix):
        return {k[len(prefix) + 1:]: v for k, v in self.arrays.items() if k.startswith(prefix + "/")}


def save_checkpoint(path, ckpt: Checkpoint):
    out = bytearray(CKPT_MAGIC)
    out += struct.pack("<II", CKPT_VERSION, len(ckpt.arrays))
    for name in sorted(ckpt.arrays):
        if not ARRAY_NAME.match(name):
            raise FormatError(f"refusing to write unknown array name {name!r}")
        a = np.asarray(ckpt.arrays[name], dtype="<f8")  # tobytes() is C order; keeps 0-d shape
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
        out += a.tobytes()
    cfg = ckpt.config.encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(out)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    pos = len(CKPT_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        if not ARRAY_NAME.match(name):
            raise FormatError(f"{path}: unknown array name {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    (clen,) = struct.unpack("<I", take(4))
    config = take(clen).decode("utf-8")
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return Checkpoint(arrays, config)


# ---------------------------------------------------------------- packing

def pack_model(model) -> dict:
    return {f"model/{k}": v for k, v in model.params.items()}


def unpack_model(ckpt: Checkpoint, arch):
    from .model import TaCnnModel
    params = ckpt.group("model")
    ref = TaCnnModel.init(arch, 0).params
    if set(params) != set(ref):
        raise FormatError(f"checkpoint model arrays {sorted(set(params) ^ set(ref))} do not match the architecture")
    for k, v in params.items():
        if v.shape != ref[k].shape:
            raise FormatError(f"array model/{k} has shape {v.shape}, architecture expects {ref[k].shape}")
    return TaCnnModel(arch, {k: params[k].copy() for k in ref})


def pack_spv(spv) -> dict:
    return {"spv/pos.level1": spv.positive.level1, "spv/pos.leaves": spv.positive.leaves,
            "spv/neg.level1": spv.negative.level1, "spv/neg.leaves": spv.negative.leaves,
            "spv/z_mean": spv.z_mean, "spv/z_std": spv.z_std}


def unpack_spv(ckpt: Checkpoint, standardize=True):
    from .spv import HogParams, KMeansTree, SpvModel
    g = ckpt.group("spv")
    if not g:
        return None
    try:
        return SpvModel(KMeansTree(g["pos.level1"], g["pos.leaves"]), KMeansTree(g["neg.level1"], g["neg.leaves"]),
                        HogParams(), g["z_mean"], g["z_std"], standardize)
    except KeyError as exc:
        raise FormatError(f"checkpoint SPV section lacks {exc}") from None


def pack_rbm(rbm) -> dict:
    return {f"rbm/{k}": v for k, v in rbm.arrays().items()}


def unpack_rbm(ckpt: Checkpoint):
    from .rbm import Rbm
    g = ckpt.group("rbm")
    return Rbm(**g) if g else None


def pack_coeffs(c) -> dict:
    return {"coeffs/lam": c.lam, "coeffs/sigma": np.array(c.sigma)}


def unpack_coeffs(ckpt: Checkpoint):
    from .taskcodec import Coeffs
    g = ckpt.group("coeffs")
    return Coeffs(g["lam"], float(g["sigma"])) if g else None


def pack_scorer(s) -> dict:
    return {"scorer/w": s.w, "scorer/b": np.array(s.b), "scorer/mu": s.mu, "scorer/sd": s.sd}


def unpack_scorer(ckpt: Checkpoint):
    from .trainer import SeedScorer
    g = ckpt.group("scorer")
    return SeedScorer(g["w"], float(g["b"]), g["mu"], g["sd"]) if g else None


def write_prob_table(path, table):
    rows = ["sample_id\tlog_p\tweight"]
    rows += [f"{i}\t{lp!r}\t{w!r}" for i, lp, w in zip(table.ids, map(float, table.log_p), map(float, table.weights))]
    Path(path).write_text("\n".join(rows) + "\n")
