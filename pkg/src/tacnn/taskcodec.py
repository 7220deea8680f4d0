"""The 19-bit multi-task label space.

Task layout (bit offsets):

    0        main (pedestrian vs background)
    1-8      two-state pedestrian attributes
    9-10     viewpoint (four states, two bits)
    11-14    shared scene attributes (observed by every background source)
    15-18    unshared scene attributes (each observed by a single source)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_BITS = 19

PEDESTRIAN_ATTRS = ("backpack", "dark_trousers", "hat", "bag", "gender", "occlusion", "riding", "white_cloth")
SHARED_ATTRS = ("sky", "tree", "building", "road")
# unshared slots u1..u4 in source order: B^a -> u1, B^b -> u2,u3, B^c -> u4
UNSHARED_ATTRS = ("traffic_light", "vertical", "horizontal", "vehicle")
VIEWPOINTS = ("front", "back", "left", "right")
SOURCES = ("P", "Ba", "Bb", "Bc")

# task groups used by the ablation stages
GROUP_MAIN, GROUP_PED, GROUP_SHARED, GROUP_UNSHARED = "main", "ped", "shared", "unshared"


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    name: str
    offset: int
    width: int
    group: str

    @property
    def bits(self):
        return range(self.offset, self.offset + self.width)


def _build_tasks():
    tasks, off = [], 0
    for name, width, group in (
            [("main", 1, GROUP_MAIN)]
            + [(a, 1, GROUP_PED) for a in PEDESTRIAN_ATTRS]
            + [("viewpoint", 2, GROUP_PED)]
            + [(a, 1, GROUP_SHARED) for a in SHARED_ATTRS]
            + [(a, 1, GROUP_UNSHARED) for a in UNSHARED_ATTRS]):
        tasks.append(Task(name, off, width, group))
        off += width
    return tuple(tasks)


@dataclass(frozen=True)
class TaskLayout:
    tasks: tuple[Task, ...] = field(default_factory=_build_tasks)
    # which tasks each source can observe (main handled separately for B sources)
    source_tasks: dict = field(default_factory=lambda: {
        "P": ("main", *PEDESTRIAN_ATTRS, "viewpoint"),
        "Ba": (*SHARED_ATTRS, "traffic_light"),
        "Bb": (*SHARED_ATTRS, "vertical", "horizontal"),
        "Bc": (*SHARED_ATTRS, "vehicle"),
    })

    def __post_init__(self):
        if sum(t.width for t in self.tasks) != N_BITS:
            raise ValueError("task widths must sum to 19 bits")
        expected = 0
        for t in self.tasks:
            if t.offset != expected:
                raise ValueError(f"task {t.name} offset {t.offset} is not contiguous")
            expected += t.width

    @property
    def n_tasks(self):
        return len(self.tasks)

    @property
    def main_index(self):
        return 0

    def task(self, name) -> Task:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def index(self, name) -> int:
        return [t.name for t in self.tasks].index(name)

    def bit_to_task(self) -> np.ndarray:
        """Task index of every bit, length 19."""
        out = np.empty(N_BITS, dtype=int)
        for i, t in enumerate(self.tasks):
            out[list(t.bits)] = i
        return out

    def group_bits(self, groups) -> np.ndarray:
        """Boolean mask over bits belonging to any of ``groups``."""
        keep = np.zeros(N_BITS, dtype=bool)
        for t in self.tasks:
            if t.group in groups:
                keep[list(t.bits)] = True
        return keep

    def source_mask(self, source, observe_main=True) -> np.ndarray:
        """Full legal observation pattern of a source."""
        if source not in self.source_tasks:
            raise EncodingError(f"unknown source tag {source!r}")
        mask = np.zeros(N_BITS, dtype=np.uint8)
        names = list(self.source_tasks[source])
        if source != "P" and observe_main:
            names.append("main")
        for n in names:
            mask[list(self.task(n).bits)] = 1
        return mask


DEFAULT_LAYOUT = TaskLayout()


@dataclass(frozen=True)
class LabelVector:
    bits: np.ndarray  # (19,) uint8
    mask: np.ndarray  # (19,) uint8, 1 = observed

    def __post_init__(self):
        if self.bits.shape != (N_BITS,) or self.mask.shape != (N_BITS,):
            raise EncodingError("label vectors carry exactly 19 bits")
        vt = DEFAULT_LAYOUT.task("viewpoint")
        if self.mask[vt.offset] != self.mask[vt.offset + 1]:
            raise EncodingError("viewpoint bits must be observed jointly")
        if np.any(self.bits[self.mask == 0]):
            raise EncodingError("unobserved bits must hold 0")

    def to_string(self) -> str:
        return "".join("x" if m == 0 else str(int(b)) for b, m in zip(self.bits, self.mask))

    @classmethod
    def from_string(cls, s: str) -> "LabelVector":
        if len(s) != N_BITS:
            raise EncodingError(f"label string must have 19 characters, got {len(s)}")
        if set(s) - set("01x"):
            raise EncodingError(f"illegal character in label string {s!r}")
        bits = np.array([1 if ch == "1" else 0 for ch in s], dtype=np.uint8)
        mask = np.array([0 if ch == "x" else 1 for ch in s], dtype=np.uint8)
        return cls(bits, mask)

    def __eq__(self, other):
        return (isinstance(other, LabelVector) and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash(self.to_string())


def viewpoint_code(state) -> tuple[int, int]:
    i = VIEWPOINTS.index(state) if isinstance(state, str) else int(state)
    if not 0 <= i < 4:
        raise EncodingError(f"viewpoint state out of range: {state!r}")
    return i >> 1, i & 1


def encode(source: str, assignment: dict, layout: TaskLayout = DEFAULT_LAYOUT,
           observe_main: bool = True) -> LabelVector:
    """Build a label vector from named attribute values.

    Only supplied attributes are observed. Background sources (``Ba``,
    ``Bb``, ``Bc``) always observe ``main = 0`` unless ``observe_main`` is
    off, in which case they follow the pure per-source decomposition.
    """
    legal = layout.source_tasks.get(source)
    if legal is None:
        raise EncodingError(f"unknown source tag {source!r}")
    bits = np.zeros(N_BITS, dtype=np.uint8)
    mask = np.zeros(N_BITS, dtype=np.uint8)
    assignment = dict(assignment)
    if source == "P":
        if "main" not in assignment:
            raise EncodingError("P-source samples must carry the main label")
    else:
        if assignment.get("main", 0) != 0:
            raise EncodingError(f"{source} samples are background; main must be 0")
        if observe_main:
            assignment["main"] = 0
        else:
            assignment.pop("main", None)
    for name, value in assignment.items():
        if name not in legal and not (name == "main" and source != "P"):
            raise EncodingError(f"source {source} cannot observe attribute {name!r}")
        t = layout.task(name)
        if name == "viewpoint":
            bits[t.offset], bits[t.offset + 1] = viewpoint_code(value)
        else:
            if value not in (0, 1, True, False):
                raise EncodingError(f"attribute {name!r} must be binary, got {value!r}")
            bits[t.offset] = int(value)
        mask[list(t.bits)] = 1
    return LabelVector(bits, mask)


def decode(label: LabelVector, layout: TaskLayout = DEFAULT_LAYOUT) -> dict:
    """Inverse of :func:`encode`: observed attributes by name."""
    out = {}
    for t in layout.tasks:
        if not label.mask[t.offset]:
            continue
        if t.name == "viewpoint":
            out[t.name] = VIEWPOINTS[2 * int(label.bits[t.offset]) + int(label.bits[t.offset + 1])]
        else:
            out[t.name] = int(label.bits[t.offset])
    return out


LAMBDA_FLOOR = 1e-3


@dataclass
class Coeffs:
    """Per-task importance coefficients; the main entry is pinned to 1."""

    lam: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        lam = np.array(self.lam, dtype=np.float64)
        if lam.shape != (DEFAULT_LAYOUT.n_tasks,):
            raise ValueError(f"expected {DEFAULT_LAYOUT.n_tasks} coefficients, got {lam.shape}")
        if not np.all(np.isfinite(lam)) or not self.sigma > 0:
            raise ValueError("coefficients must be finite and sigma positive")
        lam = np.maximum(lam, LAMBDA_FLOOR)
        lam[DEFAULT_LAYOUT.main_index] = 1.0
        self.lam = lam

    @classmethod
    def ones(cls, sigma=1.0):
        return cls(np.ones(DEFAULT_LAYOUT.n_tasks), sigma)


def expand_lambda(c: Coeffs, layout: TaskLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Per-bit weights: each task's coefficient on every one of its bits."""
    w = np.asarray(c.lam, dtype=np.float64)[layout.bit_to_task()]
    w[layout.task("main").offset] = 1.0
    return w


def decode_viewpoint(p_hi: float, p_lo: float) -> str:
    """Threshold both viewpoint probabilities at 0.5 (ties go to 0)."""
    return VIEWPOINTS[2 * int(p_hi > 0.5) + int(p_lo > 0.5)]


def toplayer_param_count(formulation: str, h: int, layout: TaskLayout = DEFAULT_LAYOUT) -> int:
    """Top-layer weight count for per-task softmax heads vs one joint sigmoid layer."""
    if h < 1:
        raise ValueError("feature dimension must be >= 1")
    if formulation == "per-task-softmax":
        return sum((2 ** t.width) * h for t in layout.tasks)
    if formulation == "joint-sigmoid":
        return sum(t.width for t in layout.tasks) * h
    raise ValueError(f"unknown formulation {formulation!r}")
