"""Flat ``key=value`` run configuration.

One file drives every command. Keys (with defaults) are the fields of
:class:`RunConfig`; tuples are written comma-separated, booleans as
``true``/``false``. Lines starting with ``#`` are comments.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .datagen import SyntheticConfig
from .model import ArchConfig
from .pipeline import DetectConfig
from .trainer import ABLATION_STAGES, MiningConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data
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
    channels: int = 1
    scene_height: int = 128
    scene_width: int = 192
    body_aspect: float = 1.0
    limb_thickness: float = 3.0
    side_skew: float = 3.0
    pole_width: float = 4.0
    trunk_width: float = 8.0
    texture_noise: float = 0.04
    hard_negative_rate: float = 0.25
    partial_person_rate: float = 0.15
    position_jitter: float = 4.0
    attr_prob: float = 0.5
    occlusion_prob: float = 0.15
    # architecture
    conv_channels: tuple = (8, 16, 32, 32)
    conv_kernels: tuple = (5, 3, 3, 3)
    fc5: int = 256
    hidden: int = 200
    # training
    stage: str = ""  # optional ablation preset: main, ped, shared, unshared, spv
    epochs: int = 4
    outer_iterations: int = 3
    batch_size: int = 32
    lr: float = 0.05
    lr_decay: float = 0.5
    sigma: float = 1.0
    groups: tuple = ("main", "ped", "shared", "unshared")
    sources: tuple = ("P", "Ba", "Bb", "Bc")
    use_spv: bool = True
    spv_standardize: bool = True
    update_coeffs: bool = True
    rbm_weighting: bool = True
    rbm_hidden: int = 32
    rbm_epochs: int = 30
    rbm_lr: float = 0.05
    plateau_tol: float = 1e-3
    plateau_window: int = 3
    val_fraction: float = 0.1
    early_stop: bool = True
    # mining
    mining: bool = True
    mine_threshold: float = 0.5
    mine_max_per_image: int = 10
    mine_exclusion_iou: float = 0.3
    mine_stride: int = 8
    mine_nms: float = 0.5
    seed_epochs: int = 5
    seed_lr: float = 0.05
    # detection
    detect_stride: int = 8
    detect_nms: float = 0.5
    reasonable: bool = True

    def __post_init__(self):
        if self.stage and self.stage not in ABLATION_STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; choose from {', '.join(ABLATION_STAGES)}")

    # ---- views
    def synthetic(self) -> SyntheticConfig:
        names = {f.name for f in fields(SyntheticConfig)}
        return SyntheticConfig(**{k: getattr(self, k) for k in names if hasattr(self, k)})

    def arch(self) -> ArchConfig:
        return ArchConfig(height=self.height, width=self.width, channels=self.channels,
                          conv_channels=self.conv_channels, conv_kernels=self.conv_kernels, fc5=self.fc5,
                          hidden=self.hidden)

    def mining_config(self) -> MiningConfig:
        return MiningConfig(self.mine_threshold, self.mine_max_per_image, self.mine_exclusion_iou, self.mine_stride,
                            self.mine_nms, self.seed_epochs, self.seed_lr, self.mining)

    def train(self) -> TrainConfig:
        cfg = TrainConfig(
            epochs=self.epochs, outer_iterations=self.outer_iterations, batch_size=self.batch_size, lr=self.lr,
            lr_decay=self.lr_decay, seed=self.seed, sigma=self.sigma, groups=self.groups, sources=self.sources,
            use_spv=self.use_spv, update_coeffs=self.update_coeffs, rbm_weighting=self.rbm_weighting,
            rbm_hidden=self.rbm_hidden, rbm_epochs=self.rbm_epochs, rbm_lr=self.rbm_lr,
            plateau_tol=self.plateau_tol, plateau_window=self.plateau_window, val_fraction=self.val_fraction,
            early_stop=self.early_stop, arch=self.arch(), mining=self.mining_config())
        return replace(cfg, **ABLATION_STAGES[self.stage]) if self.stage else cfg

    def detect(self) -> DetectConfig:
        return DetectConfig(self.detect_stride, self.detect_nms, None, self.reasonable)

    # ---- text form
    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def with_overrides(self, pairs) -> "RunConfig":
        """Apply ``key=value`` strings (or ``(key, value)`` pairs) on top of this config."""
        types = {f.name: type(f.default) for f in fields(self)}
        changes = {}
        for item in pairs:
            key, value = _split(item) if isinstance(item, str) else item
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse(value, types[key], key)
        try:
            return replace(self, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _split(line):
    key, sep, value = line.partition("=")
    if not sep:
        raise ConfigError(f"expected key=value, got {line!r}")
    return key.strip(), value.strip()


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text, typ, key):
    try:
        if typ is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            items = [s.strip() for s in text.split(",") if s.strip()]
            return tuple(int(s) if s.lstrip("-").isdigit() else s for s in items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {typ.__name__})") from None


def parse_config_text(text, base: RunConfig | None = None, source="<config>") -> RunConfig:
    pairs = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            pairs.append(_split(line))
        except ConfigError as exc:
            raise ConfigError(f"{source}:{no}: {exc}") from None
    return (base or RunConfig()).with_overrides(pairs)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base, str(path))
