"""Run configuration: dataclasses, presets, ablation variants and JSON I/O.

A config file is a JSON object with optional sections ``model``, ``train``,
``data`` and ``io``; any key it omits keeps the preset value.  Unknown keys
are rejected with their full key path.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union, get_args, get_origin, get_type_hints

from .tensor import ConfigError

PATH_MODES = ("arm", "drm", "ff")
CF_MODES = ("cross_fusion", "concat", "none")
FF_MODES = ("sum_max", "concat_conv")
AGG_MODES = ("progressive", "flat_concat", "pair_concat", "none")
MASK_MODES = ("per_channel", "broadcast")

VGG19_WIDTHS = (64, 128, 256, 512, 512)
VGG19_CONVS = (2, 2, 4, 4, 4)


@dataclass
class EncoderConfig:
    widths: tuple = VGG19_WIDTHS
    convs: tuple = VGG19_CONVS
    input_size: int = 256
    in_channels: int = 3

    def validate(self) -> None:
        if len(self.widths) != 5 or len(self.convs) != 5:
            raise ConfigError("encoder needs exactly 5 stage widths and 5 conv counts")
        if self.input_size % 16:
            raise ConfigError(f"input_size {self.input_size} is not divisible by 16")
        if min(self.widths) < 1 or min(self.convs) < 1:
            raise ConfigError("encoder widths and conv counts must be positive")


def scaled_widths(factor: float) -> tuple:
    return tuple(max(1, int(round(w * factor))) for w in VGG19_WIDTHS)


@dataclass
class VariantConfig:
    aif_path: str = "arm"
    dep_path: str = "drm"
    use_aif: bool = True
    use_dep: bool = True
    cf_mode: str = "cross_fusion"
    ff_mode: str = "sum_max"
    agg_mode: str = "progressive"
    mask_mode: str = "per_channel"

    def validate(self) -> None:
        for key, allowed in (("aif_path", PATH_MODES), ("dep_path", PATH_MODES), ("cf_mode", CF_MODES),
                             ("ff_mode", FF_MODES), ("agg_mode", AGG_MODES), ("mask_mode", MASK_MODES)):
            if getattr(self, key) not in allowed:
                raise ConfigError(f"variant.{key}={getattr(self, key)!r} not in {allowed}")
        both = self.use_aif and self.use_dep
        neither = not (self.use_aif or self.use_dep)
        if both:
            if self.cf_mode == "none":
                raise ConfigError("two guided branches need cf_mode cross_fusion or concat")
            if self.agg_mode not in ("progressive", "flat_concat"):
                raise ConfigError("two guided branches need agg_mode progressive or flat_concat")
        else:
            if self.cf_mode != "none":
                raise ConfigError(f"cf_mode={self.cf_mode!r} needs both AiF and depth branches")
            want = "none" if neither else "pair_concat"
            if self.agg_mode != want:
                raise ConfigError(f"agg_mode must be {want!r} when branches are (aif={self.use_aif}, dep={self.use_dep})")
        if not self.use_aif and self.aif_path != "ff":
            raise ConfigError("aif_path must be 'ff' when the AiF branch is disabled")
        if not self.use_dep and self.dep_path != "ff":
            raise ConfigError("dep_path must be 'ff' when the depth branch is disabled")


VARIANTS = {
    "Full": VariantConfig(),
    # refiner placement
    "M0": VariantConfig(aif_path="ff", dep_path="ff"),
    "M1": VariantConfig(aif_path="arm", dep_path="ff"),
    "M2": VariantConfig(aif_path="ff", dep_path="drm"),
    "M3": VariantConfig(aif_path="arm", dep_path="arm"),
    "M4": VariantConfig(aif_path="drm", dep_path="drm"),
    "M5": VariantConfig(aif_path="drm", dep_path="arm"),
    # modality subsets
    "V0": VariantConfig(aif_path="ff", dep_path="ff", use_aif=False, use_dep=False, cf_mode="none", agg_mode="none"),
    "V1": VariantConfig(aif_path="arm", dep_path="ff", use_dep=False, cf_mode="none", agg_mode="pair_concat"),
    "V2": VariantConfig(aif_path="ff", dep_path="drm", use_aif=False, cf_mode="none", agg_mode="pair_concat"),
    # fusion details
    "P0": VariantConfig(cf_mode="concat"),
    "P1": VariantConfig(ff_mode="concat_conv"),
    "P2": VariantConfig(agg_mode="flat_concat"),
}


def variant(name: str) -> VariantConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    return dataclasses.replace(VARIANTS[name])


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    variant: VariantConfig = field(default_factory=VariantConfig)
    slices: int = 12
    unified_channels: int = 64
    ca_reduction: int = 16
    div_eps: float = 1e-6
    bn_eps: float = 1e-5
    drm_hidden: Optional[int] = None
    seed: int = 0

    def validate(self) -> None:
        self.encoder.validate()
        self.variant.validate()
        if self.slices < 1:
            raise ConfigError("slices must be >= 1")
        if self.unified_channels < 1:
            raise ConfigError("unified_channels must be >= 1")
        if self.div_eps <= 0 or self.bn_eps <= 0:
            raise ConfigError("div_eps and bn_eps must be positive")


@dataclass
class TrainConfig:
    lr: float = 1e-5
    epochs: int = 50
    decay_epoch: int = 40
    decay_factor: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True
    seed: int = 0
    max_iterations: Optional[int] = None

    def validate(self) -> None:
        if self.lr <= 0 or self.epochs < 1:
            raise ConfigError("lr must be positive and epochs >= 1")


@dataclass
class SynthSpec:
    count: int = 4
    size: int = 256
    slices: int = 12
    r_max: int = 6
    n_objects: int = 3
    min_radius: float = 0.12
    max_radius: float = 0.28
    focal_depths: Optional[tuple] = None
    blur: str = "box"
    seed: int = 0

    def depths(self) -> tuple:
        if self.focal_depths is not None:
            return tuple(float(d) for d in self.focal_depths)
        if self.slices == 1:
            return (0.5,)
        return tuple(j / (self.slices - 1) for j in range(self.slices))

    def validate(self) -> None:
        d = self.depths()
        if len(d) != self.slices:
            raise ConfigError(f"focal_depths has {len(d)} entries, slices={self.slices}")
        if any(b <= a for a, b in zip(d, d[1:])) or min(d) < 0 or max(d) > 1:
            raise ConfigError("focal depths must be strictly increasing within [0, 1]")
        if self.r_max < 1:
            raise ConfigError("r_max must be >= 1")
        if self.blur not in ("box", "gaussian"):
            raise ConfigError(f"unknown blur kernel {self.blur!r}")


@dataclass
class DataConfig:
    path: Optional[str] = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    shuffle_seed: int = 0


@dataclass
class IOConfig:
    checkpoint: str = "checkpoint.bin"
    report_dir: str = "reports"
    figures: bool = True


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.data.synth.validate()
        if self.data.synth.slices != self.model.slices and self.data.path is None:
            raise ConfigError(f"synthetic slices ({self.data.synth.slices}) != model slices ({self.model.slices})")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def paper_preset() -> RunConfig:
    """Full-scale settings: 256x256 input, VGG-19 widths, 12 slices."""
    return RunConfig().validate()


def toy_preset() -> RunConfig:
    """Desk-scale settings used by the test suite and CI."""
    cfg = RunConfig()
    cfg.model.encoder = EncoderConfig(widths=scaled_widths(0.25), input_size=64)
    cfg.model.unified_channels = 16
    cfg.train = TrainConfig(lr=2e-3, epochs=75, decay_epoch=60, augment=False)
    cfg.data.synth = SynthSpec(count=4, size=64, slices=12, r_max=4)
    return cfg.validate()


PRESETS = {"paper": paper_preset, "toy": toy_preset}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


# ---------------------------------------------------------------------------
# dict/JSON round-trip
# ---------------------------------------------------------------------------

def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _coerce(tp, value, path: str):
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if _is_dataclass_type(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return merge_into(tp(), value, path)
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def merge_into(obj, data: dict, path: str = ""):
    """Overlay ``data`` onto dataclass instance ``obj`` (nested sections merge)."""
    hints = get_type_hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key '{key_path}'")
        tp = hints[key]
        current = getattr(obj, key)
        if _is_dataclass_type(tp) and isinstance(value, dict) and current is not None:
            merge_into(current, value, key_path)
        else:
            setattr(obj, key, _coerce(tp, value, key_path))
    return obj


def run_config_from_dict(data: dict, base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base if base is not None else toy_preset()
    return merge_into(cfg, data).validate()


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return run_config_from_dict(data, base)
