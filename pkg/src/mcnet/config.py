"""
Configuration for mcnet runs.

Each concern has a frozen dataclass that validates itself on creation:
:class:`ModelConfig`, :class:`LossConfig`, :class:`TrainConfig`,
:class:`EvalConfig` and :class:`DataConfig`. :class:`Settings` bundles them.

On disk a configuration is a flat text file of ``key = value`` lines with
``#`` comments. Keys are namespaced by section (``model.scales``,
``loss.beta``, ...); two top-level keys exist: ``preset`` selects a named
bundle of keys and ``seed`` sets every section's seed at once. Unknown keys
are rejected.

>>> settings = load_config("preset = kth-like\\ntrain.iterations = 5")
>>> settings.train.n_context, settings.train.t_train, settings.loss.beta
(10, 10, 0.02)
>>> settings.train.iterations
5
"""

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import ConfigError

#: Normalization modes of the image loss
NORMALIZATION_MODES = ("sum", "mean")

#: Generator architectures
MODEL_KINDS = ("mcnet", "convlstm")

#: Synthetic scene kinds
SCENE_KINDS = (
    "translating-square",
    "bouncing-ball",
    "two-object",
    "periodic-oscillator",
)

#: Named key bundles, applied before any explicit key
PRESETS: Dict[str, Dict[str, str]] = {
    "kth-like": {
        "train.preset": "kth-like",
        "train.n_context": "10",
        "train.t_train": "10",
        "loss.beta": "0.02",
        "eval.steps": "20",
    },
    "ucf-like": {
        "train.preset": "ucf-like",
        "train.n_context": "4",
        "train.t_train": "1",
        "loss.beta": "0.001",
        "eval.steps": "8",
    },
}


def _positive(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if value <= 0:
            raise ConfigError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the generator and discriminator."""

    frame_height: int = 32
    frame_width: int = 32
    channels: int = 1
    #: number of pooling stages
    scales: int = 3
    content_widths: Tuple[int, ...] = (16, 32, 64)
    content_convs: Tuple[int, ...] = (2, 2, 3)
    motion_widths: Tuple[int, ...] = (16, 32, 64)
    motion_kernels: Tuple[int, ...] = (5, 5, 7)
    comb_widths: Tuple[int, ...] = (64, 32, 64)
    lstm_kernel: int = 3
    residual_convs: int = 2
    residual: bool = True
    kind: str = "mcnet"
    disc_widths: Tuple[int, ...] = (16, 32, 64, 64)
    disc_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        _positive(
            self, "frame_height", "frame_width", "channels", "scales", "residual_convs"
        )
        factor = 2**self.scales
        if self.frame_height % factor or self.frame_width % factor:
            raise ConfigError(
                f"frame size {self.frame_height}x{self.frame_width} is not "
                f"divisible by 2**scales = {factor}"
            )
        for name in (
            "content_widths",
            "content_convs",
            "motion_widths",
            "motion_kernels",
        ):
            value = getattr(self, name)
            if len(value) != self.scales:
                raise ConfigError(
                    f"{name} needs {self.scales} entries (one per scale), got {value}"
                )
            if any(v <= 0 for v in value):
                raise ConfigError(f"{name} entries must be positive, got {value}")
        if any(k % 2 == 0 for k in self.motion_kernels + (self.lstm_kernel,)):
            raise ConfigError("kernel sizes must be odd")
        if not self.comb_widths or any(v <= 0 for v in self.comb_widths):
            raise ConfigError(f"comb_widths must be positive, got {self.comb_widths}")
        if self.comb_widths[-1] != self.content_widths[-1]:
            raise ConfigError(
                "the last combination width must equal the top content width "
                f"({self.comb_widths[-1]} != {self.content_widths[-1]})"
            )
        if not self.disc_widths or any(v <= 0 for v in self.disc_widths):
            raise ConfigError(f"disc_widths must be positive, got {self.disc_widths}")
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")

    @property
    def frame_shape(self) -> Tuple[int, int, int]:
        """``(channels, height, width)`` of one frame."""
        return (self.channels, self.frame_height, self.frame_width)

    def config_hash(self) -> bytes:
        """
        Eight-byte fingerprint of the architecture.

        The seed does not change the architecture and is left out.

        >>> ModelConfig().config_hash() == ModelConfig(seed=7).config_hash()
        True
        >>> ModelConfig().config_hash() == ModelConfig(residual=False).config_hash()
        False
        """
        text = "\n".join(
            f"{key} = {value}"
            for key, value in _section_items(self)
            if key != "seed"
        )
        return hashlib.sha256(text.encode("utf-8")).digest()[:8]


@dataclass(frozen=True)
class LossConfig:
    """Weights and exponents of the training objective."""

    alpha: float = 1.0
    beta: float = 0.001
    p: float = 2.0
    lam: float = 1.0
    normalization: str = "mean"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(
                f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}"
            )
        if self.p < 1 or self.lam < 1:
            raise ConfigError(f"p and lam must be >= 1, got {self.p}, {self.lam}")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(
                f"normalization must be one of {NORMALIZATION_MODES}, "
                f"got {self.normalization!r}"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization loop settings."""

    n_context: int = 4
    t_train: int = 1
    batch_size: int = 4
    iterations: int = 500
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 100
    preset: str = "ucf-like"
    #: discriminator updates per generator update
    disc_steps: int = 1
    ema_decay: float = 0.95
    max_failures: int = 3
    log_interval: int = 10
    progress: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.n_context < 2:
            raise ConfigError(f"n_context must be at least 2, got {self.n_context}")
        _positive(
            self,
            "t_train",
            "batch_size",
            "learning_rate",
            "epsilon",
            "checkpoint_interval",
            "disc_steps",
            "max_failures",
            "log_interval",
        )
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("beta1", "beta2", "ema_decay"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")

    @property
    def clip_length(self) -> int:
        """Frames one training window needs."""
        return self.n_context + self.t_train


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol settings."""

    steps: int = 8
    threshold: float = 0.2
    workers: int = 1

    def __post_init__(self):
        _positive(self, "steps", "workers")
        if not 0 <= self.threshold <= 1:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class DataConfig:
    """Synthetic dataset settings used by ``gen-data``."""

    kind: str = "translating-square"
    count: int = 20
    length: int = 40
    height: int = 32
    width: int = 32
    channels: int = 1
    object_size: int = 8
    max_speed: int = 2
    background: float = 0.0
    foreground: float = 1.0
    drift: Tuple[int, ...] = (0, 0)
    texture: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"kind must be one of {SCENE_KINDS}, got {self.kind!r}")
        _positive(
            self, "count", "length", "height", "width", "channels", "object_size"
        )
        if self.max_speed < 0:
            raise ConfigError(f"max_speed must be >= 0, got {self.max_speed}")
        if len(self.drift) != 2:
            raise ConfigError(f"drift needs two entries (dy, dx), got {self.drift}")


@dataclass(frozen=True)
class Settings:
    """The effective configuration of a run."""

    preset: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def loss(self) -> LossConfig:
        """Shortcut for ``train.loss``."""
        return self.train.loss


@dataclass(frozen=True)
class RunConfig:
    """What the command line asked for, before the config is resolved."""

    command: str
    config_path: Optional[Path] = None
    overrides: Tuple[str, ...] = ()
    out_dir: Optional[Path] = None
    seed: Optional[int] = None


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "data": DataConfig,
}


def _fields(cls: type) -> Dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {
        f.name: hints[f.name]
        for f in dataclasses.fields(cls)
        if not dataclasses.is_dataclass(hints[f.name])
    }


def _section_items(obj: Any) -> List[Tuple[str, str]]:
    return [(name, format_value(getattr(obj, name))) for name in _fields(type(obj))]


def format_value(value: Any) -> str:
    """
    Render a config value in the text format.

    >>> format_value((16, 32, 64))
    '16,32,64'
    >>> format_value(True)
    'true'
    >>> format_value(0.0001)
    '0.0001'
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(text: str, kind: Any, key: str = "value") -> Any:
    """
    Convert the text of a config value into ``kind``.

    :raises ConfigError: if the text cannot be converted
    """
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        origin = typing.get_origin(kind)
        if origin is tuple:
            inner = typing.get_args(kind)[0]
            parts = [part for part in text.split(",") if part.strip()]
            return tuple(parse_value(part, inner, key) for part in parts)
    except ValueError:
        name = getattr(kind, "__name__", kind)
        raise ConfigError(f"cannot parse {key} = {text!r} as {name}")
    raise ConfigError(f"unsupported type for {key}")


def parse_lines(text: str, source: str = "<config>") -> List[Tuple[str, str]]:
    """
    Split config text into ``(key, value)`` pairs, dropping comments.

    :raises ConfigError: for a line without ``=``
    """
    pairs = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _split_override(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def resolve(
    pairs: Sequence[Tuple[str, str]],
    overrides: Sequence[Tuple[str, str]] = (),
    seed: Optional[int] = None,
) -> Settings:
    """
    Build :class:`Settings` from key/value pairs.

    Resolution order: defaults, the preset bundle, ``pairs``, ``overrides``
    and finally ``seed``.

    :raises ConfigError: for unknown keys, presets, or invalid values
    """
    preset = None
    for key, value in list(pairs) + list(overrides):
        if key == "preset":
            preset = value
    if preset is not None and preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}"
        )

    values: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
    bundle = list(PRESETS[preset].items()) if preset else []
    for key, value in bundle + list(pairs) + list(overrides):
        if key == "preset":
            continue
        if key == "seed":
            number = parse_value(value, int, key)
            for section in ("model", "train", "data"):
                values[section]["seed"] = number
            continue
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in _fields(cls):
            raise ConfigError(f"unknown config key {key!r}")
        values[section][name] = parse_value(value, _fields(cls)[name], key)
    if seed is not None:
        for section in ("model", "train", "data"):
            values[section]["seed"] = seed

    loss = LossConfig(**values["loss"])
    return Settings(
        preset=preset,
        model=ModelConfig(**values["model"]),
        train=TrainConfig(loss=loss, **values["train"]),
        eval=EvalConfig(**values["eval"]),
        data=DataConfig(**values["data"]),
    )


def load_config(
    source: Union[str, Path, None] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
) -> Settings:
    """
    Load a configuration from a file path or from config text.

    :param source: a :class:`~pathlib.Path` to read, config text, or None
        for the defaults
    :param overrides: ``key=value`` strings applied after the file
    :param seed: if given, replaces every section's seed
    :raises ConfigError: for any invalid content
    :raises OSError: if the file cannot be read
    """
    if source is None:
        pairs: List[Tuple[str, str]] = []
    elif isinstance(source, Path):
        pairs = parse_lines(source.read_text(encoding="utf-8"), str(source))
    else:
        pairs = parse_lines(source)
    return resolve(pairs, [_split_override(o) for o in overrides], seed)


def dump_config(settings: Settings) -> str:
    """
    Render the effective configuration; :func:`load_config` reads it back.

    >>> s = load_config("preset = ucf-like\\nmodel.residual = false")
    >>> load_config(dump_config(s)) == s
    True
    """
    lines = ["# effective mcnet configuration"]
    if settings.preset:
        lines.append(f"preset = {settings.preset}")
    sections = {
        "model": settings.model,
        "loss": settings.loss,
        "train": settings.train,
        "eval": settings.eval,
        "data": settings.data,
    }
    for section, obj in sections.items():
        lines.append("")
        lines.extend(f"{section}.{key} = {value}" for key, value in _section_items(obj))
    return "\n".join(lines) + "\n"


def known_keys() -> List[str]:
    """All accepted config keys, sorted."""
    keys = ["preset", "seed"]
    for section, cls in _SECTIONS.items():
        keys.extend(f"{section}.{name}" for name in _fields(cls))
    return sorted(keys)


def as_mapping(settings: Settings) -> Mapping[str, str]:
    """The dumped configuration as an ordered ``key -> value`` mapping."""
    return dict(parse_lines(dump_config(settings)))
