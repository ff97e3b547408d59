"""Run configuration: sectioned ``key = value`` files read with :mod:`configparser`."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .audio import ConfigError, FrontendConfig, SpecAugmentConfig, build_mel_filterbank
from .model import ModelConfig
from .text import CharSet, load_charset
from .training import TrainConfig

# config key -> (dataclass field, converter); a None field is validated but not stored
_FRONTEND_KEYS = {
    "sample_rate": ("sample_rate", int),
    "n_fft": ("n_fft", int),
    "hop_length": ("hop_length", int),
    "n_mels": ("n_mels", int),
    "window": ("window", str),
    "log_compress": ("log_compress", "bool"),
}
_MODEL_KEYS = {
    "N": ("n_rcnn_blocks", int),
    "M": ("n_rnn_blocks", int),
    "embedding_size": ("rnn_hidden", int),
    "cnn_channels": ("cnn_channels", int),
    "stem_stride": ("stem_stride", int),
    "dropout": ("dropout_p", float),
    "batch_norm": ("batch_norm", "bool"),
    "activation_function": (None, str),
}
_TRAINING_KEYS = {
    "max_learning_rate": ("max_lr", float),
    "batch_size": ("batch_size", int),
    "epochs": ("epochs", int),
    "early_stopping": ("early_stop_patience", int),
    "optimizer": ("optimizer", str),
    "schedule": ("schedule", str),
    "weight_decay": ("weight_decay", float),
    "momentum": ("momentum", float),
    "grad_clip": ("grad_clip", float),
    "seed": ("seed", int),
    "target_loss": ("target_loss", float),
}
_SPECAUGMENT_KEYS = {
    "freq_masks": ("n_freq_masks", int),
    "time_masks": ("n_time_masks", int),
    "max_freq_width": ("max_freq_mask_width", int),
    "max_time_width": ("max_time_mask_width", int),
}
_DATA_KEYS = ("charset", "train_manifest", "val_manifest", "out_dir", "min_duration", "max_duration", "max_words")
_OPTIMIZERS = ("adamw", "nesterov")
_SECTIONS = {"frontend", "model", "training", "specaugment", "data"}


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendConfig
    model: ModelConfig
    training: TrainConfig
    specaugment: SpecAugmentConfig | None
    charset: str = "fon"
    train_manifest: Path | None = None
    val_manifest: Path | None = None
    out_dir: Path | None = None
    min_duration: float = 0.0
    max_duration: float = float("inf")
    max_words: float = float("inf")
    source: str = "<defaults>"

    def load_charset(self) -> CharSet:
        return load_charset(self.charset)

    def check(self, cs: CharSet | None = None) -> CharSet:
        """Cross-field validation; returns the loaded charset."""
        if self.model.n_mels != self.frontend.n_mels:
            raise ConfigError(f"model n_mels {self.model.n_mels} != frontend n_mels {self.frontend.n_mels}")
        build_mel_filterbank(self.frontend)
        cs = cs or self.load_charset()
        if self.model.charset_size != len(cs):
            raise ConfigError(f"model output size {self.model.charset_size} != charset size {len(cs)}")
        return cs


def _convert(cp: configparser.ConfigParser, section: str, key: str, conv):
    try:
        if conv == "bool":
            return cp.getboolean(section, key)
        raw = cp.get(section, key).strip()
        if conv is str:
            return raw
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def _section(cp, name: str, table: dict) -> dict:
    if not cp.has_section(name):
        return {}
    out = {}
    for key in cp[name]:
        if key not in table:
            raise ConfigError(f"[{name}] unknown key {key!r}; known: {sorted(table)}")
        field, conv = table[key]
        value = _convert(cp, name, key, conv)
        if field is None:
            if key == "activation_function" and value.lower() != "gelu":
                raise ConfigError(f"[{name}] activation_function: only gelu is implemented, got {value!r}")
            continue
        out[field] = value
    return out


def parse_config(text: str, source: str = "<string>", base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys such as N and M are case-sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")

    frontend = FrontendConfig(**_section(cp, "frontend", _FRONTEND_KEYS))
    training_kw = _section(cp, "training", _TRAINING_KEYS)
    if "optimizer" in training_kw:
        name = training_kw["optimizer"].lower()
        if name not in _OPTIMIZERS:
            raise ConfigError(f"[training] optimizer must be one of {_OPTIMIZERS}, got {name!r}")
        training_kw["optimizer"] = name
    try:
        training = TrainConfig(**training_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: [training] {exc}") from None

    data = {}
    if cp.has_section("data"):
        for key in cp["data"]:
            if key not in _DATA_KEYS:
                raise ConfigError(f"[data] unknown key {key!r}; known: {sorted(_DATA_KEYS)}")
            data[key] = cp.get("data", key).strip()
    charset = data.get("charset", "fon")
    paths = {}
    for key in ("train_manifest", "val_manifest", "out_dir"):
        if key in data:
            p = Path(data[key])
            paths[key] = p if p.is_absolute() or base_dir is None else base_dir / p
    if base_dir is not None and charset.endswith(".txt") and not Path(charset).is_absolute():
        charset = str(base_dir / charset)

    model_kw = _section(cp, "model", _MODEL_KEYS)
    try:
        cs = load_charset(charset)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{source}: cannot load charset {charset!r}: {exc}") from None
    try:
        model = ModelConfig(n_mels=frontend.n_mels, charset_size=len(cs), **model_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: [model] {exc}") from None

    specaugment = None
    if cp.has_section("specaugment"):
        specaugment = SpecAugmentConfig(**_section(cp, "specaugment", _SPECAUGMENT_KEYS))

    def _float(key, default):
        try:
            return float(data[key]) if key in data else default
        except ValueError:
            raise ConfigError(f"[data] {key} must be a number") from None

    cfg = RunConfig(
        frontend=frontend,
        model=model,
        training=training,
        specaugment=specaugment,
        charset=charset,
        min_duration=_float("min_duration", 0.0),
        max_duration=_float("max_duration", float("inf")),
        max_words=_float("max_words", float("inf")),
        source=source,
        **paths,
    )
    cfg.check(cs)
    return cfg


def shipped_configs() -> list[str]:
    root = resources.files("okwugbe.configs")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(path: str | Path) -> RunConfig:
    """Read a config file, or a shipped one by name (``fon``, ``igbo``, ``synthetic``)."""
    p = Path(path)
    if not p.exists() and str(path) in shipped_configs():
        text = resources.files("okwugbe.configs").joinpath(f"{path}.cfg").read_text(encoding="utf-8")
        return parse_config(text, f"{path}.cfg")
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, str(p), p.parent)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Replace top-level fields, or training fields via ``seed``/``epochs``."""
    training_fields = {k: kw.pop(k) for k in ("seed", "epochs") if k in kw and kw[k] is not None}
    if training_fields:
        cfg = replace(cfg, training=replace(cfg.training, **training_fields))
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg
