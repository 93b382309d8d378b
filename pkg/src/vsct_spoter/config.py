"""Flat ``key = value`` run configuration shared by the CLI and scripts."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .model import SpoterConfig
from .preprocess import AugmentationDistribution
from .training import TrainConfig, VsctConfig, default_vsct_augmentation


class ConfigError(ValueError):
    pass


_VSCT_AUG = default_vsct_augmentation()
_BASE_AUG = AugmentationDistribution()


@dataclass
class RunConfig:
    train_data: str | None = None
    val_data: str | None = None
    val_mapping: str | None = None
    out: str | None = None
    seed: int = 0
    # optimization
    epochs: int = 130
    learning_rate: float = 0.001
    momentum: float = 0.0
    weight_decay: float = 0.0
    batch_size: int = 1
    use_normalization: bool = True
    use_augmentation: bool = True
    use_balanced_sampling: bool = False
    use_vsct: bool = False
    vsct_gamma: float = 0.2
    vsct_tau: float = 1.0
    vsct_tau_base: str = "restricted"
    # model
    encoder_layers: int = 6
    decoder_layers: int = 6
    heads: int = 11
    ff_dim: int = 1024
    max_frames: int = 256
    dropout_rate: float = 0.0
    init_mode: str = "faithful"
    subsample_frames: bool = False
    # base augmentation
    aug_rotate_max_deg: float = _BASE_AUG.rotate_max_deg
    aug_squeeze_max_frac: float = _BASE_AUG.squeeze_max_frac
    aug_perspective_max_frac: float = _BASE_AUG.perspective_max_frac
    aug_arm_joint_max_deg: float = _BASE_AUG.arm_joint_max_deg
    aug_apply_prob: float = _BASE_AUG.apply_prob
    # augmentation used in the VSCT pass
    vsct_aug_rotate_max_deg: float = _VSCT_AUG.rotate_max_deg
    vsct_aug_squeeze_max_frac: float = _VSCT_AUG.squeeze_max_frac
    vsct_aug_perspective_max_frac: float = _VSCT_AUG.perspective_max_frac
    vsct_aug_arm_joint_max_deg: float = _VSCT_AUG.arm_joint_max_deg
    vsct_aug_apply_prob: float = _VSCT_AUG.apply_prob

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"str | None": str, "int": int, "float": float, "bool": bool, "str": str}
        return {f.name: hints[f.type if isinstance(f.type, str) else f.type.__name__] for f in fields(cls)}

    def update(self, values: dict[str, Any]) -> "RunConfig":
        types = self.field_types()
        for key, value in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, coerce(key, value, types[key]))
        return self

    def augmentation(self, prefix: str = "aug_") -> AugmentationDistribution:
        return AugmentationDistribution(
            getattr(self, f"{prefix}rotate_max_deg"),
            getattr(self, f"{prefix}squeeze_max_frac"),
            getattr(self, f"{prefix}perspective_max_frac"),
            getattr(self, f"{prefix}arm_joint_max_deg"),
            getattr(self, f"{prefix}apply_prob"),
        )

    def train_config(self, eval_threads: int = 1) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.seed,
            batch_size=self.batch_size,
            base_augmentation=self.augmentation("aug_"),
            use_augmentation=self.use_augmentation,
            use_normalization=self.use_normalization,
            use_balanced_sampling=self.use_balanced_sampling,
            use_vsct=self.use_vsct,
            eval_threads=eval_threads,
        )

    def vsct_config(self) -> VsctConfig:
        return VsctConfig(self.vsct_gamma, self.vsct_tau, self.augmentation("vsct_aug_"), self.vsct_tau_base)

    def model_config(self, num_classes: int) -> SpoterConfig:
        return SpoterConfig(
            num_classes=num_classes,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            heads=self.heads,
            ff_dim=self.ff_dim,
            max_frames=self.max_frames,
            dropout_rate=self.dropout_rate,
            init_mode=self.init_mode,
        )

    def validate(self) -> None:
        """Build every derived config once so range errors surface before any work."""
        try:
            self.train_config()
            self.vsct_config()
            self.model_config(num_classes=2)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for key in ("train_data", "val_data", "val_mapping"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key}: no such file {path}")

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, value: Any, kind: type) -> Any:
    if value is None:
        return None
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        values[key] = value
    return values


def load_config_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text)
