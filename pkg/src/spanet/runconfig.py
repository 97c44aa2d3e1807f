"""Run configuration: `[section] key = value` text files.

Every key has a documented default; unknown sections or keys are hard
errors. `render()` emits the effective config (defaults applied), which
parses back to an identical RunConfig.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .network import NetworkConfig, full_config, toy_config
from .synth import CLASS_NAMES, class_id
from .training import CircleLossConfig, LRSchedule

_PRESET_DEFAULTS = {
    "full": {"num_classes": 11, "input_size": 512},
    "toy": {"num_classes": 4, "input_size": 64},
}


@dataclass
class RunConfig:
    # [network]
    preset: str = "toy"
    ratio: float = 0.5
    num_classes: int | None = None  # None -> preset default
    input_size: int | None = None
    attention_reduction: int = 8
    # [training]
    epochs: int = 10
    batch_size: int = 32
    loss: str = "circle"
    gamma: float = 32.0
    margin: float = 0.25
    momentum: float = 0.9
    lr_schedule: str = "cosine"
    lr_max: float = 0.05
    lr_min: float = 0.0
    period: int = 0  # 0 -> epochs
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    seed: int = 0
    # [data]
    manifest: str = ""
    data_classes: str = "all"  # the run's label space
    mean: float = 0.5
    std: float = 0.5
    # [generate]
    gen_out_dir: str = ""
    gen_classes: str = "all"
    gen_per_class: int = 10
    gen_size: int = 64
    gen_seed: int = 0
    gen_train_fraction: float = 0.8
    gen_val_fraction: float = 0.0
    # [output]
    run_dir: str = "runs/run"

    def network_config(self) -> NetworkConfig:
        defaults = _PRESET_DEFAULTS[self.preset]
        classes = self.num_classes if self.num_classes is not None else defaults["num_classes"]
        size = self.input_size if self.input_size is not None else defaults["input_size"]
        if self.preset == "full":
            cfg = full_config(num_classes=classes, ratio=self.ratio,
                               reduction=self.attention_reduction)
            if size != 512:
                cfg = NetworkConfig(
                    input_size=(3, size, size), rows=cfg.rows, num_classes=classes,
                    head_width_1=cfg.head_width_1, head_width_2=cfg.head_width_2,
                    ratio=self.ratio, attention_reduction=self.attention_reduction,
                )
            return cfg
        return toy_config(num_classes=classes, ratio=self.ratio,
                          reduction=self.attention_reduction, input_hw=(size, size))

    def schedule(self) -> LRSchedule:
        period = self.period if self.period > 0 else self.epochs
        return LRSchedule(
            kind="cosine" if self.lr_schedule == "cosine" else "plateau",
            lr_max=self.lr_max,
            lr_min=self.lr_min,
            period=period,
            factor=self.plateau_factor,
            patience=self.plateau_patience,
        )

    def circle(self) -> CircleLossConfig:
        return CircleLossConfig(gamma=self.gamma, margin=self.margin)

    def generator_classes(self):
        return _resolve_classes(self.gen_classes, "[generate] classes")

    def class_names(self):
        """The run's label space: dense position = training label."""
        ids = _resolve_classes(self.data_classes, "[data] classes")
        return tuple(CLASS_NAMES[i] for i in ids)

    def render(self) -> str:
        """The effective config, re-parseable to an identical RunConfig."""
        n = self.network_config()
        lines = [
            "[network]",
            f"preset = {self.preset}",
            f"ratio = {self.ratio!r}",
            f"num_classes = {n.num_classes}",
            f"input_size = {n.input_size[1]}",
            f"attention_reduction = {self.attention_reduction}",
            "",
            "[training]",
            f"epochs = {self.epochs}",
            f"batch_size = {self.batch_size}",
            f"loss = {self.loss}",
            f"gamma = {self.gamma!r}",
            f"margin = {self.margin!r}",
            f"momentum = {self.momentum!r}",
            f"lr_schedule = {self.lr_schedule}",
            f"lr_max = {self.lr_max!r}",
            f"lr_min = {self.lr_min!r}",
            f"period = {self.period}",
            f"plateau_factor = {self.plateau_factor!r}",
            f"plateau_patience = {self.plateau_patience}",
            f"seed = {self.seed}",
            "",
            "[data]",
            f"manifest = {self.manifest}",
            f"classes = {self.data_classes}",
            f"mean = {self.mean!r}",
            f"std = {self.std!r}",
            "",
            "[generate]",
            f"out_dir = {self.gen_out_dir}",
            f"classes = {self.gen_classes}",
            f"per_class = {self.gen_per_class}",
            f"size = {self.gen_size}",
            f"seed = {self.gen_seed}",
            f"train_fraction = {self.gen_train_fraction!r}",
            f"val_fraction = {self.gen_val_fraction!r}",
            "",
            "[output]",
            f"run_dir = {self.run_dir}",
            "",
        ]
        return "\n".join(lines)


def _resolve_classes(spec: str, where: str):
    if spec.strip().lower() == "all":
        return tuple(range(len(CLASS_NAMES)))
    out = []
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(class_id(int(tok) if tok.isdigit() else tok))
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if not out:
        raise ConfigError(f"{where} resolves to an empty list")
    return tuple(out)


_SCHEMA = {
    "network": {
        "preset": ("preset", str),
        "ratio": ("ratio", float),
        "num_classes": ("num_classes", int),
        "input_size": ("input_size", int),
        "attention_reduction": ("attention_reduction", int),
    },
    "training": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "loss": ("loss", str),
        "gamma": ("gamma", float),
        "margin": ("margin", float),
        "momentum": ("momentum", float),
        "lr_schedule": ("lr_schedule", str),
        "lr_max": ("lr_max", float),
        "lr_min": ("lr_min", float),
        "period": ("period", int),
        "plateau_factor": ("plateau_factor", float),
        "plateau_patience": ("plateau_patience", int),
        "seed": ("seed", int),
    },
    "data": {
        "manifest": ("manifest", str),
        "classes": ("data_classes", str),
        "mean": ("mean", float),
        "std": ("std", float),
    },
    "generate": {
        "out_dir": ("gen_out_dir", str),
        "classes": ("gen_classes", str),
        "per_class": ("gen_per_class", int),
        "size": ("gen_size", int),
        "seed": ("gen_seed", int),
        "train_fraction": ("gen_train_fraction", float),
        "val_fraction": ("gen_val_fraction", float),
    },
    "output": {
        "run_dir": ("run_dir", str),
    },
}

_CHOICES = {
    "preset": ("full", "toy"),
    "loss": ("circle", "cross_entropy"),
    "lr_schedule": ("cosine", "plateau"),
}


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc

    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{origin}: unknown key {key!r} in section [{section}]")
            attr, typ = _SCHEMA[section][key]
            try:
                value = typ(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{origin}: [{section}] {key} = {raw!r} is not a valid {typ.__name__}"
                ) from exc
            if attr in _CHOICES and value not in _CHOICES[attr]:
                raise ConfigError(
                    f"{origin}: [{section}] {key} must be one of {_CHOICES[attr]}, got {value!r}"
                )
            setattr(cfg, attr, value)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, origin=str(path))
