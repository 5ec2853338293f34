"""Pipeline configuration: INI file, ``VRID_*`` environment overrides.

The file format is flat ``key = value`` pairs under sections; any value
can be overridden with an environment variable named
``VRID_<SECTION>_<KEY>`` (for example ``VRID_TRAIN_EPOCHS=5``).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from .fusion import TrainConfig
from .ingest import DEFAULT_SHAPE_EXPAND
from .ocr_stream import DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_IOU
from .synthgen import SynthSpec

ENV_PREFIX = "VRID_"


class ConfigError(ValueError):
    pass


@dataclass
class OcrTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("hyperparameters must be positive")


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    output_dir: str = "out"
    shape_expand: tuple[float, float, float] = DEFAULT_SHAPE_EXPAND
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    nms_iou: float = DEFAULT_NMS_IOU
    pair_negative_ratio: float | None = None  # None keeps every non-matching pair
    train: TrainConfig = field(default_factory=TrainConfig)
    ocr: OcrTrainConfig = field(default_factory=OcrTrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def validate(self) -> "PipelineConfig":
        if not (0.0 <= self.conf_threshold <= 1.0 and 0.0 <= self.nms_iou <= 1.0):
            raise ConfigError("decoder thresholds must lie in [0, 1]")
        if any(v <= 0 for v in self.shape_expand[:2]):
            raise ConfigError("shape expansion factors must be positive")
        if self.pair_negative_ratio is not None and self.pair_negative_ratio <= 0:
            raise ConfigError("pairs.negative_ratio must be positive when set")
        return self


def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _apply_section(obj, section: str, items: dict[str, str]):
    valid = {f.name: getattr(obj, f.name) for f in fields(obj)}
    updates = {}
    for key, raw in items.items():
        if key not in valid:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        current = valid[key]
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",")]
            updates[key] = tuple(_coerce(p, current[0]) for p in parts)
        else:
            updates[key] = _coerce(raw, current)
    for key, value in updates.items():
        setattr(obj, key, value)


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> PipelineConfig:
    """Build a config from defaults, an optional INI file, and the environment."""
    cfg = PipelineConfig()
    parser = configparser.ConfigParser()
    if path is not None:
        text = Path(path).read_text()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from exc

    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, raw)

    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "paths":
            if "data_dir" in items:
                cfg.data_dir = items.pop("data_dir")
            if "output_dir" in items:
                cfg.output_dir = items.pop("output_dir")
            if items:
                raise ConfigError(f"unknown key in [paths]: {sorted(items)}")
        elif section == "shape":
            expand = dict(zip(("wfactor", "hfactor", "vshift"), cfg.shape_expand))
            for key, raw in items.items():
                if key not in expand:
                    raise ConfigError(f"unknown key {key!r} in section [shape]")
                expand[key] = float(raw)
            cfg.shape_expand = (expand["wfactor"], expand["hfactor"], expand["vshift"])
        elif section == "decoder":
            for key, raw in items.items():
                if key == "conf_threshold":
                    cfg.conf_threshold = float(raw)
                elif key == "nms_iou":
                    cfg.nms_iou = float(raw)
                else:
                    raise ConfigError(f"unknown key {key!r} in section [decoder]")
        elif section == "pairs":
            for key, raw in items.items():
                if key != "negative_ratio":
                    raise ConfigError(f"unknown key {key!r} in section [pairs]")
                cfg.pair_negative_ratio = None if raw.lower() in ("", "none", "off") else float(raw)
        elif section == "train":
            _apply_section(cfg.train, section, items)
        elif section == "ocr":
            _apply_section(cfg.ocr, section, items)
        elif section == "synth":
            synth_kwargs = {f.name: getattr(cfg.synth, f.name) for f in fields(SynthSpec)}
            for key, raw in items.items():
                if key not in synth_kwargs:
                    raise ConfigError(f"unknown key {key!r} in section [synth]")
                current = synth_kwargs[key]
                if isinstance(current, tuple):
                    parts = [p.strip() for p in raw.split(",")]
                    synth_kwargs[key] = tuple(_coerce(p, current[0]) for p in parts)
                else:
                    synth_kwargs[key] = _coerce(raw, current)
            cfg.synth = SynthSpec(**synth_kwargs)
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return cfg.validate()


def config_dict(cfg: PipelineConfig) -> dict:
    return {
        "paths": {"data_dir": cfg.data_dir, "output_dir": cfg.output_dir},
        "shape": dict(zip(("wfactor", "hfactor", "vshift"), cfg.shape_expand)),
        "decoder": {"conf_threshold": cfg.conf_threshold, "nms_iou": cfg.nms_iou},
        "pairs": {"negative_ratio": cfg.pair_negative_ratio},
        "train": asdict(cfg.train),
        "ocr": asdict(cfg.ocr),
        "synth": asdict(cfg.synth),
    }


def config_hash(cfg: PipelineConfig) -> str:
    canon = json.dumps(config_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_manifest(outdir: str | Path, cfg: PipelineConfig, command: str,
                   extra: dict | None = None) -> Path:
    """Record everything needed to reproduce a run."""
    import cv2
    import numpy
    import torch

    from . import __version__

    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": config_dict(cfg),
        "seed": cfg.train.seed,
        "versions": {
            "vrid": __version__,
            "python": sys.version.split()[0],
            "torch": torch.__version__,
            "numpy": numpy.__version__,
            "opencv": cv2.__version__,
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
