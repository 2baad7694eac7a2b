"""Sectioned INI configuration with strict key checking.

Every tunable default lives here. A config file may override any subset;
command-line flags override the file; the fully resolved result is echoed
as JSON into every run's output directory so runs are reproducible from
their artifacts alone.
"""

from __future__ import annotations

import configparser
import copy
import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

DEFAULTS = {
    "data": {
        "seed": 42,
        "n_train_videos": 200,
        "n_eval_videos": 50,
        "clip_length": 16,
        "image_size": 224,
        "num_classes": 4,
        "motion_profile": "bounce",
    },
    "model": {
        "grid_size": 7,
        "stride": 32,
        "anchors": "28x28,42x42,64x64,72x36,36x72",
        "head_init_scale": 0.01,
    },
    "loss": {
        "lambda_act": 5.0,
        "lambda_noact": 1.0,
        "lambda_cls": 1.0,
        "lambda_coord": 5.0,
        "focal_gamma": 2.0,
        "focal_alpha": 0.25,
        "box_loss": "giou",
        "smooth_l1_beta": 1.0,
        "conf_target": "one",
    },
    "train": {
        "seed": 0,
        "assigner": "plus",
        "lr": 0.05,
        "weight_decay": 0.0005,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 8,
        "epochs": 12,
        "milestones": "8,10",
        "lr_decay_factor": 0.1,
    },
    "postprocess": {
        "conf_threshold": 0.005,
        "demo_conf_threshold": 0.3,
        "nms_iou": 0.5,
    },
    "eval": {
        "frame_iou_threshold": 0.5,
        "video_iou_threshold": 0.5,
        "link_iou": 0.3,
        "max_gap": 1,
        "interpolation": "all-point",
    },
}

_CHOICES = {
    ("data", "motion_profile"): ("bounce", "drift"),
    ("loss", "box_loss"): ("giou", "smooth_l1"),
    ("loss", "conf_target"): ("one", "live_iou"),
    ("train", "assigner"): ("plus", "yowo"),
    ("eval", "interpolation"): ("all-point",),
}


def parse_anchors(text):
    """Parse \"WxH,WxH,...\" into an (B, 2) float array."""
    if isinstance(text, np.ndarray):
        return text
    if not isinstance(text, str):
        return np.asarray(text, dtype=float)
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.lower().split("x")
        if len(pieces) != 2:
            raise ConfigError(f"anchor {part!r} is not of the form WxH")
        try:
            pairs.append((float(pieces[0]), float(pieces[1])))
        except ValueError as exc:
            raise ConfigError(f"anchor {part!r} is not numeric") from exc
    if not pairs:
        raise ConfigError("anchor list is empty")
    return np.asarray(pairs, dtype=float)


def parse_milestones(text):
    """Parse \"8,10\" into a strictly increasing list of ints; \"\" is empty."""
    if isinstance(text, (list, tuple)):
        values = [int(v) for v in text]
    else:
        text = text.strip()
        values = [int(p) for p in text.split(",") if p.strip()] if text else []
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"milestones must be strictly increasing, got {values}")
    return values


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(
            f"[{section}] {key} = {raw!r} is not a valid {type(default).__name__}"
        ) from exc


def load_config(path=None, overrides=None):
    """Build the resolved config: defaults <- file <- overrides.

    ``overrides`` maps (section, key) to already-typed values, used for
    command-line flags. Unknown sections or keys raise ConfigError naming
    the offender.
    """
    config = copy.deepcopy(DEFAULTS)

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            if section not in config:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in config[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                config[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])

    for (section, key), value in (overrides or {}).items():
        if section not in config or key not in config[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        config[section][key] = value

    validate_config(config)
    return config


def validate_config(config):
    for (section, key), allowed in _CHOICES.items():
        value = config[section][key]
        if value not in allowed:
            raise ConfigError(
                f"[{section}] {key} must be one of {', '.join(allowed)}; got {value!r}"
            )
    model = config["model"]
    data = config["data"]
    if data["image_size"] != model["grid_size"] * model["stride"]:
        raise ConfigError(
            f"[data] image_size {data['image_size']} must equal "
            f"[model] grid_size * stride = {model['grid_size'] * model['stride']}"
        )
    anchors = parse_anchors(model["anchors"])
    if np.any(anchors <= 0):
        raise ConfigError("[model] anchors must be strictly positive")
    parse_milestones(config["train"]["milestones"])
    for section, key in (
        ("data", "clip_length"),
        ("data", "num_classes"),
        ("train", "batch_size"),
        ("train", "epochs"),
    ):
        if config[section][key] < 1:
            raise ConfigError(f"[{section}] {key} must be at least 1")
    return config


def resolved_json(config):
    """Canonical JSON form of a resolved config (stable byte-for-byte)."""
    return json.dumps(config, sort_keys=True, indent=2) + "\n"


def write_resolved(config, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.resolved.json"
    path.write_text(resolved_json(config))
    return path
