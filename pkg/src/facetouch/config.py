"""Run configuration: one JSON file with defaults for every tunable knob.

Unknown keys are rejected so typos fail loudly instead of silently running
with defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os

from .errors import MalformedManifest, MissingFile

DEFAULTS = {
    "seed": 0,
    "labels": {"strict": True},
    "preprocess": {
        "low_confidence_threshold": 0.1,
        "median_window": 5,
        "mean_window": 3,
        "max_gap_frames": None,
    },
    "grid": {
        "C": [0.1, 1.0, 10.0, 100.0],
        "gamma": ["scale", 0.01, 0.1],
        "pca_threshold": [0.90, 0.95, 0.99],
        "latent": [16, 32, 64],
        "epochs": [50, 100],
    },
    "svm": {"class_weight": "balanced"},
    "augment": True,
    "folds": 5,
    "synth": {
        "n_videos": 10,
        "frames_per_video": 200,
        "fps": 10.0,
        "image_size": 256,
        "noise_std_px": 2.0,
        "hand_dropout_prob": 0.1,
        "face_dropout_prob": 0.1,
        "touch_event_rate": None,
        "target_prevalence": 0.30,
        "mullen_coupling": 0.6,
        "render_frames": True,
    },
    "evaluation": {"significance_alpha": 0.01, "mullen_age_cutoff": 5.0},
}


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise MalformedManifest(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None = None) -> dict:
    """Defaults merged with the optional JSON config file."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedManifest(f"{path}: config must be a JSON object")
    return _merge(DEFAULTS, doc)


def config_hash(cfg: dict) -> str:
    """Stable short digest used in provenance headers."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
