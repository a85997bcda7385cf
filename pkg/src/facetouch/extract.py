"""End-to-end feature extraction: landmark streams to a feature matrix.

Per video: estimate face regions and appearance descriptors on the raw
pixel-space landmarks, then normalize/smooth/interpolate and compute the
geometrical and temporal features, concatenate in manifest order, attach
labels, and run the per-video outlier cleanup.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .features import TemporalWindowSpec, assemble_from_arrays, \
    attach_hog_columns
from .imaging import HogConfig, face_hog_features, \
    face_region_confidences_arrays
from .ingest import DatasetManifest, LoadStats, attach_labels, load_labels, \
    load_video
from .model import FeatureMatrix
from .preprocess import NormalizationParams, clean_features, \
    normalize_arrays, smooth_arrays, video_to_arrays

log = logging.getLogger(__name__)


def extract_video(video, with_hog: bool = False,
                  params: NormalizationParams = NormalizationParams(),
                  hog_config: HogConfig = HogConfig()) -> FeatureMatrix:
    """Feature rows for one loaded VideoSequence."""
    arr = video_to_arrays(video)
    if with_hog:
        hog_rows, conf = face_hog_features(video, hog_config)
    else:
        conf = face_region_confidences_arrays(arr)
        hog_rows = None
    arr = smooth_arrays(normalize_arrays(arr, params, video.video_id),
                        video.fps, params)
    matrix = assemble_from_arrays(
        arr, video.video_id,
        np.array([f.frame_index for f in video.frames]), conf,
        TemporalWindowSpec(fps=video.fps))
    if with_hog:
        matrix = attach_hog_columns(matrix, hog_rows)
    return matrix


def extract_dataset(manifest: DatasetManifest, with_hog: bool = False,
                    params: NormalizationParams = NormalizationParams(),
                    hog_config: HogConfig = HogConfig(),
                    strict_labels: bool = True,
                    stats: Optional[LoadStats] = None) -> FeatureMatrix:
    """Extract, label and clean the whole dataset, in manifest video order."""
    parts = []
    for entry in manifest.videos:
        video = load_video(entry, stats=stats)
        matrix = extract_video(video, with_hog=with_hog, params=params,
                               hog_config=hog_config)
        if entry.labels_path:
            records = load_labels(entry.labels_path, strict=strict_labels)
            matrix = attach_labels(matrix, records)
        parts.append(matrix)
        log.debug("extracted %s: %d frames", entry.video_id, len(matrix))
    first = parts[0]
    merged = FeatureMatrix(
        manifest=first.manifest,
        rows=np.concatenate([p.rows for p in parts], axis=0),
        group_ids=[g for p in parts for g in p.group_ids],
        frame_indices=np.concatenate([p.frame_indices for p in parts]),
        labels=None if any(p.labels is None for p in parts)
        else np.concatenate([p.labels for p in parts], axis=0))
    return clean_features(merged)
