"""Per-video landmark normalization, smoothing, interpolation and the
training-time outlier/imputation cleanup of computed features.

Pose, face and hand coordinates are translated so the neck is the origin and
scaled by the trunk length (neck to mid-hip), which makes every downstream
feature invariant to image scale and translation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import NoUsableTrunk
from .model import (JOINT_INDEX, JOINTS, N_FACE_LANDMARKS, N_HAND_LANDMARKS,
                    FaceFrame, Family, FeatureMatrix, FrameRecord, HandFrame,
                    Keypoint2D, PoseFrame, VideoSequence)

log = logging.getLogger(__name__)

# channel layout of the per-video arrays
POSE_OFS = 0
FACE_OFS = 13
HANDL_OFS = FACE_OFS + N_FACE_LANDMARKS
HANDR_OFS = HANDL_OFS + N_HAND_LANDMARKS
N_POINTS = HANDR_OFS + N_HAND_LANDMARKS  # 123

NECK = JOINT_INDEX["Neck"]
MIDHIP = JOINT_INDEX["MidHip"]

OUTLIER_IQR_FACTOR = 3.0
DEGENERATE_IQR_TOL = 1e-6


@dataclass(frozen=True)
class NormalizationParams:
    origin_joint: str = "Neck"
    scale_definition: str = "TrunkLength"
    low_confidence_threshold: float = 0.1
    median_window: int = 5
    mean_window: int = 3
    max_gap_frames: Optional[int] = None  # None: round(fps), about one second

    def __post_init__(self):
        for w in (self.median_window, self.mean_window):
            if w < 1 or w % 2 == 0:
                raise ValueError("smoothing windows must be odd and >= 1")
        if not 0.0 <= self.low_confidence_threshold < 1.0:
            raise ValueError("confidence threshold must be in [0, 1)")
        if self.origin_joint != "Neck" or self.scale_definition != "TrunkLength":
            raise ValueError("only Neck origin / trunk-length scale supported")

    def gap_limit(self, fps: float) -> int:
        if self.max_gap_frames is not None:
            return self.max_gap_frames
        return max(1, round(fps))


@dataclass
class ImputationStats:
    """Per-feature training means aligned with a manifest."""
    means: np.ndarray
    unobserved: list = field(default_factory=list)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)


# ---------------------------------------------------------------------------
# VideoSequence <-> channel arrays
# ---------------------------------------------------------------------------

@dataclass
class VideoArrays:
    coords: np.ndarray        # (n, N_POINTS, 2)
    conf: np.ndarray          # (n, N_POINTS)
    present: np.ndarray       # (n, N_POINTS) bool
    hand_conf: np.ndarray     # (n, 2): left, right detection confidence
    hand_present: np.ndarray  # (n, 2) bool
    face_present: np.ndarray  # (n,) bool: a FaceFrame existed
    face_space: list          # per-frame source_space (or None)


def video_to_arrays(video: VideoSequence) -> VideoArrays:
    n = len(video)
    coords = np.zeros((n, N_POINTS, 2))
    conf = np.zeros((n, N_POINTS))
    present = np.zeros((n, N_POINTS), dtype=bool)
    hand_conf = np.zeros((n, 2))
    hand_present = np.zeros((n, 2), dtype=bool)
    face_present = np.zeros(n, dtype=bool)
    face_space: list = [None] * n

    def put(t, ofs, kp):
        coords[t, ofs] = (kp.x, kp.y)
        conf[t, ofs] = kp.confidence
        present[t, ofs] = kp.present

    for t, frame in enumerate(video.frames):
        for j, joint in enumerate(JOINTS):
            put(t, POSE_OFS + j, frame.pose.get(joint))
        if frame.face is not None:
            face_present[t] = True
            face_space[t] = frame.face.source_space
            for k, kp in enumerate(frame.face.landmarks):
                put(t, FACE_OFS + k, kp)
        for side, ofs, col in (("Left", HANDL_OFS, 0), ("Right", HANDR_OFS, 1)):
            hand = frame.hand(side)
            if hand is not None:
                hand_present[t, col] = True
                hand_conf[t, col] = hand.detection_confidence
                for k, kp in enumerate(hand.landmarks):
                    put(t, ofs + k, kp)
    return VideoArrays(coords, conf, present, hand_conf, hand_present,
                       face_present, face_space)


def arrays_to_video(video: VideoSequence, arr: VideoArrays) -> VideoSequence:
    frames = []
    for t, frame in enumerate(video.frames):
        def kp(ofs):
            if not arr.present[t, ofs]:
                return Keypoint2D()
            x, y = arr.coords[t, ofs]
            return Keypoint2D(float(x), float(y),
                              float(min(1.0, max(0.0, arr.conf[t, ofs]))),
                              present=True)

        pose = PoseFrame({j: kp(POSE_OFS + i) for i, j in enumerate(JOINTS)})
        face = None
        if arr.face_present[t]:
            face = FaceFrame(
                landmarks=tuple(kp(FACE_OFS + k)
                                for k in range(N_FACE_LANDMARKS)),
                source_space=arr.face_space[t] or "full-frame")
        hands = []
        for side, ofs, col in (("Left", HANDL_OFS, 0), ("Right", HANDR_OFS, 1)):
            if arr.hand_present[t, col]:
                hands.append(HandFrame(
                    side=side,
                    landmarks=tuple(kp(ofs + k)
                                    for k in range(N_HAND_LANDMARKS)),
                    detection_confidence=float(
                        min(1.0, max(0.0, arr.hand_conf[t, col])))))
        frames.append(replace(frame, pose=pose, face=face, hands=tuple(hands)))
    return replace(video, frames=tuple(frames))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize_arrays(arr: VideoArrays, params: NormalizationParams,
                     video_id: str = "?") -> VideoArrays:
    """Array-level normalization (see normalize_video); mutates arr."""
    low = arr.conf < params.low_confidence_threshold
    arr.present &= ~low

    neck_ok = arr.present[:, NECK]
    hip_ok = arr.present[:, MIDHIP]
    both = neck_ok & hip_ok
    trunk = np.linalg.norm(arr.coords[:, NECK] - arr.coords[:, MIDHIP], axis=1)
    usable = both & (trunk > 1e-9)
    if not usable.any():
        raise NoUsableTrunk(f"{video_id}: no frame has both Neck and MidHip")
    median_trunk = float(np.median(trunk[usable]))
    scale = np.where(usable, trunk, median_trunk)

    origin = _fill_nearest(arr.coords[:, NECK], neck_ok)
    # crop-space face landmarks are relative to a crop, leave them untouched
    crop_face = np.array([s == "crop" for s in arr.face_space])
    face_slice = slice(FACE_OFS, FACE_OFS + N_FACE_LANDMARKS)
    saved = arr.coords[crop_face, face_slice].copy() if crop_face.any() \
        else None
    arr.coords[arr.present] = ((arr.coords - origin[:, None, :])
                               / scale[:, None, None])[arr.present]
    if saved is not None:
        arr.coords[crop_face, face_slice] = saved
    return arr


def normalize_video(video: VideoSequence,
                    params: NormalizationParams = NormalizationParams()
                    ) -> VideoSequence:
    """Translate to a neck origin and scale by trunk length, per frame.

    Frames lacking the neck or mid-hip fall back to the video median trunk
    length and the last known neck position; keypoints below the confidence
    threshold are marked missing first.
    """
    if len(video) == 0:
        raise ValueError("empty video")
    arr = normalize_arrays(video_to_arrays(video), params, video.video_id)
    return arrays_to_video(video, arr)


def _fill_nearest(values: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Backward/forward fill rows of (n, 2) at positions where ok is false,
    preferring the most recent earlier value."""
    n = values.shape[0]
    idx = np.nonzero(ok)[0]
    out = values.copy()
    prev = -1
    nxt_ptr = 0
    for t in range(n):
        if ok[t]:
            prev = t
            continue
        while nxt_ptr < len(idx) and idx[nxt_ptr] < t:
            nxt_ptr += 1
        src = prev if prev >= 0 else (idx[nxt_ptr] if nxt_ptr < len(idx)
                                      else None)
        if src is not None:
            out[t] = values[src]
    return out


# ---------------------------------------------------------------------------
# Smoothing and interpolation
# ---------------------------------------------------------------------------

def _rolling_nan(values: np.ndarray, window: int, reducer) -> np.ndarray:
    """Centered rolling nan-reduction over axis 0 of (n, c) values."""
    if window == 1:
        return values.copy()
    half = window // 2
    n, c = values.shape
    padded = np.full((n + 2 * half, c), np.nan)
    padded[half:half + n] = values
    windows = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return reducer(windows, axis=2)


def _interpolate_gaps(values: np.ndarray, present: np.ndarray,
                      max_gap: int) -> tuple:
    """Fill missing runs of length <= max_gap per channel.

    Interior runs are linearly interpolated; leading/trailing runs copy the
    nearest present value.  Longer runs stay missing.  Returns the filled
    values and the updated present mask.
    """
    n, c = values.shape
    out = values.copy()
    new_present = present.copy()
    pos = np.arange(n)
    for ch in range(c):
        ok = present[:, ch]
        idx = np.nonzero(ok)[0]
        if idx.size == 0 or idx.size == n:
            continue
        filled = np.interp(pos, idx, values[idx, ch])
        prev = np.maximum.accumulate(np.where(ok, pos, -1))
        nxt = np.minimum.accumulate(np.where(ok, pos, n)[::-1])[::-1]
        gap_len = np.where(prev < 0, nxt,
                           np.where(nxt >= n, n - 1 - prev, nxt - prev - 1))
        fill = ~ok & (gap_len <= max_gap)
        out[fill, ch] = filled[fill]
        new_present[fill, ch] = True
    return out, new_present


def smooth_arrays(arr: VideoArrays, fps: float,
                  params: NormalizationParams) -> VideoArrays:
    """Array-level smoothing/interpolation (see smooth_and_interpolate)."""
    n = arr.coords.shape[0]
    max_gap = params.gap_limit(fps)

    flat = arr.coords.reshape(n, -1)
    mask2 = np.repeat(arr.present, 2, axis=1)
    flat = np.where(mask2, flat, np.nan)
    med = _rolling_nan(flat, params.median_window, np.nanmedian)
    mean = _rolling_nan(med, params.mean_window, np.nanmean)
    smoothed = np.where(mask2, mean, np.nan)

    filled, filled_mask2 = _interpolate_gaps(smoothed, mask2, max_gap)
    conf_filled, _ = _interpolate_gaps(
        np.where(arr.present, arr.conf, np.nan), arr.present, max_gap)

    arr.coords = np.nan_to_num(filled).reshape(n, N_POINTS, 2)
    arr.present = filled_mask2[:, ::2]
    arr.conf = np.nan_to_num(conf_filled)

    hconf, hmask = _interpolate_gaps(
        np.where(arr.hand_present, arr.hand_conf, np.nan),
        arr.hand_present, max_gap)
    arr.hand_conf = np.nan_to_num(hconf)
    # a hand exists wherever its wrist landmark survived smoothing/fill
    arr.hand_present = np.stack(
        [arr.present[:, HANDL_OFS], arr.present[:, HANDR_OFS]], axis=1) | hmask
    arr.face_present = arr.face_present | \
        arr.present[:, FACE_OFS:FACE_OFS + N_FACE_LANDMARKS].any(axis=1)
    for t in range(n):
        if arr.face_present[t] and arr.face_space[t] is None:
            arr.face_space[t] = "full-frame"
    return arr


def smooth_and_interpolate(video: VideoSequence,
                           params: NormalizationParams = NormalizationParams()
                           ) -> VideoSequence:
    """Moving median then moving mean per coordinate channel, followed by
    gap interpolation (see _interpolate_gaps for the gap rules)."""
    arr = smooth_arrays(video_to_arrays(video), video.fps, params)
    return arrays_to_video(video, arr)


# ---------------------------------------------------------------------------
# Feature-space cleanup
# ---------------------------------------------------------------------------

def _video_slices(group_ids) -> list:
    slices = []
    start = 0
    for i in range(1, len(group_ids) + 1):
        if i == len(group_ids) or group_ids[i] != group_ids[start]:
            slices.append(slice(start, i))
            start = i
    return slices


def clean_features(matrix: FeatureMatrix) -> FeatureMatrix:
    """Blank per-video outliers (median +- 3 IQR) and re-interpolate.

    HOG columns are exempt.  A zero IQR degenerates to flagging values whose
    deviation from the median exceeds 1e-6 * max(1, |median|).
    """
    rows = matrix.rows.copy()
    non_hog = ~matrix.manifest.family_mask(Family.HOG)
    cols = np.nonzero(non_hog)[0]
    for sl in _video_slices(matrix.group_ids):
        block = rows[sl][:, cols]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            med = np.nanmedian(block, axis=0)
            q75 = np.nanpercentile(block, 75, axis=0)
            q25 = np.nanpercentile(block, 25, axis=0)
        iqr = q75 - q25
        dev = np.abs(block - med)
        tol = DEGENERATE_IQR_TOL * np.maximum(1.0, np.abs(med))
        outlier = np.where(iqr > 0, dev > OUTLIER_IQR_FACTOR * iqr, dev > tol)
        block = np.where(outlier, np.nan, block)
        present = ~np.isnan(block)
        # all interior gaps qualify; all-missing columns stay missing
        filled, _ = _interpolate_gaps(block, present, max_gap=block.shape[0])
        sub = rows[sl]
        sub[:, cols] = filled
        rows[sl] = sub
    return FeatureMatrix(manifest=matrix.manifest, rows=rows,
                         group_ids=matrix.group_ids,
                         frame_indices=matrix.frame_indices,
                         labels=matrix.labels)


def fit_imputation(train: FeatureMatrix) -> ImputationStats:
    """Column means over observed training values; never-observed columns
    impute 0 and are reported."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(train.rows, axis=0)
    unobserved = [train.manifest.names[i]
                  for i in np.nonzero(np.isnan(means))[0]]
    if unobserved:
        log.warning("%d features never observed in training; imputing 0",
                    len(unobserved))
    return ImputationStats(means=np.nan_to_num(means), unobserved=unobserved)


def apply_imputation(matrix: FeatureMatrix,
                     stats: ImputationStats) -> FeatureMatrix:
    if stats.means.shape[0] != len(matrix.manifest):
        raise ValueError("imputation stats do not match the manifest")
    rows = np.where(np.isnan(matrix.rows), stats.means, matrix.rows)
    return FeatureMatrix(manifest=matrix.manifest, rows=rows,
                         group_ids=matrix.group_ids,
                         frame_indices=matrix.frame_indices,
                         labels=matrix.labels)
