"""Landmark-derived per-frame features and horizontal-flip augmentation.

The 170 non-appearance features (manifest order):

* 36 wrist-to-head distances (dx, dy, euclidean per wrist/target pair),
* 4 elbow/shoulder joint angles,
* 90 fingertip-to-eye/nose distances plus 2 hand detection confidences,
* 36 temporal descriptors (displacement/speed/acceleration of the wrists and
  elbows over 1/3/5-frame windows),
* 2 face-region landmark confidences (supplied by the imaging module).

All distances are computed in trunk-normalized space; dx/dy are signed
(target minus moving part) so mirroring stays meaningful.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ManifestMismatch
from .model import (FINGERTIPS, JOINT_INDEX, BODY_TARGETS, BODY_TARGET_JOINTS,
                    HAND_TARGETS, TEMPORAL_JOINT_MAP, TEMPORAL_JOINTS,
                    TEMPORAL_WINDOWS, FeatureMatrix, PoseFrame, VideoSequence,
                    build_manifest)
from .preprocess import HANDL_OFS, HANDR_OFS, POSE_OFS, VideoArrays, \
    video_to_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TemporalWindowSpec:
    windows: tuple = TEMPORAL_WINDOWS
    fps: float = 30.0

    def __post_init__(self):
        if any(w < 1 for w in self.windows):
            raise ValueError("temporal window offsets must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")


def _dist_triple(src, dst):
    """(dx, dy, euclidean) of dst - src; NaN-propagating."""
    dx = dst[..., 0] - src[..., 0]
    dy = dst[..., 1] - src[..., 1]
    return dx, dy, np.sqrt(dx * dx + dy * dy)


def _pose_point(frame: PoseFrame, joint: str):
    kp = frame.get(joint)
    if not kp.present:
        return None
    return np.array([kp.x, kp.y])


# ---------------------------------------------------------------------------
# Frame-level operations
# ---------------------------------------------------------------------------

def body_distance_features(frame: PoseFrame) -> np.ndarray:
    """36 wrist-to-target distance components; NaN when an endpoint is
    missing."""
    out = np.full(36, np.nan)
    i = 0
    for wrist_joint in ("LWrist", "RWrist"):
        wrist = _pose_point(frame, wrist_joint)
        for target in BODY_TARGETS:
            pt = _pose_point(frame, BODY_TARGET_JOINTS[target])
            if wrist is not None and pt is not None:
                out[i:i + 3] = _dist_triple(wrist, pt)
            i += 3
    return out


_ANGLE_TRIPLES = (
    ("elbowL", "LShoulder", "LElbow", "LWrist"),
    ("elbowR", "RShoulder", "RElbow", "RWrist"),
    ("shoulderL", "Neck", "LShoulder", "LElbow"),
    ("shoulderR", "Neck", "RShoulder", "RElbow"),
)


def _joint_angle(a, b, c):
    """Angle at b between bones b->a and b->c, in degrees; NaN for a
    zero-length bone.  atan2 of (|cross|, dot) stays well conditioned at
    0 and 180 degrees where arccos would amplify rounding."""
    u, v = a - b, c - b
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return np.nan
    cross = u[0] * v[1] - u[1] * v[0]
    return float(np.degrees(np.arctan2(abs(cross), np.dot(u, v))))


def angle_features(frame: PoseFrame) -> np.ndarray:
    """Elbow and shoulder angles in [0, 180] degrees."""
    out = np.full(4, np.nan)
    for i, (_, ja, jb, jc) in enumerate(_ANGLE_TRIPLES):
        a, b, c = (_pose_point(frame, j) for j in (ja, jb, jc))
        if a is None or b is None or c is None:
            continue
        ang = _joint_angle(a, b, c)
        if np.isnan(ang):
            log.debug("degenerate bone at %s", jb)
        out[i] = ang
    return out


def hand_distance_features(hands, frame: PoseFrame) -> np.ndarray:
    """90 fingertip-to-target distance components plus the 2 hand detection
    confidences (last).  Distances of an absent hand are NaN; its confidence
    is 0."""
    out = np.full(92, np.nan)
    out[90:] = 0.0
    targets = {t: _pose_point(frame, BODY_TARGET_JOINTS[t])
               for t in HAND_TARGETS}
    by_side = {h.side: h for h in hands}
    i = 0
    for col, side in enumerate(("Left", "Right")):
        hand = by_side.get(side)
        if hand is not None:
            out[90 + col] = hand.detection_confidence
        for tip in FINGERTIPS:
            kp = hand.landmarks[tip] if hand is not None else None
            pt = None if kp is None or not kp.present \
                else np.array([kp.x, kp.y])
            for t in HAND_TARGETS:
                if pt is not None and targets[t] is not None:
                    out[i:i + 3] = _dist_triple(pt, targets[t])
                i += 3
    return out


def temporal_features(tracks: np.ndarray, spec: TemporalWindowSpec
                      ) -> np.ndarray:
    """Per-frame displacement/speed/acceleration over the window offsets.

    ``tracks`` is (n, 4, 2): LWrist, RWrist, LElbow, RElbow positions with
    NaN marking missing.  Returns (n, 36) in manifest order.  The first w
    frames of displacement/speed and 2w of acceleration are missing.
    """
    n = tracks.shape[0]
    cols = []
    for j in range(4):
        p = tracks[:, j, :]
        per_kind = {k: [] for k in ("disp", "speed", "accel")}
        for w in spec.windows:
            disp = np.full(n, np.nan)
            if n > w:
                d = p[w:] - p[:-w]
                disp[w:] = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
            speed = disp * spec.fps / w
            accel = np.full(n, np.nan)
            if n > 2 * w:
                accel[w:] = (speed[w:] - speed[:-w]) * spec.fps / w
                accel[:2 * w] = np.nan
            per_kind["disp"].append(disp)
            per_kind["speed"].append(speed)
            per_kind["accel"].append(accel)
        for kind in ("disp", "speed", "accel"):
            cols.extend(per_kind[kind])
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# Whole-video assembly
# ---------------------------------------------------------------------------

def _point_tracks(arr: VideoArrays, indices) -> np.ndarray:
    pts = arr.coords[:, indices, :].astype(float).copy()
    absent = ~arr.present[:, indices]
    pts[absent] = np.nan
    return pts


def assemble_frame_features(video: VideoSequence, face_conf: np.ndarray,
                            spec: TemporalWindowSpec | None = None
                            ) -> FeatureMatrix:
    """Concatenate all non-appearance features in manifest order.

    ``face_conf`` is the per-frame (upper, lower) landmark-confidence pair
    from the imaging module (zeros when the face is absent).
    """
    spec = spec or TemporalWindowSpec(fps=video.fps)
    return assemble_from_arrays(
        video_to_arrays(video), video.video_id,
        np.array([f.frame_index for f in video.frames]), face_conf, spec)


def assemble_from_arrays(arr: VideoArrays, video_id: str,
                         frame_indices: np.ndarray, face_conf: np.ndarray,
                         spec: TemporalWindowSpec) -> FeatureMatrix:
    n = arr.coords.shape[0]
    face_conf = np.asarray(face_conf, dtype=np.float64)
    if face_conf.shape != (n, 2):
        raise ManifestMismatch(
            f"face_conf must be (n, 2), got {face_conf.shape}")
    blocks = []

    wrists = _point_tracks(arr, [JOINT_INDEX["LWrist"], JOINT_INDEX["RWrist"]])
    head = _point_tracks(arr, [JOINT_INDEX[BODY_TARGET_JOINTS[t]]
                               for t in BODY_TARGETS])
    body = np.full((n, 36), np.nan)
    i = 0
    for w in range(2):
        for t in range(len(BODY_TARGETS)):
            dx, dy, d = _dist_triple(wrists[:, w, :], head[:, t, :])
            body[:, i], body[:, i + 1], body[:, i + 2] = dx, dy, d
            i += 3
    blocks.append(body)

    angles = np.full((n, 4), np.nan)
    for k, (_, ja, jb, jc) in enumerate(_ANGLE_TRIPLES):
        pts = _point_tracks(arr, [JOINT_INDEX[j] for j in (ja, jb, jc)])
        u = pts[:, 0, :] - pts[:, 1, :]
        v = pts[:, 2, :] - pts[:, 1, :]
        nu = np.sqrt((u * u).sum(axis=1))
        nv = np.sqrt((v * v).sum(axis=1))
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        with np.errstate(invalid="ignore"):
            ang = np.degrees(np.arctan2(np.abs(cross), (u * v).sum(axis=1)))
        ang[(nu < 1e-12) | (nv < 1e-12)] = np.nan
        angles[:, k] = ang
    blocks.append(angles)

    hand_targets = _point_tracks(arr, [JOINT_INDEX[BODY_TARGET_JOINTS[t]]
                                       for t in HAND_TARGETS])
    hand = np.full((n, 90), np.nan)
    i = 0
    for ofs in (HANDL_OFS, HANDR_OFS):
        tips = _point_tracks(arr, [ofs + t for t in FINGERTIPS])
        for f in range(len(FINGERTIPS)):
            for t in range(len(HAND_TARGETS)):
                dx, dy, d = _dist_triple(tips[:, f, :], hand_targets[:, t, :])
                hand[:, i], hand[:, i + 1], hand[:, i + 2] = dx, dy, d
                i += 3
    blocks.append(hand)
    blocks.append(np.where(arr.hand_present, arr.hand_conf, 0.0))

    tracks = _point_tracks(arr, [JOINT_INDEX[TEMPORAL_JOINT_MAP[j]]
                                 for j in TEMPORAL_JOINTS])
    blocks.append(temporal_features(tracks, spec))
    blocks.append(face_conf)

    rows = np.concatenate(blocks, axis=1)
    manifest = build_manifest(include_hog=False)
    assert rows.shape[1] == len(manifest)
    return FeatureMatrix(
        manifest=manifest, rows=rows,
        group_ids=[video_id] * n,
        frame_indices=np.asarray(frame_indices, dtype=np.int64))


def attach_hog_columns(matrix: FeatureMatrix, hog_rows: np.ndarray
                       ) -> FeatureMatrix:
    """Extend a 170-column matrix with the 540 HOG columns."""
    full = build_manifest(include_hog=True)
    if len(matrix.manifest) + hog_rows.shape[1] != len(full):
        raise ManifestMismatch("HOG block has the wrong width")
    return FeatureMatrix(
        manifest=full,
        rows=np.concatenate([matrix.rows, hog_rows], axis=1),
        group_ids=matrix.group_ids, frame_indices=matrix.frame_indices,
        labels=matrix.labels)


# ---------------------------------------------------------------------------
# Flip augmentation
# ---------------------------------------------------------------------------

def mirror_rows(matrix: FeatureMatrix) -> np.ndarray:
    """Feature rows as they would look after a horizontal flip: permute by
    mirror partner, negate x-signed components.  HOG columns permute through
    their reflection map (equivalent to recomputing on flipped crops, see the
    imaging equivariance test)."""
    perm = matrix.manifest.mirror_permutation()
    signs = matrix.manifest.sign_flips()
    return matrix.rows[:, perm] * signs


def flip_augment(matrix: FeatureMatrix) -> FeatureMatrix:
    """Training augmentation: original rows followed by their mirrored
    counterparts; labels and group ids are copied unchanged."""
    mirrored = mirror_rows(matrix)
    return FeatureMatrix(
        manifest=matrix.manifest,
        rows=np.concatenate([matrix.rows, mirrored], axis=0),
        group_ids=list(matrix.group_ids) + list(matrix.group_ids),
        frame_indices=np.concatenate([matrix.frame_indices,
                                      matrix.frame_indices]),
        labels=None if matrix.labels is None
        else np.concatenate([matrix.labels, matrix.labels], axis=0))
