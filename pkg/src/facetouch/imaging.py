"""Face-region estimation from pose, aligned grayscale cropping, and HOG
appearance descriptors for the face / upper-face / lower-face regions.

Geometry is fixed: 32x32 face crops and 32x16 half-face crops, 8 px cells,
2x2-cell blocks at 8 px stride, 9 unsigned orientation bins, L2-Hys block
normalization.  That yields 324 + 108 + 108 = 540 appearance dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, NoFaceAnywhere
from .model import (FACE_EYE_RANGE, FACE_MOUTH_RANGE, HOG_BINS, HOG_CELL,
                    HOG_FACE_SIZE, HOG_HALF_SIZE, HOG_TOTAL_LEN,
                    JOINT_INDEX, Keypoint2D, VideoSequence, hog_grid)
from .ingest import load_pgm
from .preprocess import FACE_OFS, video_to_arrays

EAR_SIZE_FACTOR = 2.2    # face square side = 2.2 x inter-ear distance
TRUNK_SIZE_FACTOR = 1.5  # fallback: 1.5 x trunk length in pixels
L2HYS_CLIP = 0.2

HEAD_JOINTS = ("Nose", "LEye", "REye", "LEar", "REar")


@dataclass(frozen=True)
class FaceRegion:
    center: Keypoint2D
    size_px: float
    rotation_deg: float
    provenance: str  # FromFaceLandmarks | FromPose | FromNeighborFrames

    def __post_init__(self):
        if self.size_px <= 0:
            raise ValueError("size_px must be positive")


@dataclass(frozen=True)
class HogConfig:
    crop_face: tuple = HOG_FACE_SIZE
    crop_half: tuple = HOG_HALF_SIZE
    cell: int = HOG_CELL
    block_cells: int = 2
    block_stride: int = 8
    bins: int = HOG_BINS
    clip: float = L2HYS_CLIP

    def __post_init__(self):
        for w, h in (self.crop_face, self.crop_half):
            if w % self.cell or h % self.cell:
                raise ValueError("crop sides must be divisible by the cell")
            hog_grid(w, h)  # raises if a block does not fit


# ---------------------------------------------------------------------------
# Face region estimation
# ---------------------------------------------------------------------------

def _present_mean(points: np.ndarray, mask: np.ndarray) -> Optional[np.ndarray]:
    if not mask.any():
        return None
    return points[mask].mean(axis=0)


def estimate_face_region(video: VideoSequence) -> list:
    """Per-frame face region in pixel space.

    Center is the mean of the present head keypoints; the square side is
    2.2 x the inter-ear distance when both ears are present and otherwise
    1.5 x the trunk length in pixels.  Frames with no head evidence copy the
    nearest resolved frame (ties prefer the earlier frame).
    """
    arr = video_to_arrays(video)
    n = len(video)
    head_idx = [JOINT_INDEX[j] for j in HEAD_JOINTS]
    leye, reye = JOINT_INDEX["LEye"], JOINT_INDEX["REye"]
    lear, rear = JOINT_INDEX["LEar"], JOINT_INDEX["REar"]
    neck, hip = JOINT_INDEX["Neck"], JOINT_INDEX["MidHip"]

    trunk = np.linalg.norm(arr.coords[:, neck] - arr.coords[:, hip], axis=1)
    trunk_ok = arr.present[:, neck] & arr.present[:, hip] & (trunk > 1e-9)
    median_trunk = float(np.median(trunk[trunk_ok])) if trunk_ok.any() else None

    face_cols = slice(FACE_OFS, FACE_OFS + 68)
    regions: list = [None] * n
    sizes = []
    for t in range(n):
        pose_mask = arr.present[t, head_idx]
        center = _present_mean(arr.coords[t, head_idx], pose_mask)
        provenance = "FromPose"
        eye_l = arr.coords[t, leye] if arr.present[t, leye] else None
        eye_r = arr.coords[t, reye] if arr.present[t, reye] else None
        size = None
        if center is not None:
            if arr.present[t, lear] and arr.present[t, rear]:
                d = float(np.linalg.norm(arr.coords[t, lear]
                                         - arr.coords[t, rear]))
                if d > 1e-9:
                    size = EAR_SIZE_FACTOR * d
        else:
            fmask = arr.present[t, face_cols] \
                & (arr.face_space[t] == "full-frame")
            center = _present_mean(arr.coords[t, face_cols], fmask)
            if center is not None:
                provenance = "FromFaceLandmarks"
                el = _present_mean(arr.coords[t, face_cols],
                                   fmask & _range_mask(42, 48))
                er = _present_mean(arr.coords[t, face_cols],
                                   fmask & _range_mask(36, 42))
                if el is not None and er is not None:
                    d = float(np.linalg.norm(el - er))
                    if d > 1e-9:
                        size = EAR_SIZE_FACTOR * d
                if eye_l is None:
                    eye_l, eye_r = el, er
        if center is None:
            continue
        if size is None:
            t_px = trunk[t] if trunk_ok[t] else median_trunk
            size = TRUNK_SIZE_FACTOR * t_px if t_px else None
        if size is None or size <= 0:
            continue
        rotation = 0.0
        if eye_l is not None and eye_r is not None:
            rotation = math.degrees(math.atan2(eye_l[1] - eye_r[1],
                                               eye_l[0] - eye_r[0]))
        regions[t] = FaceRegion(
            center=Keypoint2D(float(center[0]), float(center[1]), 1.0, True),
            size_px=float(size), rotation_deg=rotation, provenance=provenance)
        sizes.append(t)

    if not sizes:
        raise NoFaceAnywhere(f"{video.video_id}: no frame with head evidence")
    resolved = np.array(sizes)
    for t in range(n):
        if regions[t] is None:
            # nearest resolved frame; earlier frame wins distance ties
            dist = np.abs(resolved - t)
            src = int(resolved[np.argmin(dist + (resolved > t) * 0.5)])
            base = regions[src]
            regions[t] = FaceRegion(center=base.center, size_px=base.size_px,
                                    rotation_deg=base.rotation_deg,
                                    provenance="FromNeighborFrames")
    return regions


def _range_mask(start: int, stop: int) -> np.ndarray:
    mask = np.zeros(68, dtype=bool)
    mask[start:stop] = True
    return mask


# ---------------------------------------------------------------------------
# Aligned cropping
# ---------------------------------------------------------------------------

def align_and_crop(image: np.ndarray, region: FaceRegion, target_w: int,
                   target_h: int) -> np.ndarray:
    """Bilinear resample of the rotated face square onto a target grid.

    The sampling grid follows the eye-line rotation so the face appears
    upright; reads outside the image clamp to the nearest edge pixel.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    theta = math.radians(region.rotation_deg)
    ct, st = math.cos(theta), math.sin(theta)
    scale = region.size_px / target_w
    du = (np.arange(target_w) - (target_w - 1) / 2.0) * scale
    dv = (np.arange(target_h) - (target_h - 1) / 2.0) * scale
    dug, dvg = np.meshgrid(du, dv)
    sx = region.center.x + dug * ct - dvg * st
    sy = region.center.y + dug * st + dvg * ct

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = np.clip(x0, 0, w - 1).astype(np.int64)
    y0 = np.clip(y0, 0, h - 1).astype(np.int64)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


# ---------------------------------------------------------------------------
# HOG
# ---------------------------------------------------------------------------

def hog(patch: np.ndarray, config: HogConfig = HogConfig(),
        size: Optional[tuple] = None) -> np.ndarray:
    """Block-normalized histogram of unsigned gradient orientations.

    Central-difference gradients (edge-clamped), bilinear orientation votes
    into 9 bins per 8x8 cell, 2x2-cell blocks every 8 px, L2-Hys per block.
    """
    p = np.asarray(patch, dtype=np.float64)
    if size is not None and p.shape != (size[1], size[0]):
        raise DimensionMismatch(f"expected {size[1]}x{size[0]} patch, "
                                f"got {p.shape}")
    if p.ndim != 2 or p.shape[0] % config.cell or p.shape[1] % config.cell:
        raise DimensionMismatch(f"patch {p.shape} does not fit the cell grid")
    h, w = p.shape
    gx = np.empty_like(p)
    gx[:, 1:-1] = p[:, 2:] - p[:, :-2]
    gx[:, 0] = p[:, 1] - p[:, 0]
    gx[:, -1] = p[:, -1] - p[:, -2]
    gy = np.empty_like(p)
    gy[1:-1, :] = p[2:, :] - p[:-2, :]
    gy[0, :] = p[1, :] - p[0, :]
    gy[-1, :] = p[-1, :] - p[-2, :]

    mag = np.sqrt(gx * gx + gy * gy)
    theta = np.mod(np.arctan2(gy, gx), math.pi)  # unsigned, [0, pi)
    o = theta * (config.bins / math.pi) - 0.5    # bin centers at (b+0.5)*20deg
    b0 = np.floor(o)
    w1 = o - b0
    b0 = np.mod(b0.astype(np.int64), config.bins)
    b1 = np.mod(b0 + 1, config.bins)

    ncy, ncx = h // config.cell, w // config.cell
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cell_idx = (ys // config.cell) * ncx + (xs // config.cell)
    hist = np.bincount((cell_idx * config.bins + b0).ravel(),
                       weights=(mag * (1 - w1)).ravel(),
                       minlength=ncy * ncx * config.bins)
    hist += np.bincount((cell_idx * config.bins + b1).ravel(),
                        weights=(mag * w1).ravel(),
                        minlength=ncy * ncx * config.bins)
    cells = hist.reshape(ncy, ncx, config.bins)

    bx, by = hog_grid(w, h)
    bc = config.block_cells
    out = []
    for yb in range(by):
        for xb in range(bx):
            block = cells[yb:yb + bc, xb:xb + bc].reshape(-1)
            n1 = np.linalg.norm(block)
            if n1 == 0.0:
                out.append(block)
                continue
            v = np.minimum(block / n1, config.clip)
            out.append(v / np.linalg.norm(v))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# Per-video appearance features
# ---------------------------------------------------------------------------

def face_region_confidences(video: VideoSequence) -> np.ndarray:
    """(n, 2) mean landmark confidence of the eye and mouth regions.

    Missing landmarks contribute 0; frames without face landmarks yield 0.
    """
    return face_region_confidences_arrays(video_to_arrays(video))


def face_region_confidences_arrays(arr) -> np.ndarray:
    conf = np.where(arr.present, arr.conf, 0.0)
    eye = conf[:, FACE_OFS + FACE_EYE_RANGE.start:
               FACE_OFS + FACE_EYE_RANGE.stop]
    mouth = conf[:, FACE_OFS + FACE_MOUTH_RANGE.start:
                 FACE_OFS + FACE_MOUTH_RANGE.stop]
    return np.stack([eye.mean(axis=1), mouth.mean(axis=1)], axis=1)


def _face_landmarks_px(arr, t, region: FaceRegion) -> tuple:
    """Face landmark coordinates in pixel space plus their present mask."""
    pts = arr.coords[t, FACE_OFS:FACE_OFS + 68].copy()
    mask = arr.present[t, FACE_OFS:FACE_OFS + 68]
    if arr.face_space[t] == "crop":
        # crop space: offsets within the unrotated region square
        pts = pts - region.size_px / 2.0 \
            + np.array([region.center.x, region.center.y])
    return pts, mask


def _rotated_offset(region: FaceRegion, dy: float) -> np.ndarray:
    theta = math.radians(region.rotation_deg)
    return np.array([region.center.x - math.sin(theta) * dy,
                     region.center.y + math.cos(theta) * dy])


def face_hog_features(video: VideoSequence,
                      config: HogConfig = HogConfig(),
                      regions: Optional[list] = None) -> tuple:
    """(hog_rows, confidences) for every frame.

    hog_rows is (n, 540) with NaN rows where no frame image is available;
    confidences is the (n, 2) eye/mouth landmark confidence pair.
    """
    n = len(video)
    conf = face_region_confidences(video)
    rows = np.full((n, HOG_TOTAL_LEN), np.nan)
    if all(f.image_ref is None for f in video.frames):
        return rows, conf
    if regions is None:
        regions = estimate_face_region(video)
    arr = video_to_arrays(video)
    fw, fh = config.crop_face
    hw, hh = config.crop_half
    for t, frame in enumerate(video.frames):
        if frame.image_ref is None:
            continue
        img = load_pgm(frame.image_ref)
        region = regions[t]
        parts = [hog(align_and_crop(img, region, fw, fh), config, (fw, fh))]
        pts, mask = _face_landmarks_px(arr, t, region)
        eye_mask = mask.copy()
        eye_mask[:FACE_EYE_RANGE.start] = False
        eye_mask[FACE_EYE_RANGE.stop:] = False
        mouth_mask = mask.copy()
        mouth_mask[:FACE_MOUTH_RANGE.start] = False
        mouth_mask[FACE_MOUTH_RANGE.stop:] = False
        upper_c = _present_mean(pts, eye_mask)
        lower_c = _present_mean(pts, mouth_mask)
        if upper_c is None:
            upper_c = _rotated_offset(region, -region.size_px / 4.0)
        if lower_c is None:
            lower_c = _rotated_offset(region, region.size_px / 4.0)
        for center in (upper_c, lower_c):
            sub = FaceRegion(
                center=Keypoint2D(float(center[0]), float(center[1]), 1.0,
                                  True),
                size_px=region.size_px, rotation_deg=region.rotation_deg,
                provenance=region.provenance)
            parts.append(hog(align_and_crop(img, sub, hw, hh), config,
                             (hw, hh)))
        rows[t] = np.concatenate(parts)
    return rows, conf
