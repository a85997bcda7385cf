"""Shared domain types and the canonical, ordered feature manifest.

Every other module consumes these types; the manifest fixes the feature
order used by feature extraction, matrix serialization and the trained
models, so its construction must stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ManifestMismatch

# The 13-joint skeleton vocabulary, in canonical order.
JOINTS = (
    "Nose", "Neck",
    "RShoulder", "RElbow", "RWrist",
    "LShoulder", "LElbow", "LWrist",
    "MidHip",
    "REye", "LEye", "REar", "LEar",
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINTS)}

N_FACE_LANDMARKS = 68
N_HAND_LANDMARKS = 21

# Fingertip indices in the 21-point hand topology (wrist + 4 per finger).
FINGERTIPS = (4, 8, 12, 16, 20)
FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")

# Landmark index ranges of the 68-point face set.
FACE_EYE_RANGE = range(36, 48)
FACE_MOUTH_RANGE = range(48, 68)

# The five non-exclusive touch-location labels.
REGIONS = ("eyes", "ears", "nose", "mouth", "cheeks")
LABEL_COLUMNS = ("on_head",) + REGIONS


class Family(str, Enum):
    BODY_DISTANCE = "BodyDistance"
    ANGLE = "Angle"
    HAND_DISTANCE = "HandDistance"
    HAND_CONFIDENCE = "HandConfidence"
    TEMPORAL = "Temporal"
    FACE_REGION_CONFIDENCE = "FaceRegionConfidence"
    HOG = "HOG"


@dataclass(frozen=True)
class Keypoint2D:
    """A single 2D landmark; coordinates are ignored when not present."""
    x: float = 0.0
    y: float = 0.0
    confidence: float = 0.0
    present: bool = False

    def __post_init__(self):
        if self.present and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0,1]")


ABSENT = Keypoint2D()


@dataclass(frozen=True)
class PoseFrame:
    """Fixed 13-slot skeleton frame keyed by the joint vocabulary."""
    keypoints: dict

    def __post_init__(self):
        extra = set(self.keypoints) - set(JOINTS)
        if extra:
            raise ValueError(f"unknown joints: {sorted(extra)}")
        for j in JOINTS:
            self.keypoints.setdefault(j, ABSENT)

    def get(self, joint: str) -> Keypoint2D:
        return self.keypoints[joint]


@dataclass(frozen=True)
class FaceFrame:
    """68-point face landmark frame."""
    landmarks: tuple
    source_space: str = "full-frame"  # "crop" or "full-frame"

    def __post_init__(self):
        if len(self.landmarks) != N_FACE_LANDMARKS:
            raise ValueError(f"expected {N_FACE_LANDMARKS} face landmarks, "
                             f"got {len(self.landmarks)}")
        if self.source_space not in ("crop", "full-frame"):
            raise ValueError(f"bad source_space {self.source_space!r}")


@dataclass(frozen=True)
class HandFrame:
    """21-point hand landmark frame for one side."""
    side: str  # "Left" or "Right"
    landmarks: tuple
    detection_confidence: float = 0.0

    def __post_init__(self):
        if self.side not in ("Left", "Right"):
            raise ValueError(f"bad hand side {self.side!r}")
        if len(self.landmarks) != N_HAND_LANDMARKS:
            raise ValueError(f"expected {N_HAND_LANDMARKS} hand landmarks, "
                             f"got {len(self.landmarks)}")
        if not 0.0 <= self.detection_confidence <= 1.0:
            raise ValueError("detection_confidence outside [0,1]")


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    timestamp_s: float
    pose: PoseFrame
    face: Optional[FaceFrame] = None
    hands: tuple = ()
    image_ref: Optional[str] = None

    def __post_init__(self):
        sides = [h.side for h in self.hands]
        if len(sides) != len(set(sides)):
            raise ValueError("more than one HandFrame per side")
        if self.frame_index < 0:
            raise ValueError("frame_index must be nonnegative")

    def hand(self, side: str) -> Optional[HandFrame]:
        for h in self.hands:
            if h.side == side:
                return h
        return None


@dataclass(frozen=True)
class VideoSequence:
    video_id: str
    infant_id: str
    fps: float
    frames: tuple

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame_index values must strictly increase")
        ts = [f.timestamp_s for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must strictly increase")

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class LabelRecord:
    video_id: str
    frame_index: int
    on_head: bool
    eyes: bool = False
    ears: bool = False
    nose: bool = False
    mouth: bool = False
    cheeks: bool = False

    def __post_init__(self):
        if not self.on_head and any(self.region_flags()):
            raise ValueError("region flag set while on_head is false")

    def region_flags(self) -> tuple:
        return (self.eyes, self.ears, self.nose, self.mouth, self.cheeks)

    def as_row(self) -> tuple:
        return (int(self.on_head),) + tuple(int(v) for v in self.region_flags())


# ---------------------------------------------------------------------------
# Feature manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    name: str
    family: Family
    signed_x: bool = False        # negated when landmarks are mirrored
    mirror_partner: Optional[int] = None  # None means the feature is its own mirror


@dataclass(frozen=True)
class FeatureManifest:
    entries: tuple

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(names) != len(set(names)):
            raise ValueError("duplicate feature names in manifest")
        for i, e in enumerate(self.entries):
            p = e.mirror_partner
            if p is not None:
                back = self.entries[p].mirror_partner
                if back != i:
                    raise ValueError(f"mirror_partner not symmetric at {i}")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list:
        return [e.name for e in self.entries]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def mirror_index(self, i: int) -> int:
        p = self.entries[i].mirror_partner
        return i if p is None else p

    def mirror_permutation(self) -> np.ndarray:
        """Index permutation mapping each feature to its mirrored counterpart."""
        return np.array([self.mirror_index(i) for i in range(len(self.entries))],
                        dtype=np.int64)

    def sign_flips(self) -> np.ndarray:
        """Per-feature factor (+1/-1) applied after the mirror permutation."""
        return np.array([-1.0 if e.signed_x else 1.0 for e in self.entries])

    def family_mask(self, family: Family) -> np.ndarray:
        return np.array([e.family == family for e in self.entries])

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(",".join(self.names).encode()).hexdigest()


# HOG crop geometry shared by the manifest and the imaging module.
HOG_CELL = 8
HOG_BLOCK_CELLS = 2
HOG_BLOCK_STRIDE = 8
HOG_BINS = 9
HOG_FACE_SIZE = (32, 32)   # (width, height)
HOG_HALF_SIZE = (32, 16)


def hog_grid(width: int, height: int) -> tuple:
    """(blocks_x, blocks_y) for the fixed cell/block geometry."""
    if width % HOG_CELL or height % HOG_CELL:
        raise ValueError("crop sides must be divisible by the cell size")
    cx, cy = width // HOG_CELL, height // HOG_CELL
    bx = cx - HOG_BLOCK_CELLS + 1
    by = cy - HOG_BLOCK_CELLS + 1
    if bx < 1 or by < 1:
        raise ValueError("block does not fit the cell grid")
    return bx, by


def hog_length(width: int, height: int) -> int:
    bx, by = hog_grid(width, height)
    return bx * by * HOG_BLOCK_CELLS * HOG_BLOCK_CELLS * HOG_BINS


def hog_flip_permutation(width: int, height: int) -> np.ndarray:
    """Index map p with hog(mirrored patch) == hog(patch)[p].

    A horizontal flip mirrors block and in-block cell columns and reflects the
    unsigned orientation bins (bin centers sit at (b+0.5)*20 degrees, so the
    reflection is exactly b -> bins-1-b).
    """
    bx, by = hog_grid(width, height)
    ncell = HOG_BLOCK_CELLS * HOG_BLOCK_CELLS
    perm = np.empty(bx * by * ncell * HOG_BINS, dtype=np.int64)
    i = 0
    for yb in range(by):
        for xb in range(bx):
            for yc in range(HOG_BLOCK_CELLS):
                for xc in range(HOG_BLOCK_CELLS):
                    for b in range(HOG_BINS):
                        src_block = yb * bx + (bx - 1 - xb)
                        src_cell = yc * HOG_BLOCK_CELLS + (HOG_BLOCK_CELLS - 1 - xc)
                        src = (src_block * ncell + src_cell) * HOG_BINS \
                            + (HOG_BINS - 1 - b)
                        perm[i] = src
                        i += 1
    return perm


HOG_FACE_LEN = hog_length(*HOG_FACE_SIZE)
HOG_HALF_LEN = hog_length(*HOG_HALF_SIZE)
HOG_TOTAL_LEN = HOG_FACE_LEN + 2 * HOG_HALF_LEN

NON_HOG_FEATURE_COUNT = 170
TOTAL_FEATURE_COUNT = NON_HOG_FEATURE_COUNT + HOG_TOTAL_LEN

BODY_TARGETS = ("nose", "neck", "eyeL", "eyeR", "earL", "earR")
BODY_TARGET_JOINTS = {"nose": "Nose", "neck": "Neck", "eyeL": "LEye",
                      "eyeR": "REye", "earL": "LEar", "earR": "REar"}
HAND_TARGETS = ("eyeL", "eyeR", "nose")
DIST_COMPONENTS = ("x", "y", "euc")
TEMPORAL_JOINTS = ("wristL", "wristR", "elbowL", "elbowR")
TEMPORAL_JOINT_MAP = {"wristL": "LWrist", "wristR": "RWrist",
                      "elbowL": "LElbow", "elbowR": "RElbow"}
TEMPORAL_KINDS = ("disp", "speed", "accel")
TEMPORAL_WINDOWS = (1, 3, 5)


def _swap_lr(token: str) -> str:
    if token.endswith("L"):
        return token[:-1] + "R"
    if token.endswith("R"):
        return token[:-1] + "L"
    return token


def build_manifest(include_hog: bool) -> FeatureManifest:
    """Construct the canonical ordered feature manifest.

    170 landmark-derived features, plus the 540 HOG dimensions when
    ``include_hog`` is set.  Deterministic: the order is fixed by the
    nested loops below.
    """
    names: list = []
    fams: list = []
    signed: list = []
    mirror_names: list = []  # None for self-mirrored entries

    def add(name, family, signed_x, mirror_name):
        names.append(name)
        fams.append(family)
        signed.append(signed_x)
        mirror_names.append(mirror_name)

    for wrist in ("wristL", "wristR"):
        for target in BODY_TARGETS:
            for comp in DIST_COMPONENTS:
                name = f"dist_{comp}_{wrist}_{target}"
                partner = f"dist_{comp}_{_swap_lr(wrist)}_{_swap_lr(target)}"
                add(name, Family.BODY_DISTANCE, comp == "x", partner)

    for joint in ("elbowL", "elbowR", "shoulderL", "shoulderR"):
        add(f"angle_{joint}", Family.ANGLE, False, f"angle_{_swap_lr(joint)}")

    for hand in ("handL", "handR"):
        for finger in FINGER_NAMES:
            for target in HAND_TARGETS:
                for comp in DIST_COMPONENTS:
                    name = f"dist_{comp}_{hand}_{finger}_{target}"
                    partner = (f"dist_{comp}_{_swap_lr(hand)}_{finger}_"
                               f"{_swap_lr(target)}")
                    add(name, Family.HAND_DISTANCE, comp == "x", partner)

    add("conf_handL", Family.HAND_CONFIDENCE, False, "conf_handR")
    add("conf_handR", Family.HAND_CONFIDENCE, False, "conf_handL")

    for joint in TEMPORAL_JOINTS:
        for kind in TEMPORAL_KINDS:
            for w in TEMPORAL_WINDOWS:
                name = f"{kind}_w{w}_{joint}"
                add(name, Family.TEMPORAL, False,
                    f"{kind}_w{w}_{_swap_lr(joint)}")

    add("conf_face_upper", Family.FACE_REGION_CONFIDENCE, False, None)
    add("conf_face_lower", Family.FACE_REGION_CONFIDENCE, False, None)

    assert len(names) == NON_HOG_FEATURE_COUNT

    if include_hog:
        for part, (w, h) in (("face", HOG_FACE_SIZE), ("upper", HOG_HALF_SIZE),
                             ("lower", HOG_HALF_SIZE)):
            perm = hog_flip_permutation(w, h)
            base = len(names)
            for i in range(len(perm)):
                names.append(f"hog_{part}_{i:03d}")
                fams.append(Family.HOG)
                signed.append(False)
                mirror_names.append(None)
            # partners are resolved below by index, record them directly
            for i, src in enumerate(perm):
                mirror_names[base + i] = f"hog_{part}_{src:03d}"

    index = {n: i for i, n in enumerate(names)}
    entries = []
    for i, name in enumerate(names):
        partner_name = mirror_names[i]
        partner = None
        if partner_name is not None and partner_name != name:
            partner = index[partner_name]
        entries.append(ManifestEntry(name, fams[i], signed[i], partner))
    return FeatureManifest(tuple(entries))


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Per-frame feature rows in manifest order.

    ``rows`` is (n, len(manifest)) float64 with NaN marking missing values.
    ``labels`` is (n, 6) int8 columns (on_head, eyes, ears, nose, mouth,
    cheeks) with -1 on unlabeled rows, or None when no row is labeled.
    """
    manifest: FeatureManifest
    rows: np.ndarray
    group_ids: list
    frame_indices: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.manifest):
            raise ManifestMismatch(
                f"row length {self.rows.shape} does not match manifest "
                f"length {len(self.manifest)}")
        n = self.rows.shape[0]
        if len(self.group_ids) != n or self.frame_indices.shape[0] != n:
            raise ValueError("group_ids/frame_indices length mismatch")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (n, 6):
                raise ValueError("labels must be (n, 6)")

    def __len__(self):
        return self.rows.shape[0]

    @property
    def labeled_mask(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(len(self), dtype=bool)
        return self.labels[:, 0] >= 0

    def subset(self, mask: np.ndarray) -> "FeatureMatrix":
        mask = np.asarray(mask)
        ids = [g for g, keep in zip(self.group_ids, mask) if keep] \
            if mask.dtype == bool else [self.group_ids[i] for i in mask]
        return FeatureMatrix(
            manifest=self.manifest,
            rows=self.rows[mask],
            group_ids=ids,
            frame_indices=self.frame_indices[mask],
            labels=None if self.labels is None else self.labels[mask],
        )

    def label_records(self) -> list:
        """LabelRecord objects for the labeled rows."""
        out = []
        if self.labels is None:
            return out
        for i in np.nonzero(self.labeled_mask)[0]:
            row = self.labels[i]
            out.append(LabelRecord(
                video_id=self.group_ids[i],
                frame_index=int(self.frame_indices[i]),
                on_head=bool(row[0]),
                eyes=bool(row[1]), ears=bool(row[2]), nose=bool(row[3]),
                mouth=bool(row[4]), cheeks=bool(row[5])))
        return out
