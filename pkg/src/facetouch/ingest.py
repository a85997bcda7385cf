"""On-disk input parsing/validation and output writing.

File formats (all UTF-8, no timestamps anywhere so reruns are byte-identical):

* dataset manifest: JSON with ``dataset_name`` and a ``videos`` list of
  ``{video_id, infant_id, fps, landmarks_path[, labels_path][, frames_dir]}``;
  paths are resolved relative to the manifest file.
* landmark stream: one JSON object per line, one line per frame, with keys
  ``frame_index``, ``timestamp_s``, ``pose`` (joint name -> [x, y, conf] or
  null), ``face`` (null or {source_space, landmarks: 68 x ([x,y,conf]|null)})
  and ``hands`` (null or {left/right: null|{landmarks: 21 triples,
  detection_confidence}}).  Coordinates are pixels of the source frame.
* labels CSV: header ``video_id,frame_index,on_head,eyes,ears,nose,mouth,cheeks``
  with 0/1 flags.
* frames: binary PGM (P5), 8-bit grayscale, ``frame_<index>.pgm``.
* Mullen CSV: header ``infant_id,visit_age_months,gm_raw,fm_raw``.
* feature matrix CSV: ``video_id,frame_index,<manifest feature names...>``
  plus the six label columns when any row is labeled; missing cells empty;
  floats serialized with 9 significant digits.

Lines starting with ``#`` carry provenance and are skipped on read.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (DuplicateVideoId, HeaderMismatch, IoError,
                     MalformedLabels, MalformedManifest, MalformedMullen,
                     MalformedRecord, MissingFile, NonMonotonicFrames,
                     NonPositiveAge, RegionWithoutTouch, TruncatedFile,
                     UnsupportedFormat)
from .model import (JOINTS, LABEL_COLUMNS, N_FACE_LANDMARKS, N_HAND_LANDMARKS,
                    FaceFrame, FeatureMatrix, FrameRecord, HandFrame,
                    Keypoint2D, LabelRecord, PoseFrame, VideoSequence,
                    build_manifest)

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"


@dataclass
class LoadStats:
    """Accounting for a load: nothing is ever dropped silently."""
    frames_in: int = 0
    frames_out: int = 0
    rejected: int = 0
    clamped_confidences: int = 0


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    infant_id: str
    fps: float
    landmarks_path: str
    labels_path: Optional[str] = None
    frames_dir: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    videos: tuple

    def __len__(self):
        return len(self.videos)

    def entry(self, video_id: str) -> ManifestEntry:
        for e in self.videos:
            if e.video_id == video_id:
                return e
        raise KeyError(video_id)


@dataclass(frozen=True)
class MullenRecord:
    infant_id: str
    visit_age_months: float
    gm_raw: float
    fm_raw: float

    def __post_init__(self):
        if self.visit_age_months <= 0:
            raise NonPositiveAge(
                f"visit_age_months must be > 0, got {self.visit_age_months}")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest(path: str) -> DatasetManifest:
    if not os.path.isfile(path):
        raise MissingFile(path)
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "videos" not in doc:
        raise MalformedManifest(f"{path}: missing 'videos'")
    videos = doc["videos"]
    if not isinstance(videos, list) or not videos:
        raise MalformedManifest(f"{path}: empty video list")
    entries = []
    seen = set()
    for v in videos:
        try:
            vid = str(v["video_id"])
            entry = ManifestEntry(
                video_id=vid,
                infant_id=str(v.get("infant_id", vid)),
                fps=float(v["fps"]),
                landmarks_path=os.path.join(base, v["landmarks_path"]),
                labels_path=(os.path.join(base, v["labels_path"])
                             if v.get("labels_path") else None),
                frames_dir=(os.path.join(base, v["frames_dir"])
                            if v.get("frames_dir") else None),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest(f"{path}: bad video entry {v!r}") from exc
        if entry.fps <= 0:
            raise MalformedManifest(f"{path}: fps must be positive for {vid}")
        if vid in seen:
            raise DuplicateVideoId(vid)
        seen.add(vid)
        if not os.path.isfile(entry.landmarks_path):
            raise MissingFile(entry.landmarks_path)
        entries.append(entry)
    return DatasetManifest(dataset_name=str(doc.get("dataset_name", "")),
                           videos=tuple(entries))


def write_manifest(manifest_dict: dict, path: str,
                   provenance: Optional[dict] = None) -> None:
    doc = dict(manifest_dict)
    if provenance is not None:
        doc["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Landmark streams
# ---------------------------------------------------------------------------

def _parse_triple(value, what: str, line_no: int, stats: LoadStats) -> Keypoint2D:
    if value is None:
        return Keypoint2D()
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise MalformedRecord(f"{what} must be [x, y, conf] or null", line_no)
    x, y, c = (float(value[0]), float(value[1]), float(value[2]))
    if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(c)):
        raise MalformedRecord(f"non-finite {what}", line_no)
    if c < 0.0 or c > 1.0:
        stats.clamped_confidences += 1
        c = min(1.0, max(0.0, c))
    return Keypoint2D(x, y, c, present=True)


def _parse_frame(doc: dict, line_no: int, frames_dir: Optional[str],
                 stats: LoadStats) -> FrameRecord:
    try:
        frame_index = int(doc["frame_index"])
        timestamp_s = float(doc["timestamp_s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad frame header: {exc}", line_no) from exc

    pose_doc = doc.get("pose") or {}
    unknown = set(pose_doc) - set(JOINTS)
    if unknown:
        raise MalformedRecord(f"unknown joints {sorted(unknown)}", line_no)
    keypoints = {j: _parse_triple(pose_doc.get(j), f"pose[{j}]", line_no, stats)
                 for j in JOINTS}

    face = None
    face_doc = doc.get("face")
    if face_doc is not None:
        lms = face_doc.get("landmarks")
        if not isinstance(lms, list) or len(lms) != N_FACE_LANDMARKS:
            raise MalformedRecord(
                f"face must carry {N_FACE_LANDMARKS} landmarks", line_no)
        space = face_doc.get("source_space", "full-frame")
        if space not in ("crop", "full-frame"):
            raise MalformedRecord(f"bad face source_space {space!r}", line_no)
        face = FaceFrame(
            landmarks=tuple(_parse_triple(v, "face landmark", line_no, stats)
                            for v in lms),
            source_space=space)

    hands = []
    hands_doc = doc.get("hands") or {}
    for key, side in (("left", "Left"), ("right", "Right")):
        h = hands_doc.get(key)
        if h is None:
            continue
        lms = h.get("landmarks")
        if not isinstance(lms, list) or len(lms) != N_HAND_LANDMARKS:
            raise MalformedRecord(
                f"{key} hand must carry {N_HAND_LANDMARKS} landmarks", line_no)
        conf = float(h.get("detection_confidence", 0.0))
        if conf < 0.0 or conf > 1.0:
            stats.clamped_confidences += 1
            conf = min(1.0, max(0.0, conf))
        hands.append(HandFrame(
            side=side,
            landmarks=tuple(_parse_triple(v, "hand landmark", line_no, stats)
                            for v in lms),
            detection_confidence=conf))

    image_ref = None
    if frames_dir is not None:
        candidate = os.path.join(frames_dir, f"frame_{frame_index}.pgm")
        if os.path.isfile(candidate):
            image_ref = candidate
    try:
        return FrameRecord(frame_index=frame_index, timestamp_s=timestamp_s,
                           pose=PoseFrame(keypoints), face=face,
                           hands=tuple(hands), image_ref=image_ref)
    except ValueError as exc:
        raise MalformedRecord(str(exc), line_no) from exc


def load_video(entry: ManifestEntry, stats: Optional[LoadStats] = None,
               on_error: str = "raise") -> VideoSequence:
    """Parse one landmark stream into a VideoSequence.

    ``on_error='skip'`` counts malformed lines in ``stats.rejected`` instead
    of raising, so frames_in == frames_out + rejected always holds.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    if not os.path.isfile(entry.landmarks_path):
        raise MissingFile(entry.landmarks_path)
    stats = stats if stats is not None else LoadStats()
    frames = []
    with open(entry.landmarks_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            stats.frames_in += 1
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                if on_error == "skip":
                    stats.rejected += 1
                    continue
                raise MalformedRecord(f"invalid JSON: {exc}", line_no) from exc
            try:
                frames.append(_parse_frame(doc, line_no, entry.frames_dir,
                                           stats))
            except MalformedRecord:
                if on_error == "skip":
                    stats.rejected += 1
                    continue
                raise
    frames.sort(key=lambda f: f.frame_index)
    for a, b in zip(frames, frames[1:]):
        if b.frame_index == a.frame_index or b.timestamp_s <= a.timestamp_s:
            raise NonMonotonicFrames(
                f"{entry.video_id}: frame {b.frame_index} does not advance")
    stats.frames_out += len(frames)
    if stats.clamped_confidences:
        log.warning("%s: clamped %d confidences to [0,1]",
                    entry.video_id, stats.clamped_confidences)
    return VideoSequence(video_id=entry.video_id, infant_id=entry.infant_id,
                         fps=entry.fps, frames=tuple(frames))


def write_landmarks(path: str, frame_docs: list,
                    provenance: Optional[dict] = None) -> None:
    """Write one landmark stream; ``frame_docs`` are pre-built dicts."""
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write("# provenance: "
                     + json.dumps(provenance, sort_keys=True) + "\n")
        for doc in frame_docs:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def load_labels(path: str, strict: bool = True) -> list:
    """Parse a labels CSV into LabelRecord rows.

    In strict mode a region flag without on_head raises RegionWithoutTouch;
    in lenient mode the region flags are forced false.
    """
    if not os.path.isfile(path):
        raise MissingFile(path)
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(_skip_comments(fh))]
    if not rows:
        raise MalformedLabels(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = ["video_id", "frame_index"] + list(LABEL_COLUMNS)
    if header != expected:
        raise MalformedLabels(
            f"{path}: header {header} != expected {expected}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected):
            raise MalformedLabels(f"{path}:{i}: wrong column count")
        try:
            flags = [_parse_flag(v, path, i) for v in row[2:]]
            rec_args = dict(video_id=row[0], frame_index=int(row[1]))
        except ValueError as exc:
            raise MalformedLabels(f"{path}:{i}: {exc}") from exc
        on_head, regions = flags[0], flags[1:]
        if not on_head and any(regions):
            if strict:
                raise RegionWithoutTouch(
                    f"{path}:{i}: region flag set while on_head=0")
            regions = [False] * 5
        records.append(LabelRecord(on_head=on_head, eyes=regions[0],
                                   ears=regions[1], nose=regions[2],
                                   mouth=regions[3], cheeks=regions[4],
                                   **rec_args))
    return records


def _parse_flag(value: str, path: str, line: int) -> bool:
    v = value.strip()
    if v not in ("0", "1"):
        raise MalformedLabels(f"{path}:{line}: flag must be 0/1, got {v!r}")
    return v == "1"


def write_labels(records: list, path: str,
                 provenance: Optional[dict] = None) -> None:
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# provenance: " + json.dumps(provenance, sort_keys=True)
                  + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video_id", "frame_index"] + list(LABEL_COLUMNS))
    for rec in records:
        writer.writerow([rec.video_id, rec.frame_index, *rec.as_row()])
    _atomic_write_text(path, buf.getvalue())


def _skip_comments(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------

def load_pgm(path: str) -> np.ndarray:
    """Decode a binary (P5) 8-bit PGM into a (height, width) uint8 array."""
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise UnsupportedFormat(f"{path}: not a binary PGM (P5)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFile(f"{path}: header ended early")
        fields.append(data[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: bad header") from exc
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: maxval {maxval} unsupported")
    pos += 1  # single whitespace after maxval
    pixels = data[pos:pos + width * height]
    if len(pixels) < width * height:
        raise TruncatedFile(
            f"{path}: expected {width * height} bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def write_pgm(image: np.ndarray, path: str, comment: Optional[str] = None) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("image must be 2-d uint8")
    h, w = img.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode() + b"\n"
    header += f"{w} {h}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())


# ---------------------------------------------------------------------------
# Mullen scores
# ---------------------------------------------------------------------------

def load_mullen(path: str) -> list:
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(_skip_comments(fh))]
    if not rows:
        raise MalformedMullen(f"{path}: empty file")
    expected = ["infant_id", "visit_age_months", "gm_raw", "fm_raw"]
    if [h.strip() for h in rows[0]] != expected:
        raise MalformedMullen(f"{path}: header must be {expected}")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise MalformedMullen(f"{path}:{i}: wrong column count")
        try:
            records.append(MullenRecord(row[0], float(row[1]), float(row[2]),
                                        float(row[3])))
        except NonPositiveAge:
            raise
        except ValueError as exc:
            raise MalformedMullen(f"{path}:{i}: {exc}") from exc
    return records


def write_mullen(records: list, path: str,
                 provenance: Optional[dict] = None) -> None:
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# provenance: " + json.dumps(provenance, sort_keys=True)
                  + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["infant_id", "visit_age_months", "gm_raw", "fm_raw"])
    for r in records:
        writer.writerow([r.infant_id, FLOAT_FORMAT % r.visit_age_months,
                         FLOAT_FORMAT % r.gm_raw, FLOAT_FORMAT % r.fm_raw])
    _atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

def write_feature_matrix(matrix: FeatureMatrix, path: str,
                         provenance: Optional[dict] = None) -> None:
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# provenance: " + json.dumps(provenance, sort_keys=True)
                  + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    with_labels = matrix.labels is not None
    header = ["video_id", "frame_index"] + matrix.manifest.names
    if with_labels:
        header += list(LABEL_COLUMNS)
    writer.writerow(header)
    for i in range(len(matrix)):
        row = [matrix.group_ids[i], int(matrix.frame_indices[i])]
        row += ["" if np.isnan(v) else FLOAT_FORMAT % v
                for v in matrix.rows[i]]
        if with_labels:
            lab = matrix.labels[i]
            row += [""] * 6 if lab[0] < 0 else [int(v) for v in lab]
        writer.writerow(row)
    try:
        _atomic_write_text(path, buf.getvalue())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_feature_matrix(path: str,
                        expect_hog: Optional[bool] = None) -> FeatureMatrix:
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(_skip_comments(fh))
        try:
            header = next(reader)
        except StopIteration:
            raise IoError(f"{path}: empty file") from None
        body = list(reader)
    if header[:2] != ["video_id", "frame_index"]:
        raise HeaderMismatch(f"{path}: bad leading columns")
    rest = header[2:]
    with_labels = rest[-6:] == list(LABEL_COLUMNS) if len(rest) >= 6 else False
    feature_names = rest[:-6] if with_labels else rest
    manifest = None
    for hog in (False, True):
        if expect_hog is not None and hog != expect_hog:
            continue
        cand = build_manifest(hog)
        if cand.names == feature_names:
            manifest = cand
            break
    if manifest is None:
        raise HeaderMismatch(
            f"{path}: feature columns do not match the "
            f"{'requested' if expect_hog is not None else 'known'} manifest")
    d = len(manifest)
    n = len(body)
    rows = np.full((n, d), np.nan)
    labels = np.full((n, 6), -1, dtype=np.int8) if with_labels else None
    group_ids = []
    frame_indices = np.empty(n, dtype=np.int64)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise IoError(f"{path}: row {i + 2} has wrong column count")
        group_ids.append(row[0])
        frame_indices[i] = int(row[1])
        for j in range(d):
            cell = row[2 + j]
            if cell != "":
                rows[i, j] = float(cell)
        if with_labels:
            lab_cells = row[2 + d:]
            if any(c != "" for c in lab_cells):
                labels[i] = [int(c) for c in lab_cells]
    return FeatureMatrix(manifest=manifest, rows=rows, group_ids=group_ids,
                         frame_indices=frame_indices, labels=labels)


def attach_labels(matrix: FeatureMatrix, records: list) -> FeatureMatrix:
    """Join LabelRecords onto matrix rows by (video_id, frame_index)."""
    table = {(r.video_id, r.frame_index): r.as_row() for r in records}
    labels = np.full((len(matrix), 6), -1, dtype=np.int8)
    for i in range(len(matrix)):
        key = (matrix.group_ids[i], int(matrix.frame_indices[i]))
        if key in table:
            labels[i] = table[key]
    return FeatureMatrix(manifest=matrix.manifest, rows=matrix.rows,
                         group_ids=matrix.group_ids,
                         frame_indices=matrix.frame_indices, labels=labels)
