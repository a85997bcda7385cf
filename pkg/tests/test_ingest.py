import json
import os

import numpy as np
import pytest

from facetouch.errors import (DuplicateVideoId, HeaderMismatch,
                              MalformedLabels, MalformedManifest,
                              MalformedMullen, MalformedRecord, MissingFile,
                              NonMonotonicFrames, NonPositiveAge,
                              RegionWithoutTouch, TruncatedFile,
                              UnsupportedFormat)
from facetouch.ingest import (LoadStats, ManifestEntry, attach_labels,
                              load_labels, load_manifest, load_mullen,
                              load_pgm, load_video, read_feature_matrix,
                              write_feature_matrix, write_pgm)
from facetouch.model import FeatureMatrix, build_manifest


def write_manifest_file(path, videos, name="test"):
    with open(path, "w") as fh:
        json.dump({"dataset_name": name, "videos": videos}, fh)


def frame_doc(i, pose=None, face=None, hands=None):
    return {"frame_index": i, "timestamp_s": i / 30.0,
            "pose": pose or {"Neck": [100, 100, 0.9],
                             "MidHip": [100, 200, 0.9]},
            "face": face, "hands": hands}


def write_jsonl(path, docs):
    with open(path, "w") as fh:
        for d in docs:
            fh.write(json.dumps(d) + "\n")


# --- manifest ---------------------------------------------------------------

def test_load_manifest_counts(tmp_path):
    videos = []
    for i in range(25):
        lm = tmp_path / f"v{i}.jsonl"
        write_jsonl(lm, [frame_doc(0)])
        videos.append({"video_id": f"v{i}", "infant_id": f"i{i}", "fps": 30,
                       "landmarks_path": lm.name})
    path = tmp_path / "manifest.json"
    write_manifest_file(path, videos)
    man = load_manifest(str(path))
    assert len(man) == 25


def test_load_manifest_empty_list(tmp_path):
    path = tmp_path / "manifest.json"
    write_manifest_file(path, [])
    with pytest.raises(MalformedManifest):
        load_manifest(str(path))


def test_load_manifest_duplicate_id(tmp_path):
    lm = tmp_path / "v.jsonl"
    write_jsonl(lm, [frame_doc(0)])
    path = tmp_path / "manifest.json"
    entry = {"video_id": "v1", "infant_id": "i", "fps": 30,
             "landmarks_path": "v.jsonl"}
    write_manifest_file(path, [entry, dict(entry)])
    with pytest.raises(DuplicateVideoId):
        load_manifest(str(path))


def test_load_manifest_missing_landmarks(tmp_path):
    path = tmp_path / "manifest.json"
    write_manifest_file(path, [{"video_id": "v1", "infant_id": "i",
                                "fps": 30, "landmarks_path": "absent.jsonl"}])
    with pytest.raises(MissingFile):
        load_manifest(str(path))


# --- landmark streams ---------------------------------------------------------

def entry_for(tmp_path, docs, video_id="v1", fps=30.0):
    lm = tmp_path / f"{video_id}.jsonl"
    write_jsonl(lm, docs)
    return ManifestEntry(video_id=video_id, infant_id="i1", fps=fps,
                         landmarks_path=str(lm))


def test_load_video_frame_count(tmp_path):
    entry = entry_for(tmp_path, [frame_doc(i) for i in range(70)])
    video = load_video(entry)
    assert len(video) == 70


def test_load_video_bad_face_count(tmp_path):
    face = {"source_space": "full-frame",
            "landmarks": [[0, 0, 0.5]] * 67}
    entry = entry_for(tmp_path, [frame_doc(0, face=face)])
    with pytest.raises(MalformedRecord) as err:
        load_video(entry)
    assert err.value.line_number == 1


def test_load_video_unknown_joint(tmp_path):
    entry = entry_for(tmp_path, [frame_doc(0, pose={"Tail": [0, 0, 1]})])
    with pytest.raises(MalformedRecord):
        load_video(entry)


def test_load_video_non_monotonic(tmp_path):
    entry = entry_for(tmp_path, [frame_doc(0), frame_doc(1), frame_doc(1)])
    with pytest.raises(NonMonotonicFrames):
        load_video(entry)


def test_load_video_sorts_and_clamps(tmp_path):
    docs = [frame_doc(1), frame_doc(0)]
    docs[0]["pose"]["Neck"] = [1, 2, 1.7]  # confidence above 1
    entry = entry_for(tmp_path, docs)
    stats = LoadStats()
    video = load_video(entry, stats)
    assert [f.frame_index for f in video.frames] == [0, 1]
    assert stats.clamped_confidences == 1
    assert video.frames[1].pose.get("Neck").confidence == 1.0


def test_load_video_skip_mode_accounting(tmp_path):
    lm = tmp_path / "v1.jsonl"
    with open(lm, "w") as fh:
        fh.write(json.dumps(frame_doc(0)) + "\n")
        fh.write("not json at all\n")
        fh.write(json.dumps(frame_doc(1)) + "\n")
    entry = ManifestEntry("v1", "i1", 30.0, str(lm))
    stats = LoadStats()
    video = load_video(entry, stats, on_error="skip")
    assert stats.frames_in == stats.frames_out + stats.rejected
    assert stats.rejected == 1 and len(video) == 2


# --- labels -------------------------------------------------------------------

LABEL_HEADER = "video_id,frame_index,on_head,eyes,ears,nose,mouth,cheeks\n"


def test_load_labels_rows(tmp_path):
    path = tmp_path / "labels.csv"
    rows = [f"v{i % 23},{i},1,0,0,1,0,0" for i in range(2039)]
    path.write_text(LABEL_HEADER + "\n".join(rows) + "\n")
    records = load_labels(str(path))
    assert len(records) == 2039
    assert records[5].nose and records[5].on_head


def test_load_labels_direct_parse(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(LABEL_HEADER + "v1,5,1,0,0,1,0,0\n")
    rec = load_labels(str(path))[0]
    assert (rec.video_id, rec.frame_index) == ("v1", 5)
    assert rec.on_head and rec.nose and not rec.eyes


def test_load_labels_region_without_touch(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(LABEL_HEADER + "v1,5,0,1,0,0,0,0\n")
    with pytest.raises(RegionWithoutTouch):
        load_labels(str(path), strict=True)
    rec = load_labels(str(path), strict=False)[0]
    assert not rec.on_head and not any(rec.region_flags())


def test_load_labels_rejects_unknown_columns(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(LABEL_HEADER.rstrip() + ",extra\nv1,0,0,0,0,0,0,0,1\n")
    with pytest.raises(MalformedLabels):
        load_labels(str(path))


# --- PGM ----------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    img = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    path = tmp_path / "f.pgm"
    write_pgm(img, str(path))
    back = load_pgm(str(path))
    assert (back == img).all()


def test_pgm_decode_example(tmp_path):
    path = tmp_path / "f.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    img = load_pgm(str(path))
    assert img.tolist() == [[0, 255], [255, 0]]


def test_pgm_ascii_rejected(tmp_path):
    path = tmp_path / "f.pgm"
    path.write_bytes(b"P3\n2 2\n255\n0 255 255 0\n")
    with pytest.raises(UnsupportedFormat):
        load_pgm(str(path))


def test_pgm_truncated(tmp_path):
    path = tmp_path / "f.pgm"
    path.write_bytes(b"P5\n100 100\n255\n" + b"\x00" * 50)
    with pytest.raises(TruncatedFile):
        load_pgm(str(path))


def test_pgm_comment_header(tmp_path):
    path = tmp_path / "f.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x01\x02")
    assert load_pgm(str(path)).tolist() == [[1, 2]]


# --- Mullen -------------------------------------------------------------------

MULLEN_HEADER = "infant_id,visit_age_months,gm_raw,fm_raw\n"


def test_load_mullen(tmp_path):
    path = tmp_path / "m.csv"
    rows = [f"i{k},{a},{10 + a},{8 + a}" for k in range(19)
            for a in (1.0, 3.0)]
    path.write_text(MULLEN_HEADER + "\n".join(rows) + "\n")
    records = load_mullen(str(path))
    assert len(records) == 38


def test_load_mullen_nonpositive_age(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(MULLEN_HEADER + "i1,0,10,8\n")
    with pytest.raises(NonPositiveAge):
        load_mullen(str(path))


def test_load_mullen_single_visit_ok(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(MULLEN_HEADER + "i1,2.0,10,8\n")
    assert len(load_mullen(str(path))) == 1  # slope fails later, not here


def test_load_mullen_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("who,what\n1,2\n")
    with pytest.raises(MalformedMullen):
        load_mullen(str(path))


# --- feature matrix CSV ---------------------------------------------------------

def small_matrix(with_labels=True, hog=False, n=10, seed=0):
    manifest = build_manifest(hog)
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, len(manifest)))
    rows[2, 5] = np.nan
    labels = None
    if with_labels:
        labels = np.zeros((n, 6), dtype=np.int8)
        labels[0] = (1, 0, 0, 1, 0, 0)
        labels[3] = -1  # unlabeled row
    return FeatureMatrix(manifest=manifest, rows=rows,
                         group_ids=[f"v{i % 2}" for i in range(n)],
                         frame_indices=np.arange(n), labels=labels)


def test_feature_matrix_round_trip(tmp_path):
    m = small_matrix()
    path = tmp_path / "f.csv"
    write_feature_matrix(m, str(path))
    back = read_feature_matrix(str(path))
    # identity under the 9-significant-digit serialization
    path2 = tmp_path / "f2.csv"
    write_feature_matrix(back, str(path2))
    assert path.read_text() == path2.read_text()
    assert np.isnan(back.rows[2, 5])
    assert back.group_ids == m.group_ids
    assert (back.labels[0] == m.labels[0]).all()
    assert (back.labels[3] == -1).all()


def test_feature_matrix_header_mismatch(tmp_path):
    m = small_matrix(hog=False)
    path = tmp_path / "f.csv"
    write_feature_matrix(m, str(path))
    with pytest.raises(HeaderMismatch):
        read_feature_matrix(str(path), expect_hog=True)


def test_feature_matrix_missing_cell_encoding(tmp_path):
    m = small_matrix()
    path = tmp_path / "f.csv"
    write_feature_matrix(m, str(path))
    row = path.read_text().splitlines()[3 + 0]  # provenance absent, header+2
    assert ",," in row  # the NaN cell serializes as an empty field


def test_attach_labels_matches_rows():
    from facetouch.model import LabelRecord
    m = small_matrix(with_labels=False)
    recs = [LabelRecord("v0", 0, True, nose=True),
            LabelRecord("v1", 1, False)]
    out = attach_labels(m, recs)
    assert out.labels[0][0] == 1 and out.labels[0][3] == 1
    assert out.labels[1][0] == 0
    assert (out.labels[2] == -1).all()


def test_synth_corpus_loads_clean(synth_corpus):
    man = load_manifest(os.path.join(synth_corpus["dir"], "manifest.json"))
    stats = LoadStats()
    for entry in man.videos:
        load_video(entry, stats)
    assert stats.rejected == 0
    assert stats.frames_in == stats.frames_out == 6 * 60
