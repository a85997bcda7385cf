import hashlib
import json
import os

import numpy as np
import pytest

from facetouch.errors import InvalidConfig
from facetouch.extract import extract_dataset
from facetouch.ingest import (LoadStats, load_labels, load_manifest,
                              load_mullen, load_video)
from facetouch.model import REGIONS
from facetouch.stats import pearson
from facetouch.synth import (FACE_FLIP_PERM, SynthConfig, anchor_points,
                             event_rate_for_prevalence, generate,
                             mirror_video_mirrored_doc, oracle_labels,
                             sample_mullen_scores, TOUCH_THRESHOLD_TRUNKS)


def tree_digest(root):
    h = hashlib.sha256()
    for base, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(base, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_generate_deterministic(tmp_path):
    cfg = SynthConfig(n_videos=3, frames_per_video=40, seed=7,
                      render_frames=True)
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate(cfg, str(a))
    generate(cfg, str(b))
    assert tree_digest(a) == tree_digest(b)


def test_generated_files_pass_ingest(synth_corpus):
    man = load_manifest(os.path.join(synth_corpus["dir"], "manifest.json"))
    stats = LoadStats()
    total_labels = 0
    for entry in man.videos:
        video = load_video(entry, stats)
        labels = load_labels(entry.labels_path)
        assert len(labels) == len(video)
        total_labels += len(labels)
    assert stats.rejected == 0
    assert total_labels == 6 * 60
    mullen = load_mullen(os.path.join(synth_corpus["dir"], "mullen.csv"))
    assert len(mullen) == 6 * 3


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        SynthConfig(n_videos=0)
    with pytest.raises(InvalidConfig):
        SynthConfig(hand_dropout_prob=1.5)
    with pytest.raises(InvalidConfig):
        SynthConfig(touch_region_distribution={r: 0.5 for r in REGIONS})
    with pytest.raises(InvalidConfig):
        SynthConfig(touch_event_rate=None, target_prevalence=None)
    with pytest.raises(InvalidConfig):
        event_rate_for_prevalence(0.95, 10.0)


def test_noiseless_labels_recoverable_from_landmarks(tmp_path):
    cfg = SynthConfig(n_videos=3, frames_per_video=120, seed=11,
                      noise_std_px=0.0, hand_dropout_prob=0.0,
                      face_dropout_prob=0.0, render_frames=False)
    truth = generate(cfg, str(tmp_path))
    man = load_manifest(str(tmp_path / "manifest.json"))
    for entry in man.videos:
        video = load_video(entry)
        by_frame = {lr.frame_index: lr
                    for lr in truth.labels[entry.video_id]}
        for frame in video.frames:
            pose = {j: np.array([frame.pose.get(j).x, frame.pose.get(j).y])
                    for j in ("REye", "LEye", "REar", "LEar", "Nose",
                              "Neck", "MidHip")}
            mouth = np.mean([[k.x, k.y]
                             for k in frame.face.landmarks[48:68]], axis=0)
            anchors = anchor_points(pose, mouth)
            tips = np.concatenate([
                np.array([[h.landmarks[i].x, h.landmarks[i].y]
                          for i in (4, 8, 12, 16, 20)])
                for h in frame.hands])
            trunk = float(np.linalg.norm(pose["Neck"] - pose["MidHip"]))
            on, flags = oracle_labels(tips, anchors, trunk)
            expected = by_frame[frame.frame_index]
            assert on == expected.on_head
            for region in REGIONS:
                assert flags[region] == getattr(expected, region)


def test_prevalence_control(tmp_path):
    cfg = SynthConfig(n_videos=20, frames_per_video=200, seed=12,
                      target_prevalence=0.30, render_frames=False)
    truth = generate(cfg, str(tmp_path))
    assert abs(truth.prevalence - 0.30) <= 0.05


def test_mullen_coupling_monte_carlo():
    rng = np.random.default_rng(3)
    ratios = rng.uniform(0.1, 0.5, 200)
    fm, gm = sample_mullen_scores(ratios, 0.6, rng)
    r = pearson(ratios, fm).r
    assert 0.45 <= r <= 0.75
    r_gm = abs(pearson(ratios, gm).r)
    assert r_gm < 0.25


def test_mullen_csv_slopes_match_sampling(tmp_path):
    cfg = SynthConfig(n_videos=8, frames_per_video=80, seed=9,
                      render_frames=False)
    truth = generate(cfg, str(tmp_path))
    records = load_mullen(str(tmp_path / "mullen.csv"))
    from facetouch.stats import mullen_rate
    by_infant = {}
    for rec in records:
        by_infant.setdefault(rec.infant_id, []).append(rec)
    # recovered slope equals the generated one: visits are exactly collinear
    for infant, recs in by_infant.items():
        slope = mullen_rate(recs, "fm")
        pts = sorted((r.visit_age_months, r.fm_raw) for r in recs)
        two_point = (pts[-1][1] - pts[0][1]) / (pts[-1][0] - pts[0][0])
        assert slope == pytest.approx(two_point, abs=1e-9)


def test_rendered_hog_variance(synth_corpus):
    from facetouch.imaging import face_hog_features
    man = load_manifest(os.path.join(synth_corpus["dir"], "manifest.json"))
    video = load_video(man.videos[1])
    rows, conf = face_hog_features(video)
    face_part = rows[:, :324]
    have = ~np.isnan(face_part).any(axis=1)
    active = (np.std(face_part[have], axis=1) > 1e-9)
    assert active.mean() >= 0.95


def test_mirror_doc_round_trip():
    # mirroring twice restores the original frame document
    doc = {"frame_index": 0, "timestamp_s": 0.0,
           "pose": {"RWrist": [10.0, 20.0, 0.9], "LWrist": [50.0, 22.0, 0.8],
                    "Nose": [30.0, 5.0, 0.7]},
           "face": {"source_space": "full-frame",
                    "landmarks": [[float(i), float(i * 2), 0.5]
                                  for i in range(68)]},
           "hands": {"left": None,
                     "right": {"detection_confidence": 0.6,
                               "landmarks": [[1.0, 2.0, 0.5]] * 21}}}
    width = 256.0
    once = mirror_video_mirrored_doc(doc, width)
    twice = mirror_video_mirrored_doc(once, width)
    assert twice == doc
    assert once["pose"]["LWrist"] == [width - 10.0, 20.0, 0.9]
    assert once["hands"]["left"] is not None
    assert once["hands"]["right"] is None


def test_face_flip_perm_involution():
    assert (FACE_FLIP_PERM[FACE_FLIP_PERM] == np.arange(68)).all()
    # eye and mouth landmark groups map onto themselves
    assert set(FACE_FLIP_PERM[36:48]) == set(range(36, 48))
    assert set(FACE_FLIP_PERM[48:68]) == set(range(48, 68))
