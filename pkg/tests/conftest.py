import numpy as np
import pytest

from facetouch.model import (JOINTS, FaceFrame, FrameRecord, HandFrame,
                             Keypoint2D, PoseFrame, VideoSequence)


def kp(x, y, conf=0.9):
    return Keypoint2D(float(x), float(y), float(conf), present=True)


def pose(**joints) -> PoseFrame:
    return PoseFrame({j: joints.get(j, Keypoint2D()) for j in JOINTS})


def upright_pose(wrist_l=(80, 150), wrist_r=(176, 150), conf=0.9) -> PoseFrame:
    """A frontal skeleton with a 100 px trunk."""
    return pose(
        Neck=kp(128, 100, conf), MidHip=kp(128, 200, conf),
        Nose=kp(128, 80, conf),
        REye=kp(118, 70, conf), LEye=kp(138, 70, conf),
        REar=kp(106, 78, conf), LEar=kp(150, 78, conf),
        RShoulder=kp(104, 105, conf), LShoulder=kp(152, 105, conf),
        RElbow=kp(96, 130, conf), LElbow=kp(160, 130, conf),
        RWrist=kp(*wrist_r, conf), LWrist=kp(*wrist_l, conf))


def hand(side, wrist_xy, direction=(0.0, -1.0), conf=0.8) -> HandFrame:
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    perp = np.array([-d[1], d[0]])
    pts = [kp(*wrist_xy)]
    for f, (tip, spread) in enumerate(
            [(13.0, -4.5), (16.5, -2.2), (17.5, 0.0), (16.0, 2.2),
             (14.0, 4.5)]):
        for k in range(4):
            frac = (k + 1) / 4.0
            p = np.asarray(wrist_xy) + d * tip * frac + perp * spread * frac
            pts.append(kp(*p))
    return HandFrame(side=side, landmarks=tuple(pts),
                     detection_confidence=conf)


def face(center=(128, 80), conf=0.8) -> FaceFrame:
    rng = np.random.default_rng(0)
    pts = []
    for i in range(68):
        a = 2 * np.pi * i / 68
        pts.append(kp(center[0] + 20 * np.cos(a), center[1] + 24 * np.sin(a),
                      conf))
    return FaceFrame(landmarks=tuple(pts))


def video(frames, fps=30.0, video_id="v1", infant_id="i1") -> VideoSequence:
    return VideoSequence(video_id=video_id, infant_id=infant_id, fps=fps,
                         frames=tuple(frames))


def simple_video(n=10, fps=30.0, with_hands=False, with_face=False,
                 video_id="v1") -> VideoSequence:
    frames = []
    for t in range(n):
        hands = ()
        if with_hands:
            hands = (hand("Left", (80, 150 - t)), hand("Right", (176, 150)))
        frames.append(FrameRecord(
            frame_index=t, timestamp_s=t / fps,
            pose=upright_pose(wrist_l=(80, 150 - t)),
            face=face() if with_face else None,
            hands=hands))
    return video(frames, fps=fps, video_id=video_id)


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """Small rendered synthetic dataset shared by ingest/cli/server tests."""
    from facetouch.synth import SynthConfig, generate
    out = tmp_path_factory.mktemp("corpus")
    truth = generate(SynthConfig(n_videos=6, frames_per_video=60, fps=10.0,
                                 seed=13, render_frames=True), str(out))
    return {"dir": str(out), "truth": truth}
