"""Seeded synthetic-infant data generator.

Emits, in exactly the ingest module's file formats, a dataset of 2D infant
landmark streams with scripted hand-to-face touch events, ground-truth
labels derived from the true (pre-noise) geometry, rendered grayscale
frames, and per-infant developmental scores whose fine-motor slopes are
coupled to the true touch ratios.

All randomness derives from (seed, video index) so regeneration is
byte-identical; every constant below defines the oracle itself.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .ingest import (write_labels, write_landmarks, write_manifest,
                     write_mullen, write_pgm, MullenRecord)
from .model import JOINTS, LabelRecord, REGIONS

FORMAT_VERSION = 1

TRUNK_LEN = 60.0
TOUCH_THRESHOLD_TRUNKS = 0.25          # fingertip-to-anchor on-head rule
ON_FRAMES_PER_EVENT = 11.0             # calibrated mean on-frames per event
UPPER_ARM = 34.0
FOREARM = 30.0

# base skeleton, pixels, y grows downward; subject faces the camera so the
# anatomical right side sits at smaller x.  Anchor spacing stays above the
# touch threshold plus the fingertip-cloud radius, so a held touch flags
# mostly its own region.
BASE_POINTS = {
    "MidHip": (128.0, 176.0),
    "Neck": (128.0, 116.0),
    "RShoulder": (104.0, 120.0),
    "LShoulder": (152.0, 120.0),
    "Nose": (128.0, 90.0),
    "REye": (115.0, 70.0),
    "LEye": (141.0, 70.0),
    "REar": (96.0, 86.0),
    "LEar": (160.0, 86.0),
}
HEAD_CENTER = (128.0, 82.0)
HEAD_RADII = (30.0, 38.0)
MOUTH_POINT = (128.0, 114.0)

# anchors define the ground truth: cheeks sit midway between ear and mouth
ANCHOR_SPECS = (
    ("eyes", "REye"), ("eyes", "LEye"),
    ("ears", "REar"), ("ears", "LEar"),
    ("nose", "Nose"),
    ("mouth", "mouth"),
    ("cheeks", "cheekR"), ("cheeks", "cheekL"),
)

FINGER_TIP_LEN = (13.0, 16.5, 17.5, 16.0, 14.0)
FINGER_SPREAD = (-4.5, -2.2, 0.0, 2.2, 4.5)

# standard left/right correspondence of the 68-point face ordering
FACE_FLIP_PERM = np.array(
    [16 - i for i in range(17)]                      # jaw
    + [43 - i for i in range(17, 27)]                # brows (17..21 <-> 26..22)
    + [27, 28, 29, 30]                               # nose bridge
    + [35, 34, 33, 32, 31]                           # nostrils
    + [45, 44, 43, 42, 47, 46]                       # right eye -> left
    + [39, 38, 37, 36, 41, 40]                       # left eye -> right
    + [54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55]  # outer lips
    + [64, 63, 62, 61, 60, 67, 66, 65], dtype=np.int64)  # inner lips


@dataclass
class SynthConfig:
    n_videos: int = 10
    frames_per_video: int = 200
    fps: float = 10.0
    image_size: int = 256
    noise_std_px: float = 2.0
    hand_dropout_prob: float = 0.1
    face_dropout_prob: float = 0.1
    touch_event_rate: Optional[float] = None  # events per minute
    target_prevalence: Optional[float] = 0.30
    touch_region_distribution: dict = field(
        default_factory=lambda: {r: 0.2 for r in REGIONS})
    mullen_coupling: float = 0.6
    seed: int = 0
    render_frames: bool = True

    def __post_init__(self):
        if self.n_videos < 1 or self.frames_per_video < 2 or self.fps <= 0:
            raise InvalidConfig("need >= 1 video, >= 2 frames, positive fps")
        for p in (self.hand_dropout_prob, self.face_dropout_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidConfig("dropout probabilities must be in [0,1]")
        if not 0.0 <= self.mullen_coupling <= 1.0:
            raise InvalidConfig("mullen_coupling must be in [0,1]")
        if set(self.touch_region_distribution) != set(REGIONS):
            raise InvalidConfig("region distribution must cover all regions")
        total = sum(self.touch_region_distribution.values())
        if abs(total - 1.0) > 1e-9 or \
                min(self.touch_region_distribution.values()) < 0:
            raise InvalidConfig("region distribution must sum to 1")
        if self.touch_event_rate is None and self.target_prevalence is None:
            raise InvalidConfig("set touch_event_rate or target_prevalence")
        if self.noise_std_px < 0:
            raise InvalidConfig("noise_std_px must be nonnegative")

    def events_per_minute(self) -> float:
        if self.touch_event_rate is not None:
            return self.touch_event_rate
        return event_rate_for_prevalence(self.target_prevalence, self.fps)


def event_rate_for_prevalence(prevalence: float, fps: float) -> float:
    """Events/minute so the expected on-head frame share hits the target."""
    if not 0.0 < prevalence < 0.9:
        raise InvalidConfig("target prevalence must be in (0, 0.9)")
    return prevalence * fps * 60.0 / ON_FRAMES_PER_EVENT


@dataclass
class GroundTruth:
    video_ids: list
    infant_ids: list
    labels: dict              # video_id -> list of LabelRecord
    true_touch_ratio: dict    # infant_id -> fraction of on-head frames
    prevalence: float


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _smoothstep(t: float) -> float:
    t = min(1.0, max(0.0, t))
    return t * t * (3.0 - 2.0 * t)


def _face_template() -> np.ndarray:
    """68 landmarks in base coordinates (unrotated, untranslated)."""
    cx, cy = HEAD_CENTER
    rx, ry = HEAD_RADII
    pts = np.zeros((68, 2))
    # jaw: lower half-ellipse, right to left
    for i in range(17):
        a = math.pi * (i / 16.0)           # 0..pi
        pts[i] = (cx - rx * math.cos(a) * 0.95,
                  cy + ry * math.sin(a) * 0.95)
    eye_r = np.array(BASE_POINTS["REye"])
    eye_l = np.array(BASE_POINTS["LEye"])
    for k in range(5):  # brows above the eyes
        t = (k - 2) / 2.0
        pts[17 + k] = eye_r + (6.0 * t, -7.0)
        pts[22 + k] = eye_l + (6.0 * t, -7.0)
    nose = np.array(BASE_POINTS["Nose"])
    for k in range(4):  # bridge
        pts[27 + k] = (cx, eye_r[1] + 2.0 + k * (nose[1] - eye_r[1] - 2.0) / 3.0)
    for k in range(5):  # nostril line
        pts[31 + k] = nose + (2.0 * (k - 2), 1.5)
    for ofs, center in ((36, eye_r), (42, eye_l)):  # eye hexagons
        for k in range(6):
            a = 2.0 * math.pi * k / 6.0
            pts[ofs + k] = center + (4.5 * math.cos(a), 2.5 * math.sin(a))
    mouth = np.array(MOUTH_POINT)
    for k in range(12):  # outer lip ring
        a = 2.0 * math.pi * k / 12.0
        pts[48 + k] = mouth + (8.0 * math.cos(a), 4.0 * math.sin(a))
    for k in range(8):   # inner lip ring
        a = 2.0 * math.pi * k / 8.0
        pts[60 + k] = mouth + (4.5 * math.cos(a), 2.0 * math.sin(a))
    return pts


FACE_TEMPLATE = _face_template()


def _anchors_base() -> np.ndarray:
    ear_r = np.array(BASE_POINTS["REar"])
    ear_l = np.array(BASE_POINTS["LEar"])
    mouth = np.array(MOUTH_POINT)
    table = {
        "REye": BASE_POINTS["REye"], "LEye": BASE_POINTS["LEye"],
        "REar": BASE_POINTS["REar"], "LEar": BASE_POINTS["LEar"],
        "Nose": BASE_POINTS["Nose"], "mouth": MOUTH_POINT,
        "cheekR": tuple((ear_r + mouth) / 2.0),
        "cheekL": tuple((ear_l + mouth) / 2.0),
    }
    return np.array([table[name] for _, name in ANCHOR_SPECS])


ANCHORS_BASE = _anchors_base()


def anchor_points(pose: dict, mouth_center: np.ndarray) -> np.ndarray:
    """The 8 touch anchors from named pose points and the mouth center.

    Cheek anchors are the ear/mouth midpoints; this is the same rule the
    generator's ground truth uses, so on noise-free data an anchor-distance
    threshold reproduces the labels exactly.
    """
    out = []
    for region, name in ANCHOR_SPECS:
        if name == "mouth":
            out.append(mouth_center)
        elif name == "cheekR":
            out.append((np.asarray(pose["REar"]) + mouth_center) / 2.0)
        elif name == "cheekL":
            out.append((np.asarray(pose["LEar"]) + mouth_center) / 2.0)
        else:
            out.append(np.asarray(pose[name], dtype=float))
    return np.stack(out)


def oracle_labels(fingertips: np.ndarray, anchors: np.ndarray,
                  trunk_len: float) -> tuple:
    """(on_head, region flags) from true geometry.

    ``fingertips`` is (k, 2) for all present fingertips; a region flag is
    set when any fingertip is within 0.25 trunk lengths of one of the
    region's anchors.
    """
    flags = {r: False for r in REGIONS}
    if fingertips.size == 0:
        return False, flags
    thr = TOUCH_THRESHOLD_TRUNKS * trunk_len
    d = np.linalg.norm(fingertips[:, None, :] - anchors[None, :, :], axis=2)
    hit = (d <= thr).any(axis=0)
    for idx, (region, _) in enumerate(ANCHOR_SPECS):
        flags[region] = flags[region] or bool(hit[idx])
    return any(flags.values()), flags


# ---------------------------------------------------------------------------
# Per-video kinematics
# ---------------------------------------------------------------------------

class _SinusoidAngle:
    def __init__(self, rng, base_deg, amp_lo=4.0, amp_hi=14.0):
        self.base = math.radians(base_deg)
        self.amps = rng.uniform(math.radians(amp_lo), math.radians(amp_hi), 3)
        self.freqs = rng.uniform(0.08, 0.5, 3)
        self.phases = rng.uniform(0, 2 * math.pi, 3)

    def at(self, t_s: float) -> float:
        return self.base + float(np.sum(
            self.amps * np.sin(2 * math.pi * self.freqs * t_s + self.phases)))


def _schedule_events(rng, n_frames: int, fps: float, rate_per_min: float,
                     region_names, region_probs) -> list:
    """Non-overlapping (start, ramp_in, hold, ramp_out, region, side)."""
    events = []
    if rate_per_min <= 0:
        return events
    mean_event = 12.5 * 2 + 16.5
    idle_mean = max(3.0, fps * 60.0 / rate_per_min - mean_event)
    t = rng.exponential(idle_mean)
    while True:
        ramp_in = int(rng.integers(5, 21))
        hold = int(rng.integers(3, 31))
        ramp_out = int(rng.integers(5, 21))
        start = int(t)
        if start + ramp_in + hold + ramp_out >= n_frames:
            break
        region = region_names[rng.choice(len(region_names), p=region_probs)]
        side = "Left" if rng.random() < 0.5 else "Right"
        events.append((start, ramp_in, hold, ramp_out, region, side))
        t = start + ramp_in + hold + ramp_out + rng.exponential(idle_mean)
    return events


class _VideoKinematics:
    """True (noise-free) geometry of one video."""

    def __init__(self, rng, cfg: SynthConfig, rate_per_min: float):
        self.rng = rng
        self.cfg = cfg
        size = cfg.image_size
        scale = size / 256.0
        self.offset = np.array([rng.uniform(-18, 18) * scale,
                                rng.uniform(-14, 14) * scale])
        self.rotation = math.radians(rng.uniform(-25, 25))
        self.sway_amp = rng.uniform(2.0, 6.0) * scale
        self.sway_freq = rng.uniform(0.05, 0.2)
        self.sway_phase = rng.uniform(0, 2 * math.pi)
        self.scale = scale
        # arm angles measured from straight down, outward positive
        self.upper = {"Right": _SinusoidAngle(rng, rng.uniform(14, 30)),
                      "Left": _SinusoidAngle(rng, rng.uniform(14, 30))}
        self.fore = {"Right": _SinusoidAngle(rng, rng.uniform(4, 40), 6, 18),
                     "Left": _SinusoidAngle(rng, rng.uniform(4, 40), 6, 18)}
        self.events = _schedule_events(
            rng, cfg.frames_per_video, cfg.fps, rate_per_min,
            list(cfg.touch_region_distribution),
            np.array([cfg.touch_region_distribution[r] for r in
                      cfg.touch_region_distribution]))
        self._event_anchor = {}

    def _world(self, base_xy, t_s: float) -> np.ndarray:
        center = np.array(BASE_POINTS["MidHip"])
        sway = self.sway_amp * math.sin(
            2 * math.pi * self.sway_freq * t_s + self.sway_phase)
        p = (np.asarray(base_xy) - center) * self.scale
        p = _rot(self.rotation) @ p
        return p + center * self.scale + self.offset + np.array([sway, 0.0])

    def _event_state(self, frame: int):
        """(event, blend weight) for the active touch event, if any."""
        for ev in self.events:
            start, ramp_in, hold, ramp_out, region, side = ev
            end = start + ramp_in + hold + ramp_out
            if start <= frame < end:
                k = frame - start
                if k < ramp_in:
                    return ev, _smoothstep(k / ramp_in)
                if k < ramp_in + hold:
                    return ev, 1.0
                return ev, _smoothstep((end - frame) / ramp_out)
        return None, 0.0

    def frame_geometry(self, frame: int) -> dict:
        t_s = frame / self.cfg.fps
        pose = {j: self._world(BASE_POINTS[j], t_s)
                for j in BASE_POINTS}
        mouth = self._world(MOUTH_POINT, t_s)
        anchors = np.stack([self._world(a, t_s) for a in ANCHORS_BASE])
        trunk = float(np.linalg.norm(pose["Neck"] - pose["MidHip"]))

        ev, w = self._event_state(frame)
        hands = {}
        for side in ("Right", "Left"):
            sh = pose[f"{side[0]}Shoulder"]
            sign = -1.0 if side == "Right" else 1.0
            a_u = self.upper[side].at(t_s) * sign + self.rotation
            elbow = sh + (UPPER_ARM * self.scale) * np.array(
                [math.sin(a_u), math.cos(a_u)])
            a_f = a_u + self.fore[side].at(t_s) * sign
            wrist = elbow + (FOREARM * self.scale) * np.array(
                [math.sin(a_f), math.cos(a_f)])
            if ev is not None and ev[5] == side and w > 0:
                key = (ev[0], side)
                if key not in self._event_anchor:
                    idxs = [i for i, (r, _) in enumerate(ANCHOR_SPECS)
                            if r == ev[4]]
                    self._event_anchor[key] = idxs[int(
                        self.rng.integers(0, len(idxs)))]
                target = anchors[self._event_anchor[key]]
                approach = target - sh
                u = approach / max(1e-9, np.linalg.norm(approach))
                goal = target - u * FINGER_TIP_LEN[1] * self.scale
                wrist = wrist + w * (goal - wrist)
                elbow = self._solve_elbow(sh, wrist, sign)
            hands[side] = self._hand_points(elbow, wrist)
            pose[f"{side[0]}Elbow"] = elbow
            pose[f"{side[0]}Wrist"] = wrist
        return {"pose": pose, "mouth": mouth, "anchors": anchors,
                "trunk": trunk, "hands": hands, "t_s": t_s}

    def _solve_elbow(self, sh, wrist, sign):
        a = UPPER_ARM * self.scale
        b = FOREARM * self.scale
        v = wrist - sh
        d = float(np.linalg.norm(v))
        if d < 1e-9:
            return sh + np.array([0.0, a])
        u = v / d
        if d >= a + b:
            return sh + u * a
        x = (a * a - b * b + d * d) / (2 * d)
        h2 = a * a - x * x
        h = math.sqrt(max(0.0, h2))
        perp = np.array([-u[1], u[0]]) * sign
        return sh + u * x + perp * h

    def _hand_points(self, elbow, wrist) -> np.ndarray:
        v = wrist - elbow
        n = float(np.linalg.norm(v))
        u = v / n if n > 1e-9 else np.array([0.0, 1.0])
        perp = np.array([-u[1], u[0]])
        pts = np.zeros((21, 2))
        pts[0] = wrist
        for f in range(5):
            tip = FINGER_TIP_LEN[f] * self.scale
            spread = FINGER_SPREAD[f] * self.scale
            for k in range(4):
                frac = (k + 1) / 4.0
                pts[1 + f * 4 + k] = wrist + u * (tip * frac) \
                    + perp * (spread * frac)
        return pts


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _blend(img, y0, y1, x0, x1, alpha, value):
    sub = img[y0:y1, x0:x1]
    sub *= (1.0 - alpha)
    sub += alpha * value


def _draw_disc(img, c, r, value):
    h, w = img.shape
    x0 = max(0, int(c[0] - r - 2)); x1 = min(w, int(c[0] + r + 3))
    y0 = max(0, int(c[1] - r - 2)); y1 = min(h, int(c[1] + r + 3))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d = np.sqrt((xs - c[0]) ** 2 + (ys - c[1]) ** 2)
    _blend(img, y0, y1, x0, x1, np.clip(r + 0.5 - d, 0.0, 1.0), value)


def _draw_capsule(img, p0, p1, r, value):
    h, w = img.shape
    lo = np.minimum(p0, p1) - r - 2
    hi = np.maximum(p0, p1) + r + 3
    x0 = max(0, int(lo[0])); x1 = min(w, int(hi[0]))
    y0 = max(0, int(lo[1])); y1 = min(h, int(hi[1]))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    v = np.asarray(p1) - np.asarray(p0)
    L2 = float(v @ v)
    px = xs - p0[0]
    py = ys - p0[1]
    t = np.clip((px * v[0] + py * v[1]) / max(L2, 1e-9), 0.0, 1.0)
    d = np.sqrt((px - t * v[0]) ** 2 + (py - t * v[1]) ** 2)
    _blend(img, y0, y1, x0, x1, np.clip(r + 0.5 - d, 0.0, 1.0), value)


def _draw_ellipse(img, c, rx, ry, rotation, value):
    h, w = img.shape
    rr = max(rx, ry)
    x0 = max(0, int(c[0] - rr - 2)); x1 = min(w, int(c[0] + rr + 3))
    y0 = max(0, int(c[1] - rr - 2)); y1 = min(h, int(c[1] + rr + 3))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    ct, st = math.cos(-rotation), math.sin(-rotation)
    dx = xs - c[0]
    dy = ys - c[1]
    u = (dx * ct - dy * st) / rx
    v = (dx * st + dy * ct) / ry
    d = (np.sqrt(u * u + v * v) - 1.0) * min(rx, ry)
    _blend(img, y0, y1, x0, x1, np.clip(0.5 - d, 0.0, 1.0), value)


def render_frame(geom: dict, size: int, rng) -> np.ndarray:
    """Anti-aliased schematic infant frame, uint8 grayscale."""
    img = np.tile(np.linspace(30.0, 60.0, size)[:, None], (1, size))
    img += rng.normal(0.0, 3.0, size=(size, size))
    pose = geom["pose"]
    s = size / 256.0
    for a, b in (("Neck", "MidHip"), ("Neck", "RShoulder"),
                 ("Neck", "LShoulder")):
        _draw_capsule(img, pose[a], pose[b], 5.0 * s, 150.0)
    for side in ("R", "L"):
        _draw_capsule(img, pose[f"{side}Shoulder"], pose[f"{side}Elbow"],
                      4.5 * s, 150.0)
        _draw_capsule(img, pose[f"{side}Elbow"], pose[f"{side}Wrist"],
                      4.0 * s, 150.0)
    head_c = (np.asarray(pose["REar"]) + np.asarray(pose["LEar"])) / 2.0
    rot = math.atan2(pose["LEar"][1] - pose["REar"][1],
                     pose["LEar"][0] - pose["REar"][0])
    _draw_ellipse(img, head_c, HEAD_RADII[0] * s, HEAD_RADII[1] * s, rot,
                  200.0)
    for eye in ("REye", "LEye"):
        _draw_disc(img, pose[eye], 4.0 * s, 30.0)
    _draw_disc(img, pose["Nose"], 2.0 * s, 120.0)
    mouth_dir = np.array([math.cos(rot), math.sin(rot)])
    _draw_capsule(img, geom["mouth"] - 7.0 * s * mouth_dir,
                  geom["mouth"] + 7.0 * s * mouth_dir, 2.5 * s, 40.0)
    for joint in ("RElbow", "LElbow", "RWrist", "LWrist", "RShoulder",
                  "LShoulder"):
        _draw_disc(img, pose[joint], 3.5 * s, 170.0)
    for side in ("Right", "Left"):
        for p in geom["hands"][side]:
            _draw_disc(img, p, 1.8 * s, 160.0)
    return np.clip(img, 0.0, 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _emit_point(rng, p, noise, lo_conf_prob=0.02):
    x = float(p[0] + rng.normal(0.0, noise))
    y = float(p[1] + rng.normal(0.0, noise))
    if lo_conf_prob > 0 and rng.random() < lo_conf_prob:
        c = float(rng.uniform(0.01, 0.08))
    else:
        c = float(rng.uniform(0.55, 0.98))
    return [x, y, c]


def _generate_video(cfg: SynthConfig, video_idx: int, rate_per_min: float,
                    out_dir: str, provenance: dict) -> tuple:
    """Write one video's landmark/label/frame files; returns its records."""
    rng = np.random.default_rng([cfg.seed, 1000 + video_idx])
    kin = _VideoKinematics(rng, cfg, rate_per_min)
    video_id = f"s{cfg.seed}v{video_idx:03d}"
    noise = cfg.noise_std_px

    frame_docs = []
    labels = []
    render_dir = None
    if cfg.render_frames:
        render_dir = os.path.join(out_dir, "frames", video_id)
        os.makedirs(render_dir, exist_ok=True)

    for f in range(cfg.frames_per_video):
        geom = kin.frame_geometry(f)
        pose = geom["pose"]
        tips = []
        for side in ("Right", "Left"):
            tips.append(geom["hands"][side][[4, 8, 12, 16, 20]])
        on_head, flags = oracle_labels(np.concatenate(tips), geom["anchors"],
                                       geom["trunk"])
        labels.append(LabelRecord(video_id=video_id, frame_index=f,
                                  on_head=on_head, **flags))

        face_pts = np.stack([kin._world(p, geom["t_s"])
                             for p in FACE_TEMPLATE])
        pose_doc = {}
        for j in JOINTS:
            pose_doc[j] = _emit_point(rng, pose[j], noise)
        face_doc = None
        if rng.random() >= cfg.face_dropout_prob:
            face_doc = {"source_space": "full-frame",
                        "landmarks": [_emit_point(rng, p, noise)
                                      for p in face_pts]}
        hands_doc = {}
        for key, side in (("left", "Left"), ("right", "Right")):
            if rng.random() < cfg.hand_dropout_prob:
                hands_doc[key] = None
                continue
            hands_doc[key] = {
                "detection_confidence": float(rng.uniform(0.5, 0.98)),
                "landmarks": [_emit_point(rng, p, noise, 0.0)
                              for p in geom["hands"][side]]}
        frame_docs.append({
            "frame_index": f,
            "timestamp_s": f / cfg.fps,
            "pose": pose_doc,
            "face": face_doc,
            "hands": hands_doc,
        })
        if render_dir is not None:
            img = render_frame(geom, cfg.image_size, rng)
            write_pgm(img, os.path.join(render_dir, f"frame_{f}.pgm"),
                      comment=f"synthetic {video_id} frame {f}")

    lm_path = os.path.join(out_dir, "landmarks",
                           f"{video_id}.landmarks.jsonl")
    write_landmarks(lm_path, frame_docs, provenance=provenance)
    lb_path = os.path.join(out_dir, "labels", f"{video_id}.labels.csv")
    write_labels(labels, lb_path, provenance=provenance)
    return video_id, labels


def sample_mullen_scores(true_ratios: np.ndarray, coupling: float,
                         rng) -> tuple:
    """(fm_slopes, gm_slopes) with the fine-motor slopes correlated to the
    touch ratios at exactly ``coupling`` in-sample (Gram-Schmidt mixing)."""
    r = np.asarray(true_ratios, dtype=np.float64)
    n = r.shape[0]
    eps = rng.standard_normal(n)
    gm = 1.5 + 0.5 * rng.standard_normal(n)
    if n < 3 or np.std(r) < 1e-12 or coupling <= 0.0:
        return 2.0 + 0.8 * eps, gm
    z = (r - r.mean()) / np.linalg.norm(r - r.mean())
    e = eps - eps.mean()
    e -= (e @ z) * z
    norm = np.linalg.norm(e)
    if norm < 1e-12:
        return 2.0 + 0.8 * eps, gm
    e /= norm
    mixed = coupling * z + math.sqrt(1.0 - coupling ** 2) * e
    return 2.0 + 0.8 * mixed * math.sqrt(n), gm


def generate(cfg: SynthConfig, out_dir: str) -> GroundTruth:
    """Write the dataset (manifest, landmarks, labels, frames, Mullen CSV)."""
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "landmarks"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    provenance = {"format": FORMAT_VERSION, "generator": "facetouch-synth",
                  "seed": cfg.seed}
    rate = cfg.events_per_minute()
    rate_rng = np.random.default_rng([cfg.seed, 7])
    multipliers = rate_rng.uniform(0.35, 1.65, cfg.n_videos)

    video_ids = []
    infant_ids = []
    all_labels = {}
    ratios = []
    manifest_videos = []
    for v in range(cfg.n_videos):
        vid, labels = _generate_video(cfg, v, rate * multipliers[v], out_dir,
                                      provenance)
        infant = f"s{cfg.seed}i{v:03d}"
        video_ids.append(vid)
        infant_ids.append(infant)
        all_labels[vid] = labels
        ratios.append(np.mean([lr.on_head for lr in labels]))
        entry = {"video_id": vid, "infant_id": infant, "fps": cfg.fps,
                 "landmarks_path": f"landmarks/{vid}.landmarks.jsonl",
                 "labels_path": f"labels/{vid}.labels.csv"}
        if cfg.render_frames:
            entry["frames_dir"] = f"frames/{vid}"
        manifest_videos.append(entry)

    ratios = np.array(ratios)
    mull_rng = np.random.default_rng([cfg.seed, 999983])
    fm_slopes, gm_slopes = sample_mullen_scores(ratios, cfg.mullen_coupling,
                                                mull_rng)
    records = []
    for i, infant in enumerate(infant_ids):
        fm_base = float(mull_rng.uniform(8, 12))
        gm_base = float(mull_rng.uniform(10, 14))
        for age in (1.0, 3.0, 5.0):
            records.append(MullenRecord(
                infant_id=infant, visit_age_months=age,
                gm_raw=gm_base + gm_slopes[i] * age,
                fm_raw=fm_base + fm_slopes[i] * age))
    write_mullen(records, os.path.join(out_dir, "mullen.csv"),
                 provenance=provenance)

    write_manifest({"dataset_name": f"synthetic-{cfg.seed}",
                    "videos": manifest_videos},
                   os.path.join(out_dir, "manifest.json"),
                   provenance=provenance)
    prevalence = float(np.mean([lr.on_head for labs in all_labels.values()
                                for lr in labs]))
    return GroundTruth(video_ids=video_ids, infant_ids=infant_ids,
                       labels=all_labels,
                       true_touch_ratio=dict(zip(infant_ids, ratios)),
                       prevalence=prevalence)


# ---------------------------------------------------------------------------
# Mirrored-video helper (flip-consistency checks)
# ---------------------------------------------------------------------------

def mirror_video_mirrored_doc(doc: dict, width: float) -> dict:
    """A landmark-stream frame document as a horizontally flipped camera
    would have produced it: x -> width - x, left/right identities swapped,
    face landmarks re-indexed by the standard 68-point flip permutation."""
    def flip_triple(t):
        return None if t is None else [width - t[0], t[1], t[2]]

    def swap_joint(j):
        if j.startswith("R"):
            return "L" + j[1:]
        if j.startswith("L"):
            return "R" + j[1:]
        return j

    pose = {swap_joint(j): flip_triple(v)
            for j, v in (doc.get("pose") or {}).items()}
    face = None
    if doc.get("face") is not None:
        lms = doc["face"]["landmarks"]
        flipped = [flip_triple(lms[int(src)]) for src in FACE_FLIP_PERM]
        face = {"source_space": doc["face"].get("source_space", "full-frame"),
                "landmarks": flipped}
    hands = {}
    src_hands = doc.get("hands") or {}
    for a, b in (("left", "right"), ("right", "left")):
        h = src_hands.get(b)
        if h is None:
            hands[a] = None
        else:
            hands[a] = {"detection_confidence": h["detection_confidence"],
                        "landmarks": [flip_triple(t)
                                      for t in h["landmarks"]]}
    return {"frame_index": doc["frame_index"],
            "timestamp_s": doc["timestamp_s"],
            "pose": pose, "face": face, "hands": hands}
