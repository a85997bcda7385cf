"""Local HTTP service backing the browser annotation tool.

Serves frame pixels (base64 grayscale), landmark overlays and label rows for
a dataset manifest, and accepts validated label writes.  Writes are guarded
by a version token (the digest of the current label file): a stale token is
rejected with 409 so concurrent tabs can never silently overwrite each
other.  Landmark and frame files are never modified.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .errors import FaceTouchError, MalformedLabels, MissingFile
from .ingest import (DatasetManifest, LabelRecord, load_labels, load_pgm,
                     load_video, write_labels)
from .model import JOINTS, REGIONS

log = logging.getLogger(__name__)

EMPTY_TOKEN = "empty"


def labels_target(entry) -> str:
    if entry.labels_path:
        return entry.labels_path
    return os.path.join(os.path.dirname(entry.landmarks_path),
                        f"{entry.video_id}.labels.csv")


class AnnotationState:
    """Shared state: lazily loaded videos and per-video write locks."""

    def __init__(self, manifest: DatasetManifest, strict_labels: bool = True):
        self.manifest = manifest
        self.strict_labels = strict_labels
        self._videos: dict = {}
        self._locks = {e.video_id: threading.Lock()
                       for e in manifest.videos}
        self._load_lock = threading.Lock()

    def entry(self, video_id: str):
        try:
            return self.manifest.entry(video_id)
        except KeyError:
            return None

    def video(self, video_id: str):
        with self._load_lock:
            if video_id not in self._videos:
                self._videos[video_id] = load_video(self.entry(video_id))
            return self._videos[video_id]

    def label_token(self, video_id: str) -> str:
        path = labels_target(self.entry(video_id))
        if not os.path.isfile(path):
            return EMPTY_TOKEN
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()[:16]

    def read_labels(self, video_id: str) -> list:
        path = labels_target(self.entry(video_id))
        if not os.path.isfile(path):
            return []
        return load_labels(path, strict=self.strict_labels)

    def write_labels(self, video_id: str, records: list,
                     token: str) -> str:
        with self._locks[video_id]:
            current = self.label_token(video_id)
            if token != current:
                raise StaleToken(current)
            path = labels_target(self.entry(video_id))
            write_labels(records, path)
            return self.label_token(video_id)


class StaleToken(Exception):
    def __init__(self, current):
        super().__init__("version token is stale")
        self.current = current


def _kp_doc(kp):
    return [kp.x, kp.y, kp.confidence] if kp.present else None


def _landmark_doc(video) -> dict:
    frames = []
    for frame in video.frames:
        hands = {}
        for key, side in (("left", "Left"), ("right", "Right")):
            hand = frame.hand(side)
            hands[key] = None if hand is None else {
                "detection_confidence": hand.detection_confidence,
                "landmarks": [_kp_doc(k) for k in hand.landmarks]}
        frames.append({
            "frame_index": frame.frame_index,
            "pose": {j: _kp_doc(frame.pose.get(j)) for j in JOINTS},
            "face": None if frame.face is None
            else [_kp_doc(k) for k in frame.face.landmarks],
            "hands": hands,
        })
    return {"video_id": video.video_id, "fps": video.fps, "frames": frames}


def _parse_label_payload(video_id: str, payload: dict, n_frames: int,
                         frame_indices: set) -> list:
    if not isinstance(payload, dict) or "labels" not in payload:
        raise MalformedLabels("payload must carry a 'labels' list")
    records = []
    for row in payload["labels"]:
        try:
            idx = int(row["frame_index"])
            on_head = bool(row["on_head"])
            flags = {r: bool(row.get(r, False)) for r in REGIONS}
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLabels(f"bad label row {row!r}") from exc
        if idx not in frame_indices:
            raise FrameOutOfRange(idx)
        if not on_head and any(flags.values()):
            raise MalformedLabels(
                f"frame {idx}: region flag set while on_head is false")
        records.append(LabelRecord(video_id=video_id, frame_index=idx,
                                   on_head=on_head, **flags))
    records.sort(key=lambda r: r.frame_index)
    if len({r.frame_index for r in records}) != len(records):
        raise MalformedLabels("duplicate frame_index in payload")
    return records


class FrameOutOfRange(Exception):
    pass


class AnnotationHandler(BaseHTTPRequestHandler):
    state: AnnotationState = None
    ui_dir: Optional[str] = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send_json(self, code: int, doc) -> None:
        body = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, category: str, message: str) -> None:
        self._send_json(code, {"error": category, "message": message})

    def do_GET(self):
        try:
            self._route_get()
        except BrokenPipeError:
            pass
        except FaceTouchError as exc:
            self._error(500, type(exc).__name__, str(exc))

    def do_POST(self):
        try:
            self._route_post()
        except BrokenPipeError:
            pass
        except FaceTouchError as exc:
            self._error(500, type(exc).__name__, str(exc))

    # --- routing -----------------------------------------------------------

    def _route_get(self):
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        if parts[:2] == ["api", "videos"]:
            if len(parts) == 2:
                return self._get_videos()
            video_id = parts[2]
            entry = self.state.entry(video_id)
            if entry is None:
                return self._error(404, "UnknownVideo", video_id)
            if len(parts) == 4 and parts[3] == "landmarks":
                return self._send_json(
                    200, _landmark_doc(self.state.video(video_id)))
            if len(parts) == 4 and parts[3] == "labels":
                return self._get_labels(video_id)
            if len(parts) == 5 and parts[3] == "frames":
                return self._get_frame(video_id, parts[4])
        elif self.ui_dir is not None:
            return self._serve_static(parts)
        self._error(404, "NotFound", self.path)

    def _route_post(self):
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        if len(parts) == 4 and parts[:2] == ["api", "videos"] \
                and parts[3] == "labels":
            return self._post_labels(parts[2])
        self._error(404, "NotFound", self.path)

    # --- handlers ----------------------------------------------------------

    def _get_videos(self):
        videos = []
        for entry in self.state.manifest.videos:
            video = self.state.video(entry.video_id)
            videos.append({
                "video_id": entry.video_id,
                "infant_id": entry.infant_id,
                "fps": entry.fps,
                "frame_count": len(video),
                "frame_indices": [f.frame_index for f in video.frames],
                "has_frames": any(f.image_ref for f in video.frames),
            })
        self._send_json(200, {"videos": videos})

    def _get_frame(self, video_id: str, index_str: str):
        try:
            index = int(index_str)
        except ValueError:
            return self._error(404, "UnknownFrame", index_str)
        video = self.state.video(video_id)
        frame = next((f for f in video.frames if f.frame_index == index),
                     None)
        if frame is None:
            return self._error(404, "UnknownFrame",
                               f"{video_id}/{index_str}")
        if frame.image_ref is None:
            return self._error(404, "NoImage",
                               f"{video_id} frame {index} has no image")
        try:
            img = load_pgm(frame.image_ref)
        except MissingFile:
            return self._error(404, "NoImage", frame.image_ref)
        self._send_json(200, {
            "video_id": video_id,
            "frame_index": index,
            "width": int(img.shape[1]),
            "height": int(img.shape[0]),
            "pixels_base64": base64.b64encode(img.tobytes()).decode(),
        })

    def _get_labels(self, video_id: str):
        records = self.state.read_labels(video_id)
        self._send_json(200, {
            "video_id": video_id,
            "version": self.state.label_token(video_id),
            "labels": [{"frame_index": r.frame_index,
                        "on_head": bool(r.on_head),
                        **{reg: bool(getattr(r, reg)) for reg in REGIONS}}
                       for r in records],
        })

    def _post_labels(self, video_id: str):
        entry = self.state.entry(video_id)
        if entry is None:
            return self._error(404, "UnknownVideo", video_id)
        length = int(self.headers.get("Content-Length", 0))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError as exc:
            return self._error(400, "BadJson", str(exc))
        token = payload.get("version", EMPTY_TOKEN)
        video = self.state.video(video_id)
        frame_indices = {f.frame_index for f in video.frames}
        try:
            records = _parse_label_payload(video_id, payload,
                                           len(video), frame_indices)
        except FrameOutOfRange as exc:
            return self._error(404, "UnknownFrame", str(exc))
        except MalformedLabels as exc:
            return self._error(422, "InvariantViolation", str(exc))
        try:
            new_token = self.state.write_labels(video_id, records, token)
        except StaleToken as exc:
            return self._send_json(409, {
                "error": "VersionConflict",
                "message": "label file changed since this session loaded it",
                "current_version": exc.current})
        self._send_json(200, {"video_id": video_id, "version": new_token,
                              "saved": len(records)})

    def _serve_static(self, parts: list):
        rel = "/".join(parts) if parts else "index.html"
        path = os.path.normpath(os.path.join(self.ui_dir, rel))
        if not path.startswith(os.path.abspath(self.ui_dir) + os.sep) \
                and path != os.path.abspath(self.ui_dir):
            return self._error(404, "NotFound", rel)
        if os.path.isdir(path):
            path = os.path.join(path, "index.html")
        if not os.path.isfile(path):
            return self._error(404, "NotFound", rel)
        ctype = {"html": "text/html", "js": "text/javascript",
                 "css": "text/css", "map": "application/json"}.get(
            path.rsplit(".", 1)[-1], "application/octet-stream")
        with open(path, "rb") as fh:
            body = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(manifest: DatasetManifest, port: int,
                ui_dir: Optional[str] = None,
                strict_labels: bool = True) -> ThreadingHTTPServer:
    handler = type("BoundAnnotationHandler", (AnnotationHandler,), {
        "state": AnnotationState(manifest, strict_labels=strict_labels),
        "ui_dir": os.path.abspath(ui_dir) if ui_dir else None,
    })
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(manifest: DatasetManifest, port: int,
                  ui_dir: Optional[str] = None) -> None:
    httpd = make_server(manifest, port, ui_dir=ui_dir)
    log.info("annotation server on http://127.0.0.1:%d", port)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
