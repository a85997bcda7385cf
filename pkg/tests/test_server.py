import base64
import json
import os
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from facetouch.ingest import load_labels, load_manifest
from facetouch.server import make_server


@pytest.fixture(scope="module")
def server(tmp_path_factory):
    from facetouch.synth import SynthConfig, generate
    out = tmp_path_factory.mktemp("annot")
    generate(SynthConfig(n_videos=2, frames_per_video=10, seed=41,
                         render_frames=True), str(out))
    manifest = load_manifest(os.path.join(str(out), "manifest.json"))
    httpd = make_server(manifest, 0)
    port = httpd.server_address[1]
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield {"port": port, "dir": str(out), "manifest": manifest}
    httpd.shutdown()


def get(port, path):
    with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}") as r:
        return r.status, json.loads(r.read())


def post(port, path, doc):
    req = urllib.request.Request(
        f"http://127.0.0.1:{port}{path}", data=json.dumps(doc).encode(),
        headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def get_err(port, path):
    try:
        with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}") as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def test_video_listing(server):
    status, doc = get(server["port"], "/api/videos")
    assert status == 200
    assert len(doc["videos"]) == 2
    v = doc["videos"][0]
    assert v["frame_count"] == 10
    assert v["has_frames"] is True


def test_frame_payload_decodes(server):
    vid = server["manifest"].videos[0].video_id
    status, doc = get(server["port"], f"/api/videos/{vid}/frames/0")
    assert status == 200
    pixels = base64.b64decode(doc["pixels_base64"])
    assert len(pixels) == doc["width"] * doc["height"]
    img = np.frombuffer(pixels, dtype=np.uint8)
    assert img.std() > 0


def test_frame_out_of_range_404(server):
    vid = server["manifest"].videos[0].video_id
    code, doc = get_err(server["port"], f"/api/videos/{vid}/frames/999")
    assert code == 404


def test_unknown_video_404(server):
    code, doc = get_err(server["port"], "/api/videos/nope/labels")
    assert code == 404


def test_landmarks_overlay(server):
    vid = server["manifest"].videos[0].video_id
    status, doc = get(server["port"], f"/api/videos/{vid}/landmarks")
    assert status == 200
    assert len(doc["frames"]) == 10
    frame = doc["frames"][0]
    assert "Nose" in frame["pose"]


def test_invariant_violation_422(server):
    vid = server["manifest"].videos[0].video_id
    _, current = get(server["port"], f"/api/videos/{vid}/labels")
    code, doc = post(server["port"], f"/api/videos/{vid}/labels",
                     {"version": current["version"],
                      "labels": [{"frame_index": 0, "on_head": False,
                                  "nose": True}]})
    assert code == 422
    assert doc["error"] == "InvariantViolation"


def test_round_trip_and_conflict(server):
    vid = server["manifest"].videos[1].video_id
    _, current = get(server["port"], f"/api/videos/{vid}/labels")
    payload = {"version": current["version"],
               "labels": [{"frame_index": i, "on_head": i % 2 == 0,
                           "mouth": i % 2 == 0} for i in range(10)]}
    code, saved = post(server["port"], f"/api/videos/{vid}/labels", payload)
    assert code == 200 and saved["saved"] == 10

    # stale token rejected, nothing overwritten
    code, doc = post(server["port"], f"/api/videos/{vid}/labels",
                     {"version": current["version"],
                      "labels": [{"frame_index": 0, "on_head": False}]})
    assert code == 409
    assert doc["error"] == "VersionConflict"

    _, back = get(server["port"], f"/api/videos/{vid}/labels")
    assert back["version"] == saved["version"]
    for sent, got in zip(payload["labels"], back["labels"]):
        assert got["frame_index"] == sent["frame_index"]
        assert got["on_head"] == sent["on_head"]
        assert got["mouth"] == sent.get("mouth", False)
        assert not any(got[r] for r in ("eyes", "ears", "nose", "cheeks"))
    # and the on-disk file parses through the normal loader
    entry = server["manifest"].entry(vid)
    records = load_labels(entry.labels_path)
    assert len(records) == 10
    assert records[0].on_head and records[0].mouth


def test_landmark_files_never_touched(server):
    entry = server["manifest"].videos[0].video_id
    lm_path = server["manifest"].entry(entry).landmarks_path
    before = open(lm_path, "rb").read()
    _, current = get(server["port"], f"/api/videos/{entry}/labels")
    post(server["port"], f"/api/videos/{entry}/labels",
         {"version": current["version"],
          "labels": [{"frame_index": 0, "on_head": True, "eyes": True}]})
    assert open(lm_path, "rb").read() == before
