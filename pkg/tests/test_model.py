import numpy as np
import pytest
from hypothesis import given, strategies as st

from facetouch.model import (FeatureManifest, Family, Keypoint2D, LabelRecord,
                             ManifestEntry, build_manifest, hog_flip_permutation,
                             hog_length)


def expected_non_hog_count():
    # independent enumeration of the inventory
    body = 2 * 6 * 3
    angles = 4
    hand = 2 * 5 * 3 * 3
    hand_conf = 2
    temporal = 4 * 3 * 3
    face_conf = 2
    return body + angles + hand + hand_conf + temporal + face_conf


def expected_hog_count():
    def blocks(w, h):
        return ((w - 16) // 8 + 1) * ((h - 16) // 8 + 1)
    return (blocks(32, 32) + 2 * blocks(32, 16)) * 36


def test_manifest_sizes():
    assert expected_non_hog_count() == 170
    assert len(build_manifest(False)) == 170
    assert len(build_manifest(True)) == 170 + expected_hog_count() == 710


def test_manifest_deterministic():
    assert build_manifest(True).names == build_manifest(True).names
    assert build_manifest(False).names == build_manifest(True).names[:170]


def test_mirror_example_from_inventory():
    m = build_manifest(False)
    i = m.index_of("dist_x_wristL_eyeR")
    assert m.entries[i].signed_x
    assert m.names[m.mirror_index(i)] == "dist_x_wristR_eyeL"
    j = m.index_of("dist_y_wristL_nose")
    assert not m.entries[j].signed_x
    assert m.names[m.mirror_index(j)] == "dist_y_wristR_nose"


def test_mirror_involution():
    m = build_manifest(True)
    perm = m.mirror_permutation()
    assert (perm[perm] == np.arange(len(m))).all()
    # mirrored entries carry the same sign flag (negation is well defined)
    signs = m.sign_flips()
    assert (signs[perm] == signs).all()


def test_all_families_present():
    m = build_manifest(True)
    fams = {e.family for e in m.entries}
    assert fams == set(Family)


def test_hog_lengths_match_block_formula():
    assert hog_length(32, 32) == 324
    assert hog_length(32, 16) == 108


def test_hog_flip_permutation_is_involution():
    for w, h in ((32, 32), (32, 16)):
        p = hog_flip_permutation(w, h)
        assert (p[p] == np.arange(hog_length(w, h))).all()


@given(st.integers(min_value=0, max_value=709))
def test_mirror_maps_within_family(i):
    m = build_manifest(True)
    j = m.mirror_index(i)
    assert m.entries[i].family == m.entries[j].family


def test_keypoint_confidence_validation():
    with pytest.raises(ValueError):
        Keypoint2D(0, 0, 1.5, present=True)
    Keypoint2D(0, 0, 1.5, present=False)  # ignored when absent


def test_label_record_invariant():
    with pytest.raises(ValueError):
        LabelRecord("v", 0, on_head=False, nose=True)
    rec = LabelRecord("v", 0, on_head=True, nose=True)
    assert rec.as_row() == (1, 0, 0, 1, 0, 0)


def test_manifest_rejects_asymmetric_partner():
    e0 = ManifestEntry("a", Family.ANGLE, False, 1)
    e1 = ManifestEntry("b", Family.ANGLE, False, None)
    with pytest.raises(ValueError):
        FeatureManifest((e0, e1))
